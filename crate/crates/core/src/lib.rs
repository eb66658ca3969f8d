//! Counterfactual verification of GNN explanations.
//!
//! A trained GCN is explained per target node by an edge mask. Low-rank
//! Boolean reconstructions of the graph give alternative explanations,
//! which train a small factor graph. Belief propagation on that factor graph
//! scores how much each explanation relation lowers uncertainty about the
//! target's prediction, and a McNemar test checks whether removing the
//! top-scored relations changes the classifier more than the baseline
//! ranking does.

pub mod boolfact;
pub mod error;
pub mod explainer;
pub mod gcn;
pub mod graph;
pub mod par;
pub mod pgm;
pub mod verify;

pub use error::{Error, Result};
pub use par::Execution;
