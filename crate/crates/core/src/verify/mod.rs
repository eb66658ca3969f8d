//! Retrain-and-compare verification of relation rankings.

pub mod mcnemar;
pub mod pipeline;
pub mod report;

pub use mcnemar::{mcnemar_from_counts, mcnemar_test, McNemarResult, McNemarVariant};
pub use pipeline::{
    reduced_graph, run_verification, run_verification_with, ClassResult, DatasetSpec, PipelineConfig,
    RemovalRecord, Scorer, TargetRecord, VerificationBundle,
};
pub use report::{emit_report, write_uncertainty_csv};
