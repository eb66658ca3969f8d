//! Execution-mode switch for the data-parallel loops in the pipeline.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] dispatches
//! through rayon; without it both modes run sequentially. Output order always
//! matches input order, so results do not depend on the mode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Number of workers a parallel map would use.
    pub fn workers(self) -> usize {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => rayon::current_num_threads(),
            _ => 1,
        }
    }
}
