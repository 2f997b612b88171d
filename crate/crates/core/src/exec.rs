//! Data-parallel map with a sequential fallback.
//!
//! Results always come back in index order, so any reduction over them is
//! deterministic regardless of the number of worker threads.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether work actually fans out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `(0..n).map(f)` collected in index order.
    pub fn map<O, F>(self, n: usize, f: F) -> Vec<O>
    where
        O: Send,
        F: Fn(usize) -> O + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`Execution::map`] for fallible work; the first error in index
    /// order wins.
    pub fn try_map<O, E, F>(self, n: usize, f: F) -> Result<Vec<O>, E>
    where
        O: Send,
        E: Send,
        F: Fn(usize) -> Result<O, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}
