//! Scheduling of independent training runs.
//!
//! Grid cells, folds and replications are independent. The core only needs
//! an order-preserving map over jobs; the `vitbench` crate supplies a
//! multi-threaded implementation.

use alloc::vec::Vec;

pub trait Executor {
    /// Apply `f` to every job and return results in job order.
    fn map<J, R, F>(&self, jobs: &[J], f: F) -> Vec<R>
    where
        J: Sync,
        R: Send,
        F: Fn(&J) -> R + Sync;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<J, R, F>(&self, jobs: &[J], f: F) -> Vec<R>
    where
        J: Sync,
        R: Send,
        F: Fn(&J) -> R + Sync,
    {
        jobs.iter().map(f).collect()
    }
}
