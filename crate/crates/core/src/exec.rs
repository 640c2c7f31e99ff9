//! Job execution.
//!
//! Attribution trials, leave-one-out retrains and sweep cells are independent
//! jobs. The core only needs a way to run `n` indexed jobs and get the results
//! back in index order; how that happens (inline, thread pool) is decided by
//! the caller. Reductions always consume results in index order, so outputs do
//! not depend on scheduling.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Runs `job(0..jobs)` and returns the results ordered by job index.
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs every job inline on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..jobs).map(job).collect()
    }
}

impl<E: Executor> Executor for &E {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (**self).run(jobs, job)
    }
}
