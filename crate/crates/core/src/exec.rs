//! Pluggable execution of independent realizations.

use alloc::vec::Vec;

/// Evaluates `f(0), …, f(n − 1)` and returns the results in index order.
///
/// Implementations may run tasks concurrently; callers reduce the returned
/// vector sequentially, so results never depend on the worker count.
pub trait Runner: Sync {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send;
}

/// Runs every task on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        (0..n as u64).map(f).collect()
    }
}
