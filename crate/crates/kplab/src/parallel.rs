//! Thread-pool backed [`Runner`].

use kplab_core::exec::Runner;
use rayon::prelude::*;

/// Environment variable that sets the worker count.
pub const THREADS_ENV: &str = "KP_THREADS";

/// Runs realizations on a dedicated rayon pool. Results come back in index
/// order, so reductions are identical for any worker count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("failed to start worker threads");
        Self { pool }
    }

    /// Worker count from `KP_THREADS`, else the number of CPUs.
    pub fn from_env() -> Self {
        let n = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|n| *n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Self::new(n)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Runner for Parallel {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n as u64).into_par_iter().map(&f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kplab_core::exec::Sequential;

    #[test]
    fn matches_sequential_order() {
        let f = |i: u64| (i * 2654435761) % 1009;
        assert_eq!(Parallel::new(3).run(500, f), Sequential.run(500, f));
    }
}
