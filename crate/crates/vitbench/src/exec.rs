use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use vitbench_core::exec::Executor;

pub const WORKERS_ENV: &str = "VITBENCH_WORKERS";

/// Bounded worker pool. Results always come back in job order, so reports
/// do not depend on scheduling.
pub struct Pool {
    pool: ThreadPool,
}

impl Pool {
    pub fn new(workers: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("vitbench-worker-{i}"))
            .build()
            .expect("failed to start worker threads");
        Pool { pool }
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<J: Sync, R: Send, F: Fn(&J) -> R + Sync>(&self, jobs: &[J], f: F) -> Vec<R> {
        self.pool.install(|| jobs.par_iter().map(&f).collect())
    }
}

/// `--workers`, then `VITBENCH_WORKERS`, then the config value, then the
/// number of available cores.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .or(config)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}
