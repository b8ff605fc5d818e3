//! Replica-parallel map with deterministic output order.
//!
//! The worker count defaults to the number of cores and is overridden by the
//! `FIFM_WORKERS` environment variable. Results are collected in replica order
//! and every reduction happens afterwards, so output does not depend on the
//! worker count.

/// Number of workers requested through `FIFM_WORKERS`, if set.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("FIFM_WORKERS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
    match workers_from_env() {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
