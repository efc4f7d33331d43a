//! Per-image work on a bounded worker pool, with failures collected rather
//! than aborting the batch.

use anyhow::{Context, Result};
use rayon::prelude::*;
use rayon::ThreadPool;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub image_id: u64,
    pub message: String,
}

/// What a subcommand hands back to `main` when it ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub processed: usize,
    pub failures: Vec<ItemFailure>,
}

/// `jobs == 0` sizes the pool to the available cores.
pub fn build_pool(jobs: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")
}

/// Runs `work` for every id. Successes come back in id order alongside the
/// failures, so results never depend on scheduling.
pub fn run_items<T, F>(pool: &ThreadPool, ids: &[u64], work: F) -> (Vec<(u64, T)>, Outcome)
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let results: Vec<(u64, Result<T>)> = pool.install(|| ids.par_iter().map(|&id| (id, work(id))).collect());
    let mut done = Vec::with_capacity(results.len());
    let mut outcome = Outcome::default();
    for (id, r) in results {
        match r {
            Ok(v) => {
                outcome.processed += 1;
                done.push((id, v));
            }
            Err(e) => outcome.failures.push(ItemFailure {
                image_id: id,
                message: format!("{e:#}"),
            }),
        }
    }
    (done, outcome)
}
