//! Batches of independent episodes. Each episode owns its RNG streams, so
//! the order of execution never changes a result.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::sim::{episode_seed, run_episode, EpisodeResult, TraceMode};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MMPIH_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Execution {
    pub fn default_for_build() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

fn one(cfg: &Config, index: usize, trace: TraceMode) -> Result<EpisodeResult> {
    run_episode(cfg, episode_seed(cfg.run.seed, index as u64), trace)
}

pub fn run_batch_sequential(cfg: &Config, trace: TraceMode) -> Result<Vec<EpisodeResult>> {
    (0..cfg.run.episodes).map(|i| one(cfg, i, trace)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(cfg: &Config, trace: TraceMode) -> Result<Vec<EpisodeResult>> {
    use rayon::prelude::*;
    let work = || -> Result<Vec<EpisodeResult>> {
        (0..cfg.run.episodes)
            .into_par_iter()
            .map(|i| one(cfg, i, trace))
            .collect()
    };
    match thread_cap()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::ConfigInvalid(format!("{THREADS_ENV}: {e}")))?
            .install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch_parallel(cfg: &Config, trace: TraceMode) -> Result<Vec<EpisodeResult>> {
    run_batch_sequential(cfg, trace)
}

pub fn run_batch(cfg: &Config, trace: TraceMode, execution: Execution) -> Result<Vec<EpisodeResult>> {
    cfg.validate()?;
    match execution {
        Execution::Sequential => run_batch_sequential(cfg, trace),
        Execution::Parallel => run_batch_parallel(cfg, trace),
    }
}

/// Positive integer from `MMPIH_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::ConfigInvalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}
