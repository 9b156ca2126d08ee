//! Execution policy: data-parallel maps with a sequential fallback.
//!
//! All parallelism in this crate flows through the two helpers below. Each
//! one computes an independent value per index and collects the results in
//! index order, so the output is bit-identical whether the work ran on one
//! thread or many. That property is what lets the test suite assert exact
//! reproducibility across `--serial` and parallel runs.
//!
//! Parallel execution requires the `parallel` cargo feature (on by default)
//! and can additionally be switched off at runtime with [`set_parallel`],
//! which is what the CLI's `--serial` flag and the benchmark suite use.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable data-parallel execution process-wide.
///
/// A no-op when the crate was built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

/// True when work will actually be distributed across threads.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Map `f` over `0..n` and collect the results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if PARALLEL.load(Ordering::Relaxed) {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]. Results stay in index order; if any
/// call fails, one of the errors is returned (which one is not specified,
/// matching sequential short-circuiting closely enough for our callers, all
/// of whom treat any error as fatal).
pub fn try_map_indexed<U, F>(n: usize, f: F) -> Result<Vec<U>>
where
    U: Send,
    F: Fn(usize) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if PARALLEL.load(Ordering::Relaxed) {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
