//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel path in this crate goes through [`map_indices`], which
//! collects results in index order. Reductions are always performed
//! sequentially over the collected values, so output is bitwise identical
//! regardless of the thread count or whether the `parallel` feature is on.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// behaves exactly like `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indices<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Whether this build can run loops on more than one thread.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` with parallel loops bounded to `threads` workers.
///
/// `None` uses the global pool. Without the `parallel` feature the limit is
/// ignored.
pub fn with_thread_limit<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

/// Reads the `CUSA_THREADS` environment variable.
pub fn thread_limit_from_env() -> Option<usize> {
    std::env::var("CUSA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
