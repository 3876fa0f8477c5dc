//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled (default) the helpers dispatch to
//! rayon unless parallelism has been switched off at runtime with
//! [`set_parallel`]; without the feature they always run sequentially.
//! The runtime switch exists so benchmarks can compare both execution modes
//! in a single binary and so a CLI `--threads 1` means what it says.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable data-parallel execution at runtime.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

/// True when the `parallel` feature is compiled in and not disabled at runtime.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Map over a slice, in parallel when enabled.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    items.iter().map(f).collect()
}

/// Map over an index range, in parallel when enabled.
pub fn par_map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(&f).collect();
    }
    (0..n).map(f).collect()
}
