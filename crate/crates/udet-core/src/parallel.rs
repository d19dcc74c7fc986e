//! Internal data-parallelism control.
//!
//! Kernels parallelize over disjoint output regions only, so results are
//! bitwise independent of the thread count. `UDET_THREADS` caps the pool
//! size (1 = fully sequential).

use std::sync::OnceLock;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n: usize = std::env::var("UDET_THREADS").ok().and_then(|v| v.parse().ok())?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
    })
    .as_ref()
}

/// Run `f` inside the configured pool (or the default rayon pool).
pub fn scoped<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match pool() {
        Some(p) => p.install(f),
        None => f(),
    }
}
