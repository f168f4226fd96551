//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the map runs on the rayon pool when the caller
//! asks for it; otherwise it is a plain iterator. Output order always matches
//! input order, so results do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when `parallel` is set and the feature is on.
pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Whether parallel execution was compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
