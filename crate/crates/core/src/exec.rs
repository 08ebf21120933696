//! Execution helpers: data-parallel when the `parallel` feature is enabled
//! (the default), plain sequential loops otherwise. Results are identical
//! either way — callers only hand in pure functions.

/// Caps the global thread pool from `OPINION_LATTICE_THREADS`.
///
/// Call once at startup; later calls are no-ops once a pool exists. Without
/// the `parallel` feature (or without the variable) this does nothing.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(raw) = std::env::var("OPINION_LATTICE_THREADS") {
            if let Ok(threads) = raw.trim().parse::<usize>() {
                if threads >= 1 {
                    // Errors mean a pool was already built; fine to ignore.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build_global();
                }
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn try_map_indexed<U, E, F>(count: usize, f: F) -> Result<Vec<U>, E>
where
    U: Send,
    E: Send,
    F: Fn(usize) -> Result<U, E> + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map_indexed<U, E, F>(count: usize, f: F) -> Result<Vec<U>, E>
where
    F: Fn(usize) -> Result<U, E>,
{
    (0..count).map(f).collect()
}

/// First index (in order) whose mapping returns `Some`, with the value.
/// The parallel version still honors enumeration order, so results are
/// deterministic; later work is cancelled once a winner is known.
#[cfg(feature = "parallel")]
pub(crate) fn find_map_first<U, F>(count: usize, f: F) -> Option<U>
where
    U: Send,
    F: Fn(usize) -> Option<U> + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().find_map_first(f)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn find_map_first<U, F>(count: usize, f: F) -> Option<U>
where
    F: Fn(usize) -> Option<U>,
{
    (0..count).find_map(f)
}
