//! Bounded data-parallel map with a sequential fallback.

/// Maps `f` over `items`, preserving order, on at most `parallelism` threads.
/// With `parallelism <= 1` or without the `parallel` feature the map runs on
/// the calling thread.
pub fn map_bounded<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallelism > 1 && items.len() > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
            Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => log::warn!("thread pool unavailable ({e}); running sequentially"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    items.iter().map(f).collect()
}
