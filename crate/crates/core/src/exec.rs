//! Data-parallel map helpers. With the `parallel` feature these run on the
//! rayon pool; without it they are plain sequential loops with the same output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `f(i)` for every `i` in `0..len`, collected in index order. Work is
/// split into pieces of at least `min_chunk` indices.
pub fn map_range<R, F>(len: usize, min_chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().with_min_len(min_chunk.max(1)).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = min_chunk;
        (0..len).map(f).collect()
    }
}

/// `f(x)` for every item, collected in slice order.
pub fn map_slice<T, R, F>(items: &[T], min_chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().with_min_len(min_chunk.max(1)).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = min_chunk;
        items.iter().map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
