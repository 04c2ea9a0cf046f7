//! Data-parallel loops over disjoint output chunks.
//!
//! Every chunk is computed by exactly one closure call in a fixed internal
//! order, so the result is the same with or without the `std` feature and for
//! any rayon pool size.

#[cfg(feature = "std")]
use rayon::prelude::*;

pub(crate) fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "std")]
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "std"))]
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}
