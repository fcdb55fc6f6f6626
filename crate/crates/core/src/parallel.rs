//! Fixed-size chunking of batch work.
//!
//! With the `parallel` feature the chunks run on the rayon pool, otherwise
//! in order on the calling thread. Results come back in chunk order either
//! way, so any reduction over them is identical across thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to consecutive chunks of at most `chunk` items.
pub fn map_chunks<I, R, F>(items: &[I], chunk: usize, f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&[I]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk).map(f).collect()
    }
}

/// Chunk size that splits `len` items into `parts` nearly equal pieces.
pub fn chunk_size(len: usize, parts: usize) -> usize {
    len.div_ceil(parts.max(1)).max(1)
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Worker threads available to [`map_chunks`].
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Sizes the global worker pool; `0` keeps rayon's default. Only the first
/// call in a process takes effect.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
    }
}
