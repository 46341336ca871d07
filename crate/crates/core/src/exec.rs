//! Parallel execution helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled (the default), data-parallel loops run
//! on rayon; without it, or when the thread cap is set to 1, they run
//! sequentially. Every helper produces output in input order, so results are
//! bit-identical regardless of mode or worker count.

use std::sync::atomic::{AtomicUsize, Ordering};

/// 0 means "no cap" (use the rayon default); 1 forces the sequential path.
static THREAD_CAP: AtomicUsize = AtomicUsize::new(0);

/// Cap the number of workers. `0` restores the default. A cap of 1 routes
/// all helpers through the plain sequential implementations.
pub fn set_thread_cap(n: usize) {
    THREAD_CAP.store(n, Ordering::SeqCst);
}

pub fn thread_cap() -> usize {
    THREAD_CAP.load(Ordering::SeqCst)
}

fn use_parallel() -> bool {
    cfg!(feature = "parallel") && thread_cap() != 1
}

/// Map over a slice, collecting results in input order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if use_parallel() {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Map over an index range, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if use_parallel() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Run `f` on each chunk of `data`, passing the chunk's starting offset.
/// Chunk boundaries are fixed by `chunk_len`, not by worker count.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    if use_parallel() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i * chunk_len, chunk));
    } else {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i * chunk_len, chunk));
    }
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, chunk)| f(i * chunk_len, chunk));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let out = map_range(100, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_and_capped_agree() {
        let items: Vec<f64> = (0..500).map(|i| i as f64 * 0.31).collect();
        set_thread_cap(1);
        let seq = map_collect(&items, |x| x.sin() * x.cos());
        set_thread_cap(0);
        let par = map_collect(&items, |x| x.sin() * x.cos());
        assert_eq!(seq, par);
    }
}
