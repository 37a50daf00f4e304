//! Execution policy for the data-parallel kernels.
//!
//! With the `parallel` feature (default) `Exec::Parallel` runs on the rayon
//! pool; without it every kernel runs sequentially. Work is always split
//! into fixed-size chunks whose results are merged in index order, so both
//! policies produce bit-identical results regardless of thread count.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `f(i)` for every `i in 0..n`, in index order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len`-sized chunks
/// of `data` and returns the per-chunk results in order.
pub fn map_chunks<S, T, F>(exec: Exec, data: &[S], chunk_len: usize, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(usize, &[S]) -> T + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && data.len() > chunk_len {
        use rayon::prelude::*;
        return data
            .par_chunks(chunk_len)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect();
    }
    let _ = exec;
    data.chunks(chunk_len).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Mutable counterpart of [`map_chunks`] with no result.
pub fn for_each_chunk_mut<S, F>(exec: Exec, data: &mut [S], chunk_len: usize, f: F)
where
    S: Send,
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && data.len() > chunk_len {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}
