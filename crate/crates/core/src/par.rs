//! Execution policy for the data-parallel inner loops.
//!
//! Every per-pixel or per-coefficient loop in the crate goes through [`Exec`].
//! Without the `parallel` feature, [`Exec::Parallel`] runs sequentially.
//! Results do not depend on the policy: work is split into disjoint output
//! chunks and every chunk is computed by the same sequential code.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Calls `f(chunk_index, chunk)` for each `chunk`-sized piece of `data`.
    pub fn for_each_chunk<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }

    /// Walks two buffers in lock-step chunks and sums the `usize` each call returns.
    pub fn zip_chunks_sum<A, B, F>(
        self,
        a: &mut [A],
        chunk_a: usize,
        b: &mut [B],
        chunk_b: usize,
        f: F,
    ) -> usize
    where
        A: Send,
        B: Send,
        F: Fn(usize, &mut [A], &mut [B]) -> usize + Sync + Send,
    {
        let (chunk_a, chunk_b) = (chunk_a.max(1), chunk_b.max(1));
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return a
                .par_chunks_mut(chunk_a)
                .zip(b.par_chunks_mut(chunk_b))
                .enumerate()
                .map(|(i, (ca, cb))| f(i, ca, cb))
                .sum();
        }
        a.chunks_mut(chunk_a)
            .zip(b.chunks_mut(chunk_b))
            .enumerate()
            .map(|(i, (ca, cb))| f(i, ca, cb))
            .sum()
    }

    /// Maps `0..n` to values, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}
