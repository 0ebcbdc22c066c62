//! Execution strategy for the data-parallel kernels.
//!
//! Every kernel that fans work out takes an [`Exec`]. `Parallel` runs on the
//! rayon pool when the `parallel` feature is enabled and silently degrades to
//! the sequential loop otherwise, so results never depend on the strategy.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Worker count the strategy will use.
    pub fn threads(self) -> usize {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return rayon::current_num_threads();
        }
        1
    }
}

/// Calls `f(chunk_index, chunk)` for consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if data.is_empty() || chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// `(0..n).map(f).collect()`, order preserving.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_range`]; returns the first error by index.
pub fn try_map_range<R, E, F>(exec: Exec, n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Elementwise `out[i] = f(a[i], b[i])` over equal-length slices.
pub fn zip_map<F>(exec: Exec, a: &[u64], b: &[u64], f: F) -> Vec<u64>
where
    F: Fn(u64, u64) -> u64 + Sync + Send,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && a.len() >= PAR_MIN_LEN {
        return a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    let _ = exec;
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(feature = "parallel")]
const PAR_MIN_LEN: usize = 1 << 14;
