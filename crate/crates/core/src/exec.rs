//! Execution mode for the data-parallel inner loops.
//!
//! Results are collected in input order; reductions run over fixed-size
//! chunks combined left to right.
//!
//! Without the `parallel` feature, [`Exec::Parallel`] silently runs
//! sequentially.

use std::ops::Range;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "OVO_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// True when work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `f(i, &items[i])` for every item, keeping only `Some` results, in order.
    pub fn filter_map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &T) -> Option<U> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items
                .par_iter()
                .enumerate()
                .filter_map(|(i, t)| f(i, t))
                .collect();
        }
        items
            .iter()
            .enumerate()
            .filter_map(|(i, t)| f(i, t))
            .collect()
    }

    /// `f(i)` for every `i` in `range`, in order.
    pub fn map_range<U, F>(self, range: Range<usize>, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return range.into_par_iter().map(f).collect();
        }
        range.map(f).collect()
    }

    /// `f(&items[i])` for every item, in order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Folds `items` in fixed chunks of `chunk` elements (each chunk folded
    /// sequentially from `init()`), then combines the chunk results left to
    /// right. The result does not depend on the thread count.
    pub fn chunked_fold<T, A, I, F, C>(self, items: &[T], chunk: usize, init: I, fold: F, combine: C) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &T) + Sync + Send,
        C: Fn(&mut A, A),
    {
        let chunk = chunk.max(1);
        let chunks: Vec<&[T]> = items.chunks(chunk).collect();
        let partials = self.map(&chunks, |c| {
            let mut acc = init();
            for t in c.iter() {
                fold(&mut acc, t);
            }
            acc
        });
        let mut out = init();
        for p in partials {
            combine(&mut out, p);
        }
        out
    }
}

/// Reads [`THREADS_ENV`] and sizes the global worker pool accordingly.
/// Returns the thread count that was applied, if any. Calling it more than
/// once is harmless; only the first successful call configures the pool.
pub fn init_threads_from_env() -> Option<usize> {
    let n: usize = std::env::var(THREADS_ENV).ok()?.trim().parse().ok()?;
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Some(n)
}
