//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `Parallel` mode fans work out
//! over rayon's pool; without it both modes run on the calling thread.
//! Results are always gathered in input order and reduced sequentially, so the
//! two modes produce bitwise-identical outputs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }

    /// `f` applied to every item, results in input order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// `f(i)` for `i in 0..n`, results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Sum of `f(i)` over `0..n` in fixed-size blocks. Block partial sums are
    /// added left to right, so the result does not depend on the mode.
    pub fn block_sum<F>(self, n: usize, block: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let block = block.max(1);
        let blocks = n.div_ceil(block);
        let partial = self.map_range(blocks, |b| {
            let lo = b * block;
            let hi = (lo + block).min(n);
            (lo..hi).map(&f).sum::<f64>()
        });
        partial.into_iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let a = Execution::Sequential.block_sum(10_007, 64, f);
        let b = Execution::Parallel.block_sum(10_007, 64, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let xs: Vec<u32> = (0..100).collect();
        assert_eq!(
            Execution::Sequential.map(&xs, |x| x * 2),
            Execution::Parallel.map(&xs, |x| x * 2)
        );
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(Execution::Parallel.block_sum(0, 8, |_| 1.0), 0.0);
        assert!(Execution::Parallel.map_range(0, |i| i).is_empty());
    }
}
