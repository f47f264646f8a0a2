//! Execution policy for block-parallel work.
//!
//! Work is cut into fixed-size blocks whose boundaries depend only on the
//! problem size, and block results come back in block order. Callers merge
//! them sequentially, so results do not depend on the number of workers.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    /// Data-parallel over blocks. `workers: None` uses the global pool.
    /// Without the `parallel` feature this runs sequentially.
    #[default]
    Parallel,
    ParallelWith {
        workers: usize,
    },
}

impl ExecPolicy {
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => ExecPolicy::Sequential,
            Some(w) => ExecPolicy::ParallelWith { workers: w.max(1) },
            None => ExecPolicy::Parallel,
        }
    }

    /// Apply `f` to each block `[k·block, min((k+1)·block, n))` and return the
    /// results in block order.
    pub fn map_blocks<T, F>(&self, n: usize, block: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, Range<usize>) -> T + Sync + Send,
    {
        let block = block.max(1);
        let count = n.div_ceil(block);
        let range = move |k: usize| k * block..((k + 1) * block).min(n);
        match *self {
            ExecPolicy::Sequential => (0..count).map(|k| f(k, range(k))).collect(),
            ExecPolicy::Parallel => par_map(count, &|k| f(k, range(k)), None),
            ExecPolicy::ParallelWith { workers } => par_map(count, &|k| f(k, range(k)), Some(workers)),
        }
    }

    /// `f(k)` for `k in 0..n`, results in index order.
    pub fn map_indices<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.map_blocks(n, 1, |k, _| f(k))
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Send>(count: usize, f: &(dyn Fn(usize) -> T + Sync), workers: Option<usize>) -> Vec<T> {
    use rayon::prelude::*;
    let run = || (0..count).into_par_iter().map(f).collect::<Vec<T>>();
    match workers {
        None => run(),
        Some(w) => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(run),
            Err(_) => (0..count).map(f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Send>(count: usize, f: &(dyn Fn(usize) -> T + Sync), _workers: Option<usize>) -> Vec<T> {
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range_in_order() {
        for policy in [
            ExecPolicy::Sequential,
            ExecPolicy::Parallel,
            ExecPolicy::ParallelWith { workers: 3 },
        ] {
            let blocks = policy.map_blocks(10, 4, |k, r| (k, r));
            assert_eq!(blocks, vec![(0, 0..4), (1, 4..8), (2, 8..10)]);
        }
        assert!(ExecPolicy::Sequential.map_blocks(0, 4, |k, _| k).is_empty());
    }

    #[test]
    fn worker_count_mapping() {
        assert_eq!(ExecPolicy::from_workers(Some(1)), ExecPolicy::Sequential);
        assert_eq!(ExecPolicy::from_workers(None), ExecPolicy::Parallel);
        assert_eq!(
            ExecPolicy::from_workers(Some(8)),
            ExecPolicy::ParallelWith { workers: 8 }
        );
    }
}
