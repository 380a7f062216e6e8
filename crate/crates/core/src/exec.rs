//! Sequential or data-parallel mapping over independent work items.

use serde::{Deserialize, Serialize};

/// How independent items (windows, seeds, series) are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Worker pool of the given size; `None` uses every logical core.
    /// Without the `parallel` feature this runs sequentially.
    #[default]
    Parallel,
    ParallelWith(usize),
}

impl Execution {
    pub fn parallel(workers: Option<usize>) -> Self {
        match workers {
            Some(n) => Execution::ParallelWith(n.max(1)),
            None => Execution::Parallel,
        }
    }

    /// Maps `f` over `items`, preserving input order in the output.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => par_map(items, f, None),
            Execution::ParallelWith(n) => par_map(items, f, Some(n)),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F, workers: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    match workers {
        None => items.par_iter().map(f).collect(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F, _workers: Option<usize>) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..500).collect();
        let expect: Vec<u64> = items.iter().map(|x| x * x).collect();
        for exec in [
            Execution::Sequential,
            Execution::Parallel,
            Execution::parallel(Some(3)),
        ] {
            assert_eq!(exec.map(&items, |x| x * x), expect);
        }
    }

    #[test]
    fn zero_workers_means_one() {
        assert_eq!(Execution::parallel(Some(0)), Execution::ParallelWith(1));
    }
}
