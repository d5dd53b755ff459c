//! Execution strategy for data-parallel loops.
//!
//! With the `parallel` feature, [`Exec::Parallel`] fans work out over a rayon
//! pool; without it every strategy runs sequentially. Results are always
//! returned in input order, so outputs never depend on the strategy.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// `workers == 0` uses the global rayon pool.
    Parallel { workers: usize },
}

impl Exec {
    /// One worker runs sequentially; zero uses every core.
    pub fn with_workers(workers: usize) -> Self {
        match workers {
            1 => Exec::Sequential,
            workers => Exec::Parallel { workers },
        }
    }
}

#[cfg(feature = "parallel")]
pub(crate) fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match exec {
        Exec::Sequential => items.iter().map(f).collect(),
        Exec::Parallel { workers: 0 } => items.par_iter().map(f).collect(),
        Exec::Parallel { workers } => match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not build a {workers}-thread pool ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, R, F>(_exec: Exec, items: &[T], f: F) -> Vec<R>
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
        let items: Vec<u32> = (0..1000).collect();
        let seq = map(Exec::Sequential, &items, |x| x * 3);
        for exec in [Exec::with_workers(4), Exec::Parallel { workers: 0 }] {
            assert_eq!(map(exec, &items, |x| x * 3), seq);
        }
    }
}
