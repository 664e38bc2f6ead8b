//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] uses a rayon pool
//! capped at the requested worker count. Without it every mode runs
//! sequentially. Output order always matches input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    /// Parallel with at most this many workers; 0 means "rayon default".
    Parallel(usize),
}

impl Default for Exec {
    fn default() -> Self {
        Exec::Parallel(0)
    }
}

impl Exec {
    pub fn from_cap(cap: usize) -> Self {
        if cap == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel(cap)
        }
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel(cap) => parallel_map(items, cap, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], cap: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if cap == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(cap).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _cap: usize, f: F) -> Vec<R>
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
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Exec::Sequential.map(&xs, |x| x * x);
        let par = Exec::Parallel(4).map(&xs, |x| x * x);
        let dflt = Exec::default().map(&xs, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, dflt);
    }
}
