//! Per-task fan-out.
//!
//! With the `parallel` feature (default) [`Schedule::Parallel`] runs on the
//! rayon pool; without it every schedule runs serially. Results always come
//! back in index order.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Serial,
    #[default]
    Parallel,
}

pub fn map_indexed<T, F>(n: usize, schedule: Schedule, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match schedule {
        #[cfg(feature = "parallel")]
        Schedule::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_indexed`] but stops at the lowest-index error.
pub fn try_map_indexed<T, F>(n: usize, schedule: Schedule, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, schedule, f).into_iter().collect()
}
