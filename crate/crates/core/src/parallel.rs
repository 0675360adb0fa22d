//! Worker pools with order-preserving maps.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f` inside a pool of `workers` threads (the global pool when `None`).
pub fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidParams("workers must be >= 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `items.map(f)` evaluated concurrently, results in input order.
pub fn ordered_map<I: Sync, T: Send>(items: &[I], f: impl Fn(usize, &I) -> T + Sync + Send) -> Vec<T> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// `f(0..n)` evaluated concurrently, results in index order.
pub fn ordered_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}
