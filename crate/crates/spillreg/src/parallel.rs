//! Bounded fan-out with results in input order.

use rayon::prelude::*;

use crate::error::{AppError, AppResult};

/// Caps worker threads; defaults to the available parallelism.
pub const THREADS_ENV: &str = "SPILLREG_THREADS";

pub fn thread_cap() -> AppResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(AppError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Err(e) => Err(AppError::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Apply `f` to every item on at most `threads` workers. The output is in
/// item order whatever the scheduling.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> AppResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.min(items.len()))
        .build()
        .map_err(|e| AppError::Config(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}
