//! Data parallelism over independent work items.
//!
//! Every helper yields results in input order and leaves each item's internal
//! arithmetic untouched, so outputs are bit-identical whatever the thread
//! count. With the `parallel` feature disabled (or one configured thread) the
//! helpers run plain sequential loops.
//!
//! The thread count comes from `EXPNET_THREADS` (default 1) and can be
//! overridden programmatically with [`set_threads`].

use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(0);

fn env_threads() -> usize {
    std::env::var("EXPNET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Currently configured worker count (>= 1).
pub fn threads() -> usize {
    match THREADS.load(Ordering::Relaxed) {
        0 => {
            let n = env_threads();
            THREADS.store(n, Ordering::Relaxed);
            n
        }
        n => n,
    }
}

/// Overrides the worker count for subsequent parallel sections.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

#[cfg(feature = "parallel")]
mod imp {
    use super::threads;
    use rayon::prelude::*;
    use std::sync::Mutex;

    // Pool rebuilt when the configured size changes; benches flip sizes to
    // compare sequential and parallel paths in one process.
    static POOL: Mutex<Option<(usize, std::sync::Arc<rayon::ThreadPool>)>> = Mutex::new(None);

    fn pool(n: usize) -> std::sync::Arc<rayon::ThreadPool> {
        let mut guard = POOL.lock().expect("pool lock");
        match guard.as_ref() {
            Some((size, pool)) if *size == n => pool.clone(),
            _ => {
                let pool = std::sync::Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .expect("thread pool"),
                );
                *guard = Some((n, pool.clone()));
                pool
            }
        }
    }

    pub fn map_indexed<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
    where
        F: Fn(usize, &T) -> U + Sync,
    {
        let n = threads();
        if n <= 1 || items.len() <= 1 {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        pool(n).install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }

    pub fn try_map_indexed<T: Sync, U: Send, E: Send, F>(items: &[T], f: F) -> Result<Vec<U>, E>
    where
        F: Fn(usize, &T) -> Result<U, E> + Sync,
    {
        let n = threads();
        if n <= 1 || items.len() <= 1 {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        pool(n).install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
    where
        F: Fn(usize, &T) -> U,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    pub fn try_map_indexed<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
    where
        F: Fn(usize, &T) -> Result<U, E>,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Maps `f` over the items, in input order.
pub fn map_indexed<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U + Sync,
{
    imp::map_indexed(items, f)
}

/// Fallible variant of [`map_indexed`].
pub fn try_map_indexed<T: Sync, U: Send, E: Send, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    F: Fn(usize, &T) -> Result<U, E> + Sync,
{
    imp::try_map_indexed(items, f)
}
