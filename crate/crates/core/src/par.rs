//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan out over the rayon
//! global pool; without it they run in order on the calling thread. Output
//! order always matches input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether `Parallel` actually fans out in this build.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_with(Execution::Parallel, items, f)
}

pub fn map_with<T, R, F>(mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Like [`map_with`] but each worker builds one piece of state up front
/// (e.g. its own database handle) and reuses it across items.
pub fn map_init_with<T, S, R, I, F>(mode: Execution, items: &[T], init: I, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map_init(&init, |s, t| f(s, t)).collect();
    }
    let _ = mode;
    let mut state = init();
    items.iter().map(|t| f(&mut state, t)).collect()
}
