//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the work is spread over the rayon pool; without
//! it, or with [`Parallelism::Sequential`], items run in order on the caller's
//! thread. Results come back in input order either way, so callers whose items
//! are independent get identical output from both modes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Rayon,
}

impl Parallelism {
    /// Rayon when compiled in and `enabled`, otherwise sequential.
    pub fn select(enabled: bool) -> Self {
        if enabled && Self::rayon_available() {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }

    pub fn rayon_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(mode: Parallelism, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        _ => items.into_iter().map(f).collect(),
    }
}
