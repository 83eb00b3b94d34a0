//! Sequential or rayon-backed execution of independent work items.
//!
//! Every caller merges results in a fixed order afterwards, so output never
//! depends on which variant ran or on the thread count.

#[cfg(feature = "parallel")]
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Default)]
pub enum Execution {
    #[default]
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for Execution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Execution::Sequential => f.write_str("Sequential"),
            #[cfg(feature = "parallel")]
            Execution::Parallel(pool) => write!(f, "Parallel({} threads)", pool.current_num_threads()),
        }
    }
}

impl Execution {
    /// `None` uses every available core; `Some(1)` (or a build without the
    /// `parallel` feature) runs sequentially.
    pub fn with_threads(threads: Option<usize>) -> Result<Self> {
        if threads == Some(0) {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        {
            if threads == Some(1) {
                return Ok(Execution::Sequential);
            }
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                builder = builder.num_threads(n);
            }
            let pool = builder
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(Execution::Parallel(Arc::new(pool)))
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(Execution::Sequential)
        }
    }

    pub fn threads(&self) -> usize {
        match self {
            Execution::Sequential => 1,
            #[cfg(feature = "parallel")]
            Execution::Parallel(pool) => pool.current_num_threads(),
        }
    }

    /// Order-preserving map.
    pub fn map<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Sync + Send,
    {
        match self {
            Execution::Sequential => items.into_iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| items.into_par_iter().map(f).collect())
            }
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<U, F>(&self, n: u64, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(u64) -> U + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_at_any_width() {
        let seq = Execution::Sequential.map((0..1000).collect(), |x: u32| x * 3);
        for threads in [Some(1), Some(2), Some(4), None] {
            let exec = Execution::with_threads(threads).unwrap();
            assert_eq!(exec.map((0..1000).collect(), |x: u32| x * 3), seq);
            assert_eq!(exec.map_range(1000, |x| x as u32 * 3), seq);
        }
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(Execution::with_threads(Some(0)).is_err());
    }
}
