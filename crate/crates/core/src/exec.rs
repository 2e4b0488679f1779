//! Sequential / data-parallel dispatch. With the `parallel` feature off,
//! [`Execution::Parallel`] silently runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `(0..n).map(f).collect()`, possibly across the rayon pool. Output order
/// is always index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs two closures, concurrently when allowed.
pub fn join<A, B, RA, RB>(exec: Execution, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => rayon::join(a, b),
        _ => (a(), b()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_indexed(100, Execution::Sequential, |i| i * i);
        let par = map_indexed(100, Execution::Parallel, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(join(Execution::Parallel, || 1, || 2), (1, 2));
    }
}
