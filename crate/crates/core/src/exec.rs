//! Batch execution strategy for independent rollouts.

use alloc::vec::Vec;

/// Maps an index range to results, preserving index order in the output.
///
/// Implementations may evaluate `f` concurrently, but must return
/// `out[i] == f(i)`. Callers rely on this to keep reductions in a fixed order.
pub trait Executor: Sync {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
