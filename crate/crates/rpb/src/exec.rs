use rayon::prelude::*;
use rpb_core::train::Executor;

/// Executor backed by rayon's global pool. Results come back in index order,
/// so reductions are identical to [`rpb_core::train::Serial`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}
