//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) work is spread over the rayon
//! pool; without it every helper runs sequentially. Callers can also force
//! sequential execution at runtime through [`Execution::Sequential`], which
//! is what the benches use to compare both paths in one binary.
//!
//! Every helper returns results indexed by position, so output never depends
//! on scheduling.

/// How a data-parallel loop should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}
