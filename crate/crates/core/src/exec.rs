//! Trial execution. Trials are independent, so they are mapped in parallel
//! with rayon when the `parallel` feature is on; otherwise (or on request)
//! they run sequentially. Output order is always trial order.

/// How to schedule independent trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon pool; `jobs = None` uses the global pool. Falls back to
    /// sequential when built without the `parallel` feature.
    #[default]
    Parallel,
    ParallelJobs(usize),
}

impl Execution {
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(1) => Execution::Sequential,
            Some(j) if j > 1 => Execution::ParallelJobs(j),
            _ => Execution::Parallel,
        }
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par_map(n, f),
            Execution::ParallelJobs(jobs) => par_map_jobs(*jobs, n, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_map_jobs<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| par_map(n, f)),
        Err(e) => {
            log::warn!("could not build a {jobs}-thread pool ({e}); using the global pool");
            par_map(n, f)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_jobs<T, F>(_jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
