//! Order-preserving map over independent trial indices.
//!
//! With the `parallel` feature the work is spread over a rayon pool of
//! `jobs` threads (`0` picks the rayon default). Without it, or with
//! `jobs == 1`, the map runs on the calling thread. Results come back in
//! index order either way.

pub fn map_trials<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs != 1 && n > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    (0..n).map(f).collect()
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
