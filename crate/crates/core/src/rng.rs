//! Deterministic per-trajectory random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `index` of the generator keyed by `master`.
///
/// ChaCha streams share the key and differ in the nonce, so every
/// `(master, index)` pair yields a reproducible, non-overlapping sequence.
pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Runs `job(index, rng)` for `0..n` and returns results in index order.
///
/// With the `parallel` feature the jobs run on a pool of `workers` threads
/// (0 = rayon default); the result order does not depend on scheduling.
pub fn run_indexed<T, F>(n: usize, master: u64, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || (0..n).into_par_iter().map(|i| job(i, &mut stream_rng(master, i as u64))).collect();
        if workers == 0 {
            return run();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        (0..n).map(|i| job(i, &mut stream_rng(master, i as u64))).collect()
    }
}
