//! Deterministic parallel execution of Monte Carlo ensembles.
//!
//! Work is cut into fixed-size chunks that do not depend on the number of
//! worker threads. Chunk `k` draws from its own ChaCha8 stream
//! ([`stream_rng`]`(seed, k)`), and results are returned in chunk order, so
//! output is bit-identical for any degree of parallelism.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Number of ensemble members per chunk.
pub const CHUNK: usize = 1024;

/// The split function: the master seed keys the ChaCha8 generator and the
/// task index selects one of its 2^64 independent streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent seed for a sub-experiment: the first word of stream `tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    stream_rng(seed, tag).next_u64()
}

/// Static partition of `total` items into `(chunk_index, start, len)` triples.
pub fn partition(total: usize, chunk: usize) -> Vec<(usize, usize, usize)> {
    let chunk = chunk.max(1);
    (0..total.div_ceil(chunk))
        .map(|k| {
            let start = k * chunk;
            (k, start, chunk.min(total - start))
        })
        .collect()
}

/// Runs `work(chunk_index, start, len, rng)` over a static partition with at
/// most `threads` workers (`0` means all available cores). Results are in
/// chunk order.
pub fn run_chunked<T, F>(total: usize, chunk: usize, seed: u64, threads: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    let parts = partition(total, chunk);
    let body = |&(k, start, len): &(usize, usize, usize)| {
        let mut rng = stream_rng(seed, k as u64);
        work(k, start, len, &mut rng)
    };
    if threads == 1 || parts.len() <= 1 {
        return parts.iter().map(body).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| parts.par_iter().map(body).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running serially");
            parts.iter().map(body).collect()
        }
    }
}

/// Runs chunks `first..first + count` of an unbounded sequence of full
/// chunks; chunk `k` uses stream `k`, so consecutive calls continue one
/// fixed sample sequence. `work` receives `(chunk_index, len, rng)`.
pub fn run_chunk_range<T, F>(first: usize, count: usize, chunk: usize, seed: u64, threads: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    run_chunked(count * chunk, chunk, seed, threads, |k, _, len, _| {
        let mut rng = stream_rng(seed, (first + k) as u64);
        work(first + k, len, &mut rng)
    })
}
