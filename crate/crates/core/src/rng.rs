//! Seeded random streams and deterministic parallel Monte Carlo.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` derived from a root seed.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `n` Monte Carlo replicates into `chunks` pieces, each running on its
/// own stream. Results come back in chunk order, so the output depends only on
/// `(seed, chunks)` and not on how many worker threads were available.
pub fn par_chunks<T, F>(seed: u64, chunks: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    let chunks = chunks.max(1);
    let sizes: Vec<usize> = (0..chunks)
        .map(|c| n / chunks + usize::from(c < n % chunks))
        .collect();
    sizes
        .par_iter()
        .enumerate()
        .map(|(c, &len)| {
            let mut rng = stream(seed, c as u64 + 1);
            f(&mut rng, len)
        })
        .collect()
}

/// A root seed for an independent sub-computation, derived from `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    self::stream(seed, (1 << 32) | stream).next_u64()
}
