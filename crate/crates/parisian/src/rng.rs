use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based streams: stream `i` of seed `s` is the same sequence no
/// matter which worker draws it or in what order.
#[derive(Debug, Clone)]
pub struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(index);
        r
    }
}

/// Runs `f` on a pool of `workers` threads (0 means the rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
