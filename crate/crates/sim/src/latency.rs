use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::config::LogNormalSpec;

/// Hands out one independent RNG per sequence number: sample `n` depends only
/// on `(seed, n)`. Samplers started at different offsets never share streams
/// in practice, so unrelated draws (arrivals versus latencies) stay paired
/// across runs that consume one of them differently.
#[derive(Clone)]
pub struct Sampler {
    base: ChaCha8Rng,
    seq: u64,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self::at_offset(seed, 0)
    }

    pub fn at_offset(seed: u64, first_seq: u64) -> Self {
        Sampler { base: ChaCha8Rng::seed_from_u64(seed), seq: first_seq }
    }

    /// RNG for sequence number `seq` without advancing.
    pub fn rng_at(&self, seq: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(seq);
        r
    }

    pub fn next_rng(&mut self) -> ChaCha8Rng {
        let r = self.rng_at(self.seq);
        self.seq += 1;
        r
    }

    pub fn uniform(&mut self) -> f64 {
        self.next_rng().random::<f64>()
    }

    pub fn sample<D: Distribution<f64>>(&mut self, d: &D) -> f64 {
        d.sample(&mut self.next_rng())
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

/// Lognormal parameterized by its median; a zero median always yields 0.
#[derive(Debug, Clone, Copy)]
pub struct Tier(Option<LogNormal<f64>>);

impl Tier {
    pub fn new(spec: LogNormalSpec) -> Self {
        if spec.median == 0.0 {
            return Tier(None);
        }
        Tier(Some(LogNormal::new(spec.median.ln(), spec.sigma).expect("validated lognormal")))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.0 {
            Some(d) => d.sample(rng),
            None => 0.0,
        }
    }
}
