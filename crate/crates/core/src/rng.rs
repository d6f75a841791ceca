//! Portable counter-based random number generation.
//!
//! Every random decision in a run (augmentation plans, mask plans, dropout
//! masks, parameter initialisation, epoch shuffles) is drawn from
//! [`CounterRng`]. The generator is SplitMix64 viewed as a counter mode
//! cipher: the n-th output is `finalize(key + n * GAMMA)`. It only uses
//! wrapping 64-bit integer arithmetic, so a given key yields the same stream
//! on every platform and compiler.
//!
//! Integer ranges are sampled with Lemire's multiply-and-reject method and
//! floats are built from the top 53 (or 24) bits, both of which are fully
//! specified here rather than delegated to an external crate whose sampling
//! algorithms may change between versions.

/// Weyl increment (the golden ratio in 64-bit fixed point).
pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output finalizer.
#[inline]
pub fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of coordinates.
///
/// Used for per-sentence and per-view seeds, e.g.
/// `mix(global_seed, &[batch_index, sentence_index, view_index])`, so that any
/// worker can reproduce the exact stream a sequential run would have used.
pub fn mix(seed: u64, coords: &[u64]) -> u64 {
    let mut h = finalize(seed ^ 0x436C_6561_7253_6565);
    for &c in coords {
        h = finalize(h.wrapping_add(GAMMA) ^ finalize(c.wrapping_add(GAMMA)));
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: finalize(seed),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        finalize(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Chooses `k` distinct values from `0..n` uniformly (partial Fisher-Yates).
    /// The result is in selection order, not sorted.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
