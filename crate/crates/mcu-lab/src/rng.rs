//! Portable seeded randomness.
//!
//! Everything stochastic in this crate (data generation, splits, label
//! corruption, init, shuffling, probe vectors) draws from SplitMix64 with the
//! draw rules below, so any run can be replayed bit-exactly from its seed in
//! any language:
//!
//! - state update: `s += 0x9E3779B97F4A7C15`
//! - output: `z = s; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31`
//! - f64 in [0,1): `(next_u64() >> 11) * 2^-53`
//! - bounded int in [0,n): `floor(next_f64() * n)`
//! - Gaussian pair: Box-Muller on `u1 = 1 - next_f64()`, `u2 = next_f64()`
//! - shuffle: Fisher-Yates from the back, `j = below(i+1)`
//! - Rademacher: `+1` if the top output bit is 0, else `-1`

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream for a named sub-purpose of `seed`.
    ///
    /// One output of a generator seeded with `seed ^ tag * 0xA24BAED4963EE407`
    /// becomes the child seed. Tags are pinned constants at call sites.
    pub fn derive(seed: u64, tag: u64) -> Self {
        let mut parent = SplitMix64::new(seed ^ tag.wrapping_mul(0xA24BAED4963EE407));
        SplitMix64::new(parent.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_f32(&mut self) -> f32 {
        self.next_f64() as f32
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let v = (self.next_f64() * n as f64) as usize;
        v.min(n - 1)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Two independent standard normals via Box-Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        (r * a.cos(), r * a.sin())
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Rademacher sample: +1 or -1 with equal probability.
    pub fn rademacher(&mut self) -> f32 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform label in `[0, classes)` excluding `original`: draws in
    /// `[0, classes-1)` and shifts past the excluded value.
    pub fn label_excluding(&mut self, classes: usize, original: usize) -> usize {
        debug_assert!(classes >= 2 && original < classes);
        let r = self.below(classes - 1);
        if r >= original {
            r + 1
        } else {
            r
        }
    }
}
