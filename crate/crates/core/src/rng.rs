//! Counter-based random stream.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so any
//! implementation that follows the recipe below reproduces the same numbers:
//!
//! 1. `key = splitmix64(seed ^ splitmix64(stream))`
//! 2. draw `n` (0-based) is `splitmix64(key + (n + 1) * 0x9E3779B97F4A7C15)`
//!    with wrapping arithmetic, where `splitmix64` is the SplitMix64 output
//!    finalizer (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//!    z *= 0x94D049BB133111EB; z ^= z >> 31`).
//! 3. uniforms on `(0, 1)` take the top 53 bits: `((bits >> 11) + 0.5) / 2^53`.
//! 4. standard normals use the Box–Muller cosine branch on two consecutive
//!    uniforms `u1, u2`: `sqrt(-2 ln u1) * cos(2π u2)`. `ln` and `cos` come
//!    from the portable `libm` crate so the draws do not depend on the
//!    platform's math library.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based generator. Cloning it forks an identical stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: splitmix64(seed ^ splitmix64(stream)),
            counter: 0,
        }
    }

    /// Bits of draw number `n` without advancing the stream.
    pub fn at(&self, n: u64) -> u64 {
        splitmix64(self.key.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * libm::log(u1)).sqrt() * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Uniform integer in `0..n` by rejection of the biased tail.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }
}
