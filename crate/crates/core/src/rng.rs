//! SplitMix64, a counter-based 64-bit generator.
//!
//! Output `i` (starting at 1) is `mix(seed + i * 0x9E3779B97F4A7C15)` with the
//! finalizer constants `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`
//! (Steele, Lea and Flood, 2014). Any language with wrapping 64-bit
//! arithmetic reproduces the streams bit for bit. Uniforms take the top 53
//! bits; normals use the cosine branch of Box–Muller, two uniforms per draw.

use std::f64::consts::TAU;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

/// Independent sub-stream identifiers used inside one replication.
pub mod streams {
    pub const OBSERVATIONS: u64 = 1;
    pub const PATH: u64 = 2;
    pub const GAIN: u64 = 3;
    pub const INITIAL: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Generator for sub-stream `stream` of `seed`; distinct streams never
    /// share a starting state for a fixed seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))))
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Uniform random sign.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform point on the unit sphere in `R^d`; `None` after repeated
    /// zero-norm draws.
    pub fn unit_vector(&mut self, d: usize) -> Option<Vec<f64>> {
        if d == 1 {
            return Some(vec![self.sign()]);
        }
        for _ in 0..16 {
            let v: Vec<f64> = (0..d).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-300 {
                return Some(v.into_iter().map(|x| x / norm).collect());
            }
        }
        None
    }

    /// Poisson draw by sequential inversion in log space; exact for the
    /// moderate means used by the count models.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let u = self.uniform_open0();
        let mut k = 0u64;
        let mut log_p = -mean;
        let mut cdf = log_p.exp();
        let log_mean = mean.ln();
        // Far tail: the loop stops once the remaining mass is below 1e-17.
        while u > cdf && k < 100_000 + (20.0 * mean) as u64 {
            k += 1;
            log_p += log_mean - (k as f64).ln();
            let next = cdf + log_p.exp();
            if next == cdf && (k as f64) > mean {
                break;
            }
            cdf = next;
        }
        k
    }
}
