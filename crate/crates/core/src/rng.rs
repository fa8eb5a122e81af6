//! Counter-based random number generation.
//!
//! Every random draw is a pure function of (master seed, path, agent, step),
//! so ensembles are reproducible bit-for-bit regardless of how paths are
//! scheduled across threads. The generator applies a 64-bit avalanche mix
//! (the splitmix64 finalizer) to the absorbed counters and converts the
//! resulting words to normals via Box-Muller.

/// Splitmix64 finalizer: full-avalanche permutation of a 64-bit word.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PATH_PHASE: u64 = 0x9E37_79B9_7F4A_7C15;
const AGENT_PHASE: u64 = 0xC2B2_AE3D_27D4_EB4F;
const STEP_PHASE: u64 = 0x1656_67B1_9E37_79F9;
const WORD_A: u64 = 0xD6E8_FEB8_6659_FD93;
const WORD_B: u64 = 0xA5A5_B9FE_3779_4A7D;

/// Deterministic stream of standard normals indexed by (path, agent, step).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline(always)]
    fn key(&self, path: u64, agent: u64, step: u64) -> u64 {
        let mut k = mix(self.seed ^ PATH_PHASE.wrapping_mul(path.wrapping_add(1)));
        k = mix(k ^ AGENT_PHASE.wrapping_mul(agent.wrapping_add(1)));
        mix(k ^ STEP_PHASE.wrapping_mul(step.wrapping_add(1)))
    }

    /// Uniform in (0, 1]; never returns 0 so it is safe inside a logarithm.
    #[inline(always)]
    fn unit_open(word: u64) -> f64 {
        ((word >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in [0, 1).
    #[inline(always)]
    fn unit_half_open(word: u64) -> f64 {
        (word >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// One standard normal draw for the given counter triple.
    #[inline]
    pub fn normal(&self, path: usize, agent: usize, step: usize) -> f64 {
        let k = self.key(path as u64, agent as u64, step as u64);
        let u1 = Self::unit_open(mix(k ^ WORD_A));
        let u2 = Self::unit_half_open(mix(k ^ WORD_B));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform draw on [lo, hi) for the given counter triple.
    #[inline]
    pub fn uniform(&self, path: usize, agent: usize, step: usize, lo: f64, hi: f64) -> f64 {
        let k = self.key(path as u64, agent as u64, step as u64);
        lo + Self::unit_half_open(mix(k ^ WORD_A)) * (hi - lo)
    }
}

/// Derive an independent sub-stream seed from a master seed.
///
/// `tag` separates logical stages (e.g. the true-model and nominal-model
/// simulations of one certificate); `index` separates cells within a stage.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then avalanche with the master seed and index.
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.as_bytes() {
        h = (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(mix(master ^ h) ^ STEP_PHASE.wrapping_mul(index.wrapping_add(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_deterministic() {
        let a = CounterRng::new(42);
        let b = CounterRng::new(42);
        for p in 0..4 {
            for s in 0..16 {
                assert_eq!(a.normal(p, 0, s).to_bits(), b.normal(p, 0, s).to_bits());
            }
        }
    }

    #[test]
    fn distinct_counters_give_distinct_draws() {
        let rng = CounterRng::new(7);
        let x = rng.normal(0, 0, 0);
        assert_ne!(x, rng.normal(1, 0, 0));
        assert_ne!(x, rng.normal(0, 1, 0));
        assert_ne!(x, rng.normal(0, 0, 1));
    }

    #[test]
    fn normal_moments_are_sane() {
        let rng = CounterRng::new(20240811);
        let n = 200_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let z = rng.normal(i, 0, 0);
            assert!(z.is_finite());
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // 4-sigma bands for the sample mean and variance of N(0,1).
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean = {mean}");
        assert!(
            (var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(),
            "var = {var}"
        );
    }

    #[test]
    fn uniform_stays_in_range() {
        let rng = CounterRng::new(3);
        for i in 0..1000 {
            let u = rng.uniform(i, 0, 0, -2.0, 5.0);
            assert!((-2.0..5.0).contains(&u));
        }
    }

    #[test]
    fn derived_seeds_separate_stages() {
        let s = derive_seed(99, "lhs", 0);
        assert_ne!(s, derive_seed(99, "rhs", 0));
        assert_ne!(s, derive_seed(99, "lhs", 1));
        assert_eq!(s, derive_seed(99, "lhs", 0));
    }
}
