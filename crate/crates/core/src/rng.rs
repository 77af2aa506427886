//! Counter-based random number streams for reproducible parallel simulation.
//!
//! Each simulation path owns an independent stream derived from the run seed
//! and the path index alone, so results are bit-identical no matter how paths
//! are scheduled across threads. The generator is a SplitMix64 walk whose
//! starting state is decorrelated from neighbouring path indices by two
//! finalizer rounds. Non-cryptographic.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: full-avalanche bit mix.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-path random stream keyed by `(seed, path_index)`.
#[derive(Clone, Debug)]
pub struct PathRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl PathRng {
    /// Creates the stream for one path. Distinct `(seed, path)` pairs give
    /// well-separated streams regardless of how close the inputs are.
    pub fn new(seed: u64, path: u64) -> Self {
        let lane = mix(path.wrapping_mul(GOLDEN) ^ 0x6A09_E667_F3BC_C909);
        PathRng {
            state: mix(seed ^ lane).wrapping_add(lane),
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in the open interval (0, 1), 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal draw via the Box-Muller transform. The paired value
    /// is cached per stream, keeping the draw sequence deterministic.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let mag = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(mag * theta.sin());
        mag * theta.cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let mut a = PathRng::new(42, 7);
        let mut b = PathRng::new(42, 7);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn neighbouring_paths_diverge() {
        let a: Vec<u64> = (0..16).map({
            let mut r = PathRng::new(1, 0);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..16).map({
            let mut r = PathRng::new(1, 1);
            move |_| r.next_u64()
        }).collect();
        assert_ne!(a, b);
        // streams must not be shifted copies of each other
        assert!(a.iter().all(|v| !b.contains(v)));
    }

    #[test]
    fn uniform_stays_in_open_unit_interval() {
        let mut r = PathRng::new(9, 3);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = PathRng::new(123, 0);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }
}
