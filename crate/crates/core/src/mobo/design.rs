//! Scrambled Halton points for initial designs and acquisition sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Halton sequence with an independent random digit permutation per
/// dimension and digit position.
#[derive(Debug, Clone)]
pub struct ScrambledHalton {
    bases: Vec<u32>,
    perms: Vec<Vec<Vec<u32>>>,
}

impl ScrambledHalton {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases: Vec<u32> = PRIMES[..dims].to_vec();
        let perms = bases
            .iter()
            .map(|&b| {
                let digits = (53.0 / (b as f64).log2()).ceil() as usize;
                (0..digits)
                    .map(|_| {
                        let mut p: Vec<u32> = (0..b).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            })
            .collect();
        ScrambledHalton { bases, perms }
    }

    pub fn dims(&self) -> usize {
        self.bases.len()
    }

    /// The `index`-th point in `[0, 1)^dims`.
    pub fn point(&self, index: u64) -> Vec<f64> {
        self.bases
            .iter()
            .zip(&self.perms)
            .map(|(&b, perms)| {
                let mut i = index;
                let mut value = 0.0;
                let mut scale = 1.0 / b as f64;
                for perm in perms {
                    let digit = (i % b as u64) as usize;
                    value += perm[digit] as f64 * scale;
                    i /= b as u64;
                    scale /= b as f64;
                }
                value.min(1.0 - f64::EPSILON)
            })
            .collect()
    }
}

/// `n` scrambled-Halton points mapped into the box `[lower, upper]`.
pub fn quasi_random_design(n: usize, lower: &[f64], upper: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let seq = ScrambledHalton::new(lower.len(), seed);
    (0..n as u64)
        .map(|i| {
            seq.point(i)
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(u, (l, h))| l + u * (h - l))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_in_box_and_seeded() {
        let a = quasi_random_design(64, &[0.0; 4], &[0.3; 4], 5);
        assert!(a.iter().flatten().all(|&v| (0.0..0.3).contains(&v)));
        assert_eq!(a, quasi_random_design(64, &[0.0; 4], &[0.3; 4], 5));
        assert_ne!(a, quasi_random_design(64, &[0.0; 4], &[0.3; 4], 6));
    }

    #[test]
    fn low_discrepancy_per_dimension() {
        // Every one of 16 equal bins gets exactly 4 of the first 64 points
        // along the base-2 axis.
        let seq = ScrambledHalton::new(2, 1);
        let mut bins = [0usize; 16];
        for i in 0..64 {
            bins[(seq.point(i)[0] * 16.0) as usize] += 1;
        }
        assert!(bins.iter().all(|&c| c == 4), "{bins:?}");
    }
}
