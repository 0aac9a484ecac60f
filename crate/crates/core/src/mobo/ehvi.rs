//! Exact two-objective expected hypervolume improvement in log space, and
//! the acquisition maximizer built on it.
//!
//! With objectives `y1 = accuracy` and `y2 = −flops` (both maximized), the
//! region not dominated by the front splits into vertical strips. In strip
//! `i` the improvement of a candidate `(Y1, Y2)` is
//! `(min(Y1, u_i) − l_i)⁺ · (Y2 − h_i)⁺`, and with independent Gaussian
//! marginals the expectation factorizes per strip.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::design::ScrambledHalton;
use super::pareto::{non_dominated_indices, Objectives, ReferencePoint};
use crate::gp::GpModel;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian marginal of one objective at a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub variance: f64,
}

impl Marginal {
    pub fn new(mean: f64, variance: f64) -> Self {
        Marginal {
            mean,
            variance: variance.max(0.0),
        }
    }

    fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `ln(z Φ(z) + φ(z))`, stable far into the lower tail.
pub fn log_h(z: f64) -> f64 {
    let log_phi = -0.5 * z * z - LN_SQRT_2PI;
    if z > -3.0 {
        return (z * std_normal_cdf(z) + log_phi.exp()).ln();
    }
    // h(z) = φ(z)·c/(x + c) with x = −z and c = 1/(x + 2/(x + 3/(x + …))),
    // from the continued fraction of the Mills ratio.
    let x = -z;
    let mut t = x;
    for k in (2..=120).rev() {
        t = x + k as f64 / t;
    }
    let c = 1.0 / t;
    log_phi + c.ln() - (x + c).ln()
}

/// `ln E[(Y − c)⁺]`.
fn log_upper_partial(m: &Marginal, c: f64) -> f64 {
    let s = m.std();
    if s == 0.0 {
        return (m.mean - c).max(0.0).ln();
    }
    s.ln() + log_h((m.mean - c) / s)
}

/// `ln E[(min(Y, upper) − lower)⁺]` for `lower <= upper`.
fn log_clipped_partial(m: &Marginal, lower: f64, upper: f64) -> f64 {
    if m.std() == 0.0 {
        return (m.mean.clamp(lower, upper) - lower).ln();
    }
    let a = log_upper_partial(m, lower);
    if upper == f64::INFINITY {
        return a;
    }
    let b = log_upper_partial(m, upper);
    if a == f64::NEG_INFINITY {
        return a;
    }
    let ratio = (b - a).exp();
    if ratio >= 1.0 {
        return f64::NEG_INFINITY;
    }
    a + (-ratio).ln_1p()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln EHVI`; `−∞` when no improvement is possible. Front points that do
/// not dominate the reference are ignored.
pub fn log_ehvi(accuracy: Marginal, flops: Marginal, front: &[Objectives], reference: &ReferencePoint) -> f64 {
    let valid: Vec<Objectives> = front
        .iter()
        .copied()
        .filter(|p| p.accuracy > reference.accuracy && p.flops < reference.flops)
        .collect();
    // Ascending accuracy == ascending flops on a front.
    let sorted: Vec<Objectives> = non_dominated_indices(&valid).into_iter().map(|i| valid[i]).collect();
    let y2 = Marginal::new(-flops.mean, flops.variance);
    let (r1, r2) = (reference.accuracy, -reference.flops);
    let n = sorted.len();
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let lower = if i == 0 { r1 } else { sorted[i - 1].accuracy };
        let upper = if i < n { sorted[i].accuracy } else { f64::INFINITY };
        let height = if i < n { -sorted[i].flops } else { r2 };
        terms.push(log_clipped_partial(&accuracy, lower, upper) + log_upper_partial(&y2, height));
    }
    log_sum_exp(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub point: Vec<f64>,
    /// `ln EHVI` at `point`.
    pub log_ehvi: f64,
}

/// Raw quasi-random samples drawn before local refinement.
pub const ACQUISITION_SAMPLES: usize = 1024;
const REFINE_STARTS: usize = 4;
const REFINE_MAX_EVALS: usize = 400;

/// Acquisition at a raw input under the two GP posteriors.
pub fn acquisition(gp_accuracy: &GpModel, gp_flops: &GpModel, x: &[f64], front: &[Objectives], reference: &ReferencePoint) -> f64 {
    let (ma, va) = gp_accuracy.predict(x);
    let (mf, vf) = gp_flops.predict(x);
    log_ehvi(Marginal::new(ma, va), Marginal::new(mf, vf), front, reference)
}

fn refine(f: &(dyn Fn(&[f64]) -> f64 + Sync), start: Vec<f64>, value: f64, lower: &[f64], upper: &[f64]) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut best = value;
    let range = lower.iter().zip(upper).map(|(l, u)| u - l).fold(0.0, f64::max);
    let mut step = 0.25 * range;
    let mut evals = 0;
    while step >= 1e-3 * range && evals < REFINE_MAX_EVALS {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[d] = (trial[d] + dir * step).clamp(lower[d], upper[d]);
                if trial[d] == x[d] {
                    continue;
                }
                evals += 1;
                let v = f(&trial);
                if v > best {
                    best = v;
                    x = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, best)
}

/// Maximizes `ln EHVI` over the box: 1024 scrambled-Halton samples, then
/// coordinate-wise pattern search from the best four. Ties keep the earlier
/// sample, so a flat acquisition returns the first sample.
pub fn propose_candidate(
    gp_accuracy: &GpModel,
    gp_flops: &GpModel,
    front: &[Objectives],
    reference: &ReferencePoint,
    lower: &[f64],
    upper: &[f64],
    seed: u64,
) -> Proposal {
    let f = |x: &[f64]| acquisition(gp_accuracy, gp_flops, x, front, reference);
    maximize_acquisition(&f, lower, upper, seed)
}

pub fn maximize_acquisition(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    lower: &[f64],
    upper: &[f64],
    seed: u64,
) -> Proposal {
    let seq = ScrambledHalton::new(lower.len(), seed);
    let samples: Vec<Vec<f64>> = (0..ACQUISITION_SAMPLES as u64)
        .map(|i| {
            seq.point(i)
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(u, (l, h))| l + u * (h - l))
                .collect()
        })
        .collect();
    let values: Vec<f64> = samples.par_iter().map(|x| f(x)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));

    let mut best = Proposal {
        point: samples[order[0]].clone(),
        log_ehvi: values[order[0]],
    };
    if best.log_ehvi == f64::NEG_INFINITY {
        return best;
    }
    let refined: Vec<(Vec<f64>, f64)> = order[..REFINE_STARTS.min(order.len())]
        .par_iter()
        .map(|&i| refine(f, samples[i].clone(), values[i], lower, upper))
        .collect();
    for (x, v) in refined {
        if v > best.log_ehvi {
            best = Proposal { point: x, log_ehvi: v };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_h_branches_agree() {
        for z in [-3.0 - 1e-9, -3.0 + 1e-9] {
            let direct = (z * std_normal_cdf(z) + (-0.5 * z * z - LN_SQRT_2PI).exp()).ln();
            assert!((log_h(z) - direct).abs() < 1e-9, "{z}");
        }
        // Deep tail: h(z) ~ φ(z)/z².
        let z = -40.0f64;
        let approx = -0.5 * z * z - LN_SQRT_2PI - 2.0 * z.abs().ln();
        assert!((log_h(z) - approx).abs() < 1e-2);
        assert!(log_h(z).is_finite());
    }

    #[test]
    fn empty_front_is_expected_improvement_over_reference() {
        let r = Objectives::new(0.0, 10.0);
        let v = log_ehvi(Marginal::new(0.5, 0.0), Marginal::new(4.0, 0.0), &[], &r);
        assert!((v.exp() - 0.5 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn dominated_deterministic_candidate() {
        let r = Objectives::new(0.0, 10.0);
        let front = [Objectives::new(0.8, 5.0)];
        let v = log_ehvi(Marginal::new(0.7, 0.0), Marginal::new(6.0, 0.0), &front, &r);
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn monotone_in_accuracy_mean() {
        let r = Objectives::new(0.0, 10.0);
        let front = [Objectives::new(0.5, 4.0), Objectives::new(0.8, 7.0)];
        let mut last = f64::NEG_INFINITY;
        for i in 0..50 {
            let m = 0.2 + i as f64 * 0.02;
            let v = log_ehvi(Marginal::new(m, 0.01), Marginal::new(5.0, 0.5), &front, &r);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn flat_acquisition_returns_first_sample() {
        let lower = [0.0; 3];
        let upper = [0.3; 3];
        let p = maximize_acquisition(&|_| f64::NEG_INFINITY, &lower, &upper, 4);
        let first: Vec<f64> = ScrambledHalton::new(3, 4).point(0).iter().map(|u| u * 0.3).collect();
        assert_eq!(p.point, first);
    }

    #[test]
    fn refinement_finds_interior_peak() {
        let f = |x: &[f64]| -((x[0] - 0.123).powi(2) + (x[1] - 0.271).powi(2));
        let p = maximize_acquisition(&f, &[0.0, 0.0], &[0.3, 0.3], 1);
        assert!((p.point[0] - 0.123).abs() < 1e-3 && (p.point[1] - 0.271).abs() < 1e-3);
    }
}
