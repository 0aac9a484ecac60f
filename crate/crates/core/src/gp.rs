//! Gaussian-process regression with a Matérn-5/2 ARD kernel, constant mean
//! and MAP hyperparameters under Gamma priors.
//!
//! Inputs are mapped to the unit cube and targets standardized before
//! fitting; [`GpModel::predict`] undoes both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter ladder relative to the signal variance.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Self {
        GammaPrior { shape, rate }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn mode(&self) -> f64 {
        ((self.shape - 1.0) / self.rate).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPriors {
    pub signal_variance: GammaPrior,
    pub noise_variance: GammaPrior,
    /// Placed on every `1 / ℓ_i²`.
    pub inverse_sq_lengthscale: GammaPrior,
}

impl Default for GpPriors {
    fn default() -> Self {
        GpPriors {
            signal_variance: GammaPrior::new(2.0, 0.5),
            noise_variance: GammaPrior::new(1.1, 10.0),
            inverse_sq_lengthscale: GammaPrior::new(3.0, 6.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    pub constant_mean: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) || !ok(self.noise_variance) || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::config("GP variances and lengthscales must be positive and finite"));
        }
        if !self.constant_mean.is_finite() {
            return Err(Error::config("GP constant mean must be finite"));
        }
        Ok(())
    }
}

/// `σ_f² (1 + √5 r + 5/3 r²) exp(−√5 r)` with `r² = Σ (x_i − y_i)² / ℓ_i²`.
pub fn matern52_ard(x: &[f64], y: &[f64], hyper: &GpHyperparams) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&hyper.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    matern52_from_r2(r2, hyper.signal_variance)
}

#[inline]
fn matern52_from_r2(r2: f64, signal_variance: f64) -> f64 {
    let r = r2.sqrt();
    signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
}

/// Box bounds and normalization of one objective's observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Inputs mapped to `[0, 1]^L`.
    pub inputs: Vec<Vec<f64>>,
    /// Standardized targets.
    pub targets: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl ObservationSet {
    pub fn new(raw_inputs: &[Vec<f64>], raw_targets: &[f64], lower: &[f64], upper: &[f64]) -> Result<Self> {
        if raw_inputs.len() != raw_targets.len() {
            return Err(Error::config("inputs and targets differ in length"));
        }
        if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(u > l)) {
            return Err(Error::config("invalid GP input bounds"));
        }
        let inputs = raw_inputs
            .iter()
            .map(|x| {
                if x.len() != lower.len() {
                    return Err(Error::Shape(format!("input has {} dims, expected {}", x.len(), lower.len())));
                }
                Ok(x.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(v, (l, u))| (v - l) / (u - l))
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let n = raw_targets.len().max(1) as f64;
        let mean = raw_targets.iter().sum::<f64>() / n;
        let var = raw_targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(ObservationSet {
            inputs,
            targets: raw_targets.iter().map(|t| (t - mean) / std).collect(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            target_mean: mean,
            target_std: std,
        })
    }

    /// Observations already in the unit cube with standardized targets.
    pub fn normalized(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::config("inputs and targets differ in length"));
        }
        let dims = inputs.first().map_or(0, Vec::len);
        Ok(ObservationSet {
            inputs,
            targets,
            lower: vec![0.0; dims],
            upper: vec![1.0; dims],
            target_mean: 0.0,
            target_std: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn to_unit(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }
}

/// In-place lower Cholesky factor of a row-major `n x n` matrix.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `K⁻¹ = L⁻ᵀ L⁻¹`, only the lower triangle filled.
fn inverse_from_cholesky(l: &[f64], n: usize) -> Vec<f64> {
    // Lower-triangular M = L⁻¹, row by row.
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let inv_d = 1.0 / l[i * n + i];
        m[i * n + i] = inv_d;
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * m[k * n + j];
            }
            m[i * n + j] = -s * inv_d;
        }
    }
    let mut out = vec![0.0; n * n];
    for k in 0..n {
        let row = &m[k * n..k * n + k + 1];
        for i in 0..=k {
            let mki = row[i];
            if mki == 0.0 {
                continue;
            }
            let dst = &mut out[i * n..i * n + i + 1];
            for (d, &mkj) in dst.iter_mut().zip(&row[..=i]) {
                *d += mki * mkj;
            }
        }
    }
    out
}

fn cho_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    solve_lower(l, n, &mut x);
    solve_upper_t(l, n, &mut x);
    x
}

/// Kernel matrix without noise or jitter.
fn gram(inputs: &[Vec<f64>], hyper: &GpHyperparams) -> Vec<f64> {
    let n = inputs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = hyper.signal_variance;
        for j in 0..i {
            let v = matern52_ard(&inputs[i], &inputs[j], hyper);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Gram matrix of the kernel on `inputs` (no noise term).
pub fn gram_matrix(inputs: &[Vec<f64>], hyper: &GpHyperparams) -> Vec<Vec<f64>> {
    let n = inputs.len();
    let flat = gram(inputs, hyper);
    (0..n).map(|i| flat[i * n..(i + 1) * n].to_vec()).collect()
}

struct Factor {
    chol: Vec<f64>,
    jitter: f64,
}

/// Factorizes `K + (σ_n² + jitter) I`, walking the jitter ladder.
fn factorize(kernel: &[f64], n: usize, hyper: &GpHyperparams) -> Result<Factor> {
    let mut jitter = JITTER_START * hyper.signal_variance;
    while jitter <= JITTER_MAX * hyper.signal_variance * (1.0 + 1e-12) {
        let mut a = kernel.to_vec();
        for i in 0..n {
            a[i * n + i] += hyper.noise_variance + jitter;
        }
        if cholesky(&mut a, n) {
            return Ok(Factor { chol: a, jitter });
        }
        jitter *= 2.0;
    }
    Err(Error::numeric(None, "GP covariance is not positive definite at maximum jitter"))
}

fn log_prior(hyper: &GpHyperparams, priors: &GpPriors) -> f64 {
    priors.signal_variance.log_pdf(hyper.signal_variance)
        + priors.noise_variance.log_pdf(hyper.noise_variance)
        + hyper
            .lengthscales
            .iter()
            .map(|l| priors.inverse_sq_lengthscale.log_pdf(1.0 / (l * l)))
            .sum::<f64>()
}

/// Log marginal likelihood of the standardized targets plus Gamma log
/// densities on `σ_f²`, `σ_n²` and each `1/ℓ_i²`.
pub fn log_marginal_posterior(obs: &ObservationSet, hyper: &GpHyperparams, priors: &GpPriors) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::config("no observations"));
    }
    hyper.validate()?;
    let n = obs.len();
    let factor = factorize(&gram(&obs.inputs, hyper), n, hyper)?;
    let resid: Vec<f64> = obs.targets.iter().map(|t| t - hyper.constant_mean).collect();
    let mut w = resid.clone();
    solve_lower(&factor.chol, n, &mut w);
    let fit = -0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let logdet_half: f64 = (0..n).map(|i| factor.chol[i * n + i].ln()).sum();
    Ok(fit - logdet_half - 0.5 * n as f64 * LN_2PI + log_prior(hyper, priors))
}

/// Generalized-least-squares constant mean `1ᵀK⁻¹y / 1ᵀK⁻¹1`.
fn gls_mean(chol: &[f64], n: usize, targets: &[f64]) -> f64 {
    let ones = cho_solve(chol, n, &vec![1.0; n]);
    let denom: f64 = ones.iter().sum();
    let num: f64 = ones.iter().zip(targets).map(|(a, y)| a * y).sum();
    num / denom
}

/// Search-space layout: `[ln σ_f², ln σ_n², ln ℓ_1, …, ln ℓ_L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub log_signal: (f64, f64),
    pub log_noise: (f64, f64),
    pub log_lengthscale: (f64, f64),
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            log_signal: (-4.0, 4.0),
            // Below e^-4 so noise-free objectives can be interpolated.
            log_noise: (-20.0, 4.0),
            log_lengthscale: (-4.0, 4.0),
        }
    }
}

impl SearchBounds {
    fn vectors(&self, dims: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.log_signal.0, self.log_noise.0];
        let mut hi = vec![self.log_signal.1, self.log_noise.1];
        lo.extend(std::iter::repeat_n(self.log_lengthscale.0, dims));
        hi.extend(std::iter::repeat_n(self.log_lengthscale.1, dims));
        (lo, hi)
    }
}

fn hyper_from_theta(theta: &[f64]) -> GpHyperparams {
    GpHyperparams {
        signal_variance: theta[0].exp(),
        noise_variance: theta[1].exp(),
        lengthscales: theta[2..].iter().map(|t| t.exp()).collect(),
        constant_mean: 0.0,
    }
}

fn theta_from_hyper(h: &GpHyperparams) -> Vec<f64> {
    let mut t = vec![h.signal_variance.ln(), h.noise_variance.ln()];
    t.extend(h.lengthscales.iter().map(|l| l.ln()));
    t
}

/// Objective with the mean profiled out, plus its gradient in `theta`.
struct Profiled<'a> {
    obs: &'a ObservationSet,
    priors: &'a GpPriors,
}

impl Profiled<'_> {
    fn value(&self, theta: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>, GpHyperparams)> {
        let obs = self.obs;
        let n = obs.len();
        let mut hyper = hyper_from_theta(theta);
        let kernel = gram(&obs.inputs, &hyper);
        let factor = factorize(&kernel, n, &hyper).ok()?;
        let l = &factor.chol;
        hyper.constant_mean = gls_mean(l, n, &obs.targets);
        let resid: Vec<f64> = obs.targets.iter().map(|t| t - hyper.constant_mean).collect();
        let alpha = cho_solve(l, n, &resid);
        let fit = -0.5 * resid.iter().zip(&alpha).map(|(r, a)| r * a).sum::<f64>();
        let logdet_half: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
        let value = fit - logdet_half - 0.5 * n as f64 * LN_2PI + log_prior(&hyper, self.priors);
        if !value.is_finite() {
            return None;
        }
        if !want_grad {
            return Some((value, Vec::new(), hyper));
        }

        let kinv = inverse_from_cholesky(l, n);
        let dims = obs.dims();
        let mut grad = vec![0.0; 2 + dims];
        let sf2 = hyper.signal_variance;
        let mut q = vec![0.0; dims];
        for i in 0..n {
            // Diagonal: only the signal and noise terms depend on theta.
            let w_ii = alpha[i] * alpha[i] - kinv[i * n + i];
            grad[0] += 0.5 * w_ii * sf2;
            grad[1] += 0.5 * w_ii * hyper.noise_variance;
            for j in 0..i {
                let w_ij = alpha[i] * alpha[j] - kinv[i * n + j];
                let mut r2 = 0.0;
                for d in 0..dims {
                    q[d] = ((obs.inputs[i][d] - obs.inputs[j][d]) / hyper.lengthscales[d]).powi(2);
                    r2 += q[d];
                }
                let r = r2.sqrt();
                let e = (-SQRT5 * r).exp();
                // Pairs appear twice in the symmetric trace.
                grad[0] += w_ij * sf2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * e;
                let common = w_ij * 5.0 / 3.0 * sf2 * (1.0 + SQRT5 * r) * e;
                for d in 0..dims {
                    grad[2 + d] += common * q[d];
                }
            }
        }
        let p = self.priors;
        grad[0] += (p.signal_variance.shape - 1.0) - p.signal_variance.rate * sf2;
        grad[1] += (p.noise_variance.shape - 1.0) - p.noise_variance.rate * hyper.noise_variance;
        for (d, l) in hyper.lengthscales.iter().enumerate() {
            let u = 1.0 / (l * l);
            let pr = &p.inverse_sq_lengthscale;
            grad[2 + d] += -2.0 * (pr.shape - 1.0) + 2.0 * pr.rate * u;
        }
        Some((value, grad, hyper))
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Box-projected L-BFGS ascent. Only ever accepts improving steps.
fn ascend(objective: &Profiled, start: &[f64], lo: &[f64], hi: &[f64], max_iter: usize) -> Option<(f64, GpHyperparams)> {
    const MEMORY: usize = 6;
    let mut x = start.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g, mut hyper) = objective.value(&x, true)?;
    let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for iter in 0..max_iter {
        // Two-loop recursion on the negated problem.
        let mut d: Vec<f64> = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y) in history.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push((a, rho));
        }
        if let Some((s, y)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        // Freeze coordinates pinned at a bound and pushing outward.
        let pin = |d: &mut Vec<f64>| {
            for i in 0..d.len() {
                if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
        };
        pin(&mut d);
        if dot(&d, &g) <= 0.0 {
            d = g.clone();
            pin(&mut d);
            history.clear();
        }
        let slope = dot(&d, &g);
        if slope <= 1e-14 {
            break;
        }
        let mut step = if iter == 0 || history.is_empty() {
            (1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lo, hi);
            if let Some((ft, _, _)) = objective.value(&trial, false) {
                let moved: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| (t - xi) * gi).sum();
                if ft >= f + 1e-4 * moved && ft > f {
                    if let Some((ft, gt, ht)) = objective.value(&trial, true) {
                        accepted = Some((trial, ft, gt, ht));
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew, hnew)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Gradient of the minimized function is -g.
        let y: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            history.push((s, y));
            if history.len() > MEMORY {
                history.remove(0);
            }
        }
        let gain = fnew - f;
        x = xn;
        f = fnew;
        g = gnew;
        hyper = hnew;
        if gain < 1e-9 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((f, hyper))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub bounds: SearchBounds,
    /// Extra starting point tried in addition to the restarts.
    pub warm_start: Option<GpHyperparams>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            max_iter: 200,
            bounds: SearchBounds::default(),
            warm_start: None,
        }
    }
}

/// Starting points: a fixed central guess, then uniform draws in the box,
/// then the optional warm start.
fn starting_points(dims: usize, options: &FitOptions) -> Vec<Vec<f64>> {
    let (lo, hi) = options.bounds.vectors(dims);
    let mut starts = Vec::with_capacity(options.restarts + 1);
    if options.restarts > 0 {
        let mut center = vec![0.0, (1e-2f64).ln()];
        center.extend(std::iter::repeat_n((0.5f64).ln(), dims));
        project(&mut center, &lo, &hi);
        starts.push(center);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, 0x6770));
    for _ in 1..options.restarts {
        starts.push(lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..=*h)).collect());
    }
    if let Some(w) = &options.warm_start {
        if w.lengthscales.len() == dims && w.validate().is_ok() {
            let mut t = theta_from_hyper(w);
            project(&mut t, &lo, &hi);
            starts.push(t);
        }
    }
    starts
}

/// Objective value at each starting point, as used by [`fit_map`].
pub fn starting_objectives(obs: &ObservationSet, priors: &GpPriors, options: &FitOptions) -> Vec<Option<f64>> {
    let objective = Profiled { obs, priors };
    starting_points(obs.dims(), options)
        .iter()
        .map(|t| objective.value(t, false).map(|(v, _, _)| v))
        .collect()
}

/// Multi-start MAP estimate; the constant mean is the GLS optimum for the
/// other hyperparameters. Restarts run in parallel; the best value wins with
/// ties going to the earliest start.
pub fn fit_map(obs: &ObservationSet, priors: &GpPriors, options: &FitOptions) -> Result<GpHyperparams> {
    if obs.len() < 2 {
        return Err(Error::config("GP fitting needs at least two observations"));
    }
    let (lo, hi) = options.bounds.vectors(obs.dims());
    let objective = Profiled { obs, priors };
    let results: Vec<Option<(f64, GpHyperparams)>> = starting_points(obs.dims(), options)
        .par_iter()
        .map(|start| ascend(&objective, start, &lo, &hi, options.max_iter))
        .collect();
    results
        .into_iter()
        .flatten()
        .fold(None::<(f64, GpHyperparams)>, |best, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        })
        .map(|(_, h)| h)
        .ok_or_else(|| Error::numeric(None, "every GP restart failed to factorize"))
}

/// A fitted GP: hyperparameters, Cholesky factor and `α`.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyperparams,
    obs: ObservationSet,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(obs: ObservationSet, hyper: GpHyperparams) -> Result<Self> {
        hyper.validate()?;
        if hyper.lengthscales.len() != obs.dims() {
            return Err(Error::Shape(format!(
                "{} lengthscales for {}-dimensional inputs",
                hyper.lengthscales.len(),
                obs.dims()
            )));
        }
        let n = obs.len();
        let factor = factorize(&gram(&obs.inputs, &hyper), n, &hyper)?;
        let resid: Vec<f64> = obs.targets.iter().map(|t| t - hyper.constant_mean).collect();
        let alpha = cho_solve(&factor.chol, n, &resid);
        Ok(GpModel {
            hyper,
            obs,
            chol: factor.chol,
            alpha,
            jitter: factor.jitter,
        })
    }

    pub fn fit(obs: ObservationSet, priors: &GpPriors, options: &FitOptions) -> Result<Self> {
        let hyper = fit_map(&obs, priors, options)?;
        Self::new(obs, hyper)
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    /// Diagonal jitter that made the covariance factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior of the latent function at a unit-cube point, in
    /// standardized units.
    pub fn predict_unit(&self, x: &[f64]) -> (f64, f64) {
        let n = self.obs.len();
        let mut k: Vec<f64> = self.obs.inputs.iter().map(|xi| matern52_ard(xi, x, &self.hyper)).collect();
        let mean = self.hyper.constant_mean + dot(&k, &self.alpha);
        solve_lower(&self.chol, n, &mut k);
        let var = (self.hyper.signal_variance - dot(&k, &k)).max(0.0);
        (mean, var)
    }

    /// Posterior mean and variance at a raw input, in target units.
    pub fn predict(&self, raw: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_unit(&self.obs.to_unit(raw));
        let s = self.obs.target_std;
        (m * s + self.obs.target_mean, v * s * s)
    }
}
