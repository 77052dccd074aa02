//! Multinomial and proportional-odds logistic regression.
//!
//! Both models are fit by damped Newton iterations on the ridge-penalised
//! log-likelihood. The negative Hessian at the optimum doubles as the
//! inverse covariance of the normal approximation used to draw parameters
//! for proper imputation.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::missingness::logistic;
use crate::rng::Rng;

pub const DEFAULT_RIDGE: f64 = 1e-4;
const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;

/// Dummy coding against level 1: predictor `k` at level `v` contributes a
/// block of `D_k - 1` indicators with a one at position `v - 2`.
pub fn encode_predictors(row: &[u8], cardinalities: &[usize]) -> Vec<f64> {
    let width: usize = cardinalities.iter().map(|d| d - 1).sum();
    let mut out = vec![0.0; width];
    encode_into(row, cardinalities, &mut out);
    out
}

pub(crate) fn encode_into(row: &[u8], cardinalities: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let mut offset = 0;
    for (&v, &d) in row.iter().zip(cardinalities) {
        if v >= 2 {
            out[offset + v as usize - 2] = 1.0;
        }
        offset += d - 1;
    }
}

/// Draws a level (1-based) from a probability vector.
pub fn sample_level(probs: &[f64], rng: &mut Rng) -> u8 {
    let mut u: f64 = rng.random();
    for (d, &p) in probs.iter().enumerate() {
        if u < p {
            return d as u8 + 1;
        }
        u -= p;
    }
    (probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) + 1) as u8
}

struct Objective {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Maximises a concave-ish objective; every accepted step is non-decreasing.
fn damped_newton(
    mut x: DVector<f64>,
    mut eval: impl FnMut(&DVector<f64>) -> Option<Objective>,
) -> Result<(DVector<f64>, Objective, Vec<f64>, usize)> {
    let mut cur = eval(&x).ok_or_else(|| Error::Numerical("non-finite log-likelihood at start".into()))?;
    let mut trace = vec![cur.value];
    let mut damping = 0.0f64;
    let dim = x.len();
    let mut iters = 0;
    while iters < MAX_ITER {
        iters += 1;
        if cur.grad.norm() < GRAD_TOL {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = -&cur.hess;
            for i in 0..dim {
                a[(i, i)] += damping;
            }
            let Some(chol) = a.cholesky() else {
                damping = (damping * 10.0).max(1e-8);
                continue;
            };
            let step = chol.solve(&cur.grad);
            let trial = &x + &step;
            match eval(&trial) {
                Some(next) if next.value >= cur.value => {
                    x = trial;
                    cur = next;
                    damping *= 0.1;
                    if damping < 1e-12 {
                        damping = 0.0;
                    }
                    accepted = true;
                    break;
                }
                _ => damping = (damping * 10.0).max(1e-6),
            }
        }
        trace.push(cur.value);
        if !accepted {
            break;
        }
    }
    Ok((x, cur, trace, iters))
}

fn covariance_factor(neg_hess: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = neg_hess.clone();
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    for attempt in 0..8 {
        if let Some(chol) = a.clone().cholesky() {
            let inv = chol.inverse();
            if let Some(c) = inv.cholesky() {
                return Ok(c.l());
            }
        }
        let jitter = scale * 1e-10 * 10f64.powi(attempt);
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
    }
    Err(Error::Numerical("information matrix is not positive definite".into()))
}

fn draw_normal(mean: &DVector<f64>, chol: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + chol * z
}

fn check_inputs(features: &DMatrix<f64>, labels: &[u8], n_levels: usize, ridge: f64) -> Result<()> {
    if labels.is_empty() || features.nrows() != labels.len() {
        return Err(Error::InvalidArgument("need one feature row per label and at least one label".into()));
    }
    if n_levels < 2 {
        return Err(Error::InvalidArgument("need at least two levels".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be non-negative")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y == 0 || y as usize > n_levels) {
        return Err(Error::InvalidArgument(format!("label {y} outside 1..={n_levels}")));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    Ok(())
}

/// Baseline-category logit with reference level 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MultinomialLogitModel {
    pub n_levels: usize,
    /// Row `c` holds (intercept, slopes) for level `c + 2`.
    pub coefficients: DMatrix<f64>,
}

impl MultinomialLogitModel {
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n_levels];
        for c in 0..self.n_levels - 1 {
            let row = self.coefficients.row(c);
            eta[c + 1] = row[0] + x.iter().enumerate().map(|(k, &v)| row[k + 1] * v).sum::<f64>();
        }
        softmax(&eta)
    }
}

pub(crate) fn softmax(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A fitted model together with its normal approximation.
#[derive(Clone, Debug)]
pub struct MultinomialFit {
    pub model: MultinomialLogitModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Penalised log-likelihood after each iteration.
    pub trace: Vec<f64>,
    params: DVector<f64>,
    cov_factor: DMatrix<f64>,
}

impl MultinomialFit {
    /// Model with parameters drawn from `N(estimate, inverse information)`.
    pub fn draw(&self, rng: &mut Rng) -> MultinomialLogitModel {
        let theta = draw_normal(&self.params, &self.cov_factor, rng);
        multinomial_from_params(&theta, self.model.n_levels)
    }
}

fn multinomial_from_params(theta: &DVector<f64>, n_levels: usize) -> MultinomialLogitModel {
    let width = theta.len() / (n_levels - 1);
    MultinomialLogitModel {
        n_levels,
        coefficients: DMatrix::from_row_slice(n_levels - 1, width, theta.as_slice()),
    }
}

fn multinomial_objective(
    features: &DMatrix<f64>,
    labels: &[u8],
    n_levels: usize,
    ridge: f64,
    theta: &DVector<f64>,
) -> Option<Objective> {
    let c = n_levels - 1;
    let w = features.ncols() + 1;
    let dim = c * w;
    let mut value = -0.5 * ridge * theta.norm_squared();
    let mut grad = -ridge * theta;
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        hess[(i, i)] = -ridge;
    }
    let mut x = vec![0.0; w];
    let mut outer = vec![0.0; w * w];
    let mut eta = vec![0.0; n_levels];
    for (i, &y) in labels.iter().enumerate() {
        x[0] = 1.0;
        for k in 1..w {
            x[k] = features[(i, k - 1)];
        }
        for cls in 0..c {
            eta[cls + 1] = (0..w).map(|k| theta[cls * w + k] * x[k]).sum();
        }
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + eta.iter().map(|&e| (e - max).exp()).sum::<f64>().ln();
        value += eta[y as usize - 1] - lse;
        let p: Vec<f64> = eta[1..].iter().map(|&e| (e - lse).exp()).collect();
        for cls in 0..c {
            let r = if y as usize == cls + 2 { 1.0 } else { 0.0 } - p[cls];
            for k in 0..w {
                grad[cls * w + k] += r * x[k];
            }
        }
        for a in 0..w {
            for b in 0..w {
                outer[a * w + b] = x[a] * x[b];
            }
        }
        for c1 in 0..c {
            for c2 in c1..c {
                let s = if c1 == c2 { p[c1] * (1.0 - p[c1]) } else { -p[c1] * p[c2] };
                if s == 0.0 {
                    continue;
                }
                for a in 0..w {
                    for b in 0..w {
                        hess[(c1 * w + a, c2 * w + b)] -= s * outer[a * w + b];
                    }
                }
            }
        }
    }
    for c1 in 0..c {
        for c2 in c1 + 1..c {
            for a in 0..w {
                for b in 0..w {
                    hess[(c2 * w + b, c1 * w + a)] = hess[(c1 * w + a, c2 * w + b)];
                }
            }
        }
    }
    value.is_finite().then_some(Objective { value, grad, hess })
}

/// Fits a multinomial logit to labels in `1..=n_levels`.
pub fn fit_multinomial(features: &DMatrix<f64>, labels: &[u8], n_levels: usize, ridge: f64) -> Result<MultinomialFit> {
    check_inputs(features, labels, n_levels, ridge)?;
    let w = features.ncols() + 1;
    let mut init = DVector::zeros((n_levels - 1) * w);
    // Start intercepts at smoothed empirical log-odds against level 1.
    let mut counts = vec![0.5f64; n_levels];
    for &y in labels {
        counts[y as usize - 1] += 1.0;
    }
    for c in 1..n_levels {
        init[(c - 1) * w] = (counts[c] / counts[0]).ln();
    }
    let (params, obj, trace, iterations) =
        damped_newton(init, |t| multinomial_objective(features, labels, n_levels, ridge, t))?;
    let cov_factor = covariance_factor(&-&obj.hess)?;
    Ok(MultinomialFit {
        model: multinomial_from_params(&params, n_levels),
        log_likelihood: obj.value,
        iterations,
        trace,
        params,
        cov_factor,
    })
}

/// Cumulative logit `P(Y <= d) = logistic(theta_d - x beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionalOddsModel {
    pub cutpoints: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl ProportionalOddsModel {
    pub fn n_levels(&self) -> usize {
        self.cutpoints.len() + 1
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let eta: f64 = x.iter().zip(&self.slopes).map(|(a, b)| a * b).sum();
        let mut out = Vec::with_capacity(self.n_levels());
        let mut prev = 0.0;
        for &t in &self.cutpoints {
            let f = logistic(t - eta);
            out.push(f - prev);
            prev = f;
        }
        out.push(logistic(eta - self.cutpoints[self.cutpoints.len() - 1]));
        out
    }
}

#[derive(Clone, Debug)]
pub struct PolrFit {
    pub model: ProportionalOddsModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
    /// Unconstrained parameters `(theta_1, ln gaps, beta)`.
    params: DVector<f64>,
    cov_factor: DMatrix<f64>,
}

impl PolrFit {
    /// Model with parameters drawn from the normal approximation in the
    /// unconstrained parameterisation, so cutpoints stay ordered.
    pub fn draw(&self, rng: &mut Rng) -> ProportionalOddsModel {
        let phi = draw_normal(&self.params, &self.cov_factor, rng);
        polr_from_params(&phi, self.model.n_levels())
    }
}

fn cutpoints_from(phi: &DVector<f64>, n_cut: usize) -> Vec<f64> {
    let mut cut = Vec::with_capacity(n_cut);
    cut.push(phi[0]);
    for t in 1..n_cut {
        cut.push(cut[t - 1] + phi[t].exp());
    }
    cut
}

fn polr_from_params(phi: &DVector<f64>, n_levels: usize) -> ProportionalOddsModel {
    let n_cut = n_levels - 1;
    ProportionalOddsModel {
        cutpoints: cutpoints_from(phi, n_cut),
        slopes: phi.as_slice()[n_cut..].to_vec(),
    }
}

/// `(F, f, f')` of the logistic cdf, with the infinite ends handled.
fn cdf_terms(t: f64) -> (f64, f64, f64) {
    if t == f64::INFINITY {
        (1.0, 0.0, 0.0)
    } else if t == f64::NEG_INFINITY {
        (0.0, 0.0, 0.0)
    } else {
        let f = logistic(t);
        let d = f * (1.0 - f);
        (f, d, d * (1.0 - 2.0 * f))
    }
}

fn polr_objective(features: &DMatrix<f64>, labels: &[u8], n_levels: usize, ridge: f64, phi: &DVector<f64>) -> Option<Objective> {
    let n_cut = n_levels - 1;
    let q = features.ncols();
    let dim = n_cut + q;
    let cut = cutpoints_from(phi, n_cut);
    let beta = &phi.as_slice()[n_cut..];

    // Derivatives in (theta, beta) space first.
    let mut value = -0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>();
    let mut g = DVector::<f64>::zeros(dim);
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..q {
        g[n_cut + k] = -ridge * beta[k];
        h[(n_cut + k, n_cut + k)] = -ridge;
    }
    let mut x = vec![0.0; q];
    for (i, &y) in labels.iter().enumerate() {
        let d = y as usize;
        for k in 0..q {
            x[k] = features[(i, k)];
        }
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let upper = if d < n_levels { cut[d - 1] - eta } else { f64::INFINITY };
        let lower = if d > 1 { cut[d - 2] - eta } else { f64::NEG_INFINITY };
        let (fa_cdf, fa, fpa) = cdf_terms(upper);
        let (fb_cdf, fb, fpb) = cdf_terms(lower);
        // Difference of cdfs without cancellation in the upper tail.
        let prob = if lower > 0.0 {
            logistic(-lower) - if upper.is_finite() { logistic(-upper) } else { 0.0 }
        } else {
            fa_cdf - fb_cdf
        };
        if !(prob > 0.0) {
            return None;
        }
        value += prob.ln();
        let ia = (d < n_levels).then(|| d - 1);
        let ib = (d > 1).then(|| d - 2);
        let p2 = prob * prob;
        // First derivatives.
        if let Some(a) = ia {
            g[a] += fa / prob;
        }
        if let Some(b) = ib {
            g[b] -= fb / prob;
        }
        let d_eta = -(fa - fb) / prob;
        // Second derivatives.
        let haa = fpa / prob - fa * fa / p2;
        let hbb = -fpb / prob - fb * fb / p2;
        let hab = fa * fb / p2;
        let ha_eta = -fpa / prob + fa * (fa - fb) / p2;
        let hb_eta = fpb / prob - fb * (fa - fb) / p2;
        let h_eta = (fpa - fpb) / prob - (fa - fb) * (fa - fb) / p2;
        if let Some(a) = ia {
            h[(a, a)] += haa;
        }
        if let Some(b) = ib {
            h[(b, b)] += hbb;
        }
        if let (Some(a), Some(b)) = (ia, ib) {
            h[(a, b)] += hab;
            h[(b, a)] += hab;
        }
        for k in 0..q {
            if x[k] == 0.0 {
                continue;
            }
            g[n_cut + k] += d_eta * x[k];
            if let Some(a) = ia {
                h[(a, n_cut + k)] += ha_eta * x[k];
                h[(n_cut + k, a)] += ha_eta * x[k];
            }
            if let Some(b) = ib {
                h[(b, n_cut + k)] += hb_eta * x[k];
                h[(n_cut + k, b)] += hb_eta * x[k];
            }
            for l in 0..q {
                h[(n_cut + k, n_cut + l)] += h_eta * x[k] * x[l];
            }
        }
    }
    if !value.is_finite() {
        return None;
    }

    // Chain rule to (theta_1, ln gaps, beta).
    let mut jac = DMatrix::<f64>::identity(dim, dim);
    for t in 0..n_cut {
        for e in 0..n_cut {
            jac[(t, e)] = if e == 0 {
                1.0
            } else if e <= t {
                phi[e].exp()
            } else {
                0.0
            };
        }
    }
    let grad = jac.transpose() * &g;
    let mut hess = jac.transpose() * &h * &jac;
    for e in 1..n_cut {
        let tail: f64 = (e..n_cut).map(|t| g[t]).sum();
        hess[(e, e)] += phi[e].exp() * tail;
    }
    Some(Objective { value, grad, hess })
}

/// Fits a proportional-odds model to labels in `1..=n_levels`.
pub fn fit_polr(features: &DMatrix<f64>, labels: &[u8], n_levels: usize, ridge: f64) -> Result<PolrFit> {
    check_inputs(features, labels, n_levels, ridge)?;
    let n_cut = n_levels - 1;
    let mut counts = vec![0.5f64; n_levels];
    for &y in labels {
        counts[y as usize - 1] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut init = DVector::zeros(n_cut + features.ncols());
    let mut cum = 0.0;
    let mut prev = 0.0;
    for t in 0..n_cut {
        cum += counts[t];
        let theta = crate::missingness::logit(cum / total);
        init[t] = if t == 0 { theta } else { (theta - prev).max(1e-3).ln() };
        prev = theta;
    }
    let (params, obj, trace, iterations) =
        damped_newton(init, |p| polr_objective(features, labels, n_levels, ridge, p))?;
    let cov_factor = covariance_factor(&-&obj.hess)?;
    Ok(PolrFit {
        model: polr_from_params(&params, n_levels),
        log_likelihood: obj.value,
        iterations,
        trace,
        params,
        cov_factor,
    })
}
