//! Truncated Dirichlet-process mixture of multivariate normals over latent
//! continuous variables. Each ordinal level is the window of its latent
//! value between fixed cutoffs.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ImputationResult, IncompleteDataset, MaskMatrix, OrdinalDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::stick::{self, occupancy, sample_log_index, SweepTrace};

pub const DEFAULT_CLASSES: usize = 50;

const JITTER: f64 = 1e-8;

/// Interior cutoffs for one variable; the outer bounds are implicitly
/// infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct Cutoffs {
    interior: Vec<f64>,
}

impl Cutoffs {
    /// Equal-probability cutoffs under a standard normal.
    pub fn standard(levels: usize) -> Self {
        let normal = std_normal();
        Cutoffs {
            interior: (1..levels).map(|d| normal.inverse_cdf(d as f64 / levels as f64)).collect(),
        }
    }

    pub fn new(interior: Vec<f64>) -> Result<Self> {
        if interior.is_empty() || interior.iter().any(|x| !x.is_finite()) || interior.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("cutoffs must be finite and strictly increasing".into()));
        }
        Ok(Cutoffs { interior })
    }

    pub fn levels(&self) -> usize {
        self.interior.len() + 1
    }

    /// `(lower, upper]` window for a level.
    pub fn window(&self, level: u8) -> (f64, f64) {
        let d = level as usize;
        let lo = if d == 1 { f64::NEG_INFINITY } else { self.interior[d - 2] };
        let hi = if d == self.levels() { f64::INFINITY } else { self.interior[d - 1] };
        (lo, hi)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// The level whose window `(lower, upper]` contains `x`.
pub fn level_of(x: f64, cutoffs: &Cutoffs) -> u8 {
    (cutoffs.interior.iter().take_while(|&&g| x > g).count() + 1) as u8
}

/// Draws from `N(mean, sd^2)` restricted to `(lower, upper]`.
///
/// Uses Robert's (1995) samplers: exponential or uniform proposals in the
/// tails, plain normal or uniform proposals around the mode.
pub fn sample_truncated_normal(mean: f64, sd: f64, lower: f64, upper: f64, rng: &mut Rng) -> Result<f64> {
    if !(lower < upper) || !(sd > 0.0) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad truncated normal: mean {mean}, sd {sd}, window ({lower}, {upper}]"
        )));
    }
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = if a >= 0.0 {
        std_tail(a, b, rng)
    } else if b <= 0.0 {
        -std_tail(-b, -a, rng)
    } else {
        std_straddle(a, b, rng)
    };
    Ok((mean + sd * z).clamp(lower.next_up(), upper))
}

// Standard normal on [a, b] with 0 <= a < b.
fn std_tail(a: f64, b: f64, rng: &mut Rng) -> f64 {
    let root = (a * a + 4.0).sqrt();
    let lambda = (a + root) / 2.0;
    let exp_threshold = 2.0 / (a + root) * ((a * a - a * root) / 4.0 + 0.5).exp();
    if b - a > exp_threshold {
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = a + e / lambda;
            if z > b {
                continue;
            }
            let u: f64 = rng.random();
            if u <= (-(z - lambda) * (z - lambda) / 2.0).exp() {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        let u: f64 = rng.random();
        if u <= ((a * a - z * z) / 2.0).exp() {
            return z;
        }
    }
}

// Standard normal on [a, b] with a < 0 < b.
fn std_straddle(a: f64, b: f64, rng: &mut Rng) -> f64 {
    if b - a >= (2.0 * std::f64::consts::PI).sqrt() {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a && z <= b {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        let u: f64 = rng.random();
        if u <= (-z * z / 2.0).exp() {
            return z;
        }
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c);
    }
    let n = sym.nrows();
    (sym + DMatrix::identity(n, n) * JITTER)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance not positive definite after jitter".into()))
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = cholesky(m)?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

fn std_normal_vec(p: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws from a normal given its precision matrix and `precision * mean`.
fn normal_from_precision(precision: &DMatrix<f64>, shift: &DVector<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
    let chol = cholesky(precision)?;
    let mean = chol.solve(shift);
    let l = chol.l();
    let z = std_normal_vec(mean.len(), rng);
    let offset = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular precision factor".into()))?;
    Ok(mean + offset)
}

/// Wishart draw with mean `df * scale`, by the Bartlett decomposition.
pub fn sample_wishart(df: f64, scale: &DMatrix<f64>, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(df > (p - 1) as f64) {
        return Err(Error::InvalidArgument(format!("Wishart degrees of freedom {df} too small for dimension {p}")));
    }
    let l = cholesky(scale)?.l();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = ChiSquared::new(df - i as f64).expect("positive df").sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    Ok(&la * la.transpose())
}

/// Inverse-Wishart draw with mean `scale / (df - p - 1)`.
pub fn sample_inverse_wishart(df: f64, scale: &DMatrix<f64>, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let w = sample_wishart(df, &spd_inverse(scale)?, rng)?;
    spd_inverse(&w)
}

/// Hyperprior constants. `m ~ N(a_m, B_m)`, `V ~ IW(a_V, B_V)`,
/// `S ~ W(a_S, B_S)`, class covariances `IW(nu, S)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmmvnPrior {
    pub a_m: Vec<f64>,
    pub b_m: Vec<Vec<f64>>,
    pub a_v: f64,
    pub b_v: Vec<Vec<f64>>,
    pub a_s: f64,
    pub b_s: Vec<Vec<f64>>,
    pub nu: f64,
}

fn scaled_identity(p: usize, s: f64) -> Vec<Vec<f64>> {
    (0..p).map(|i| (0..p).map(|j| if i == j { s } else { 0.0 }).collect()).collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

impl DpmmvnPrior {
    pub fn vague(p: usize) -> Self {
        let df = p as f64 + 2.0;
        DpmmvnPrior {
            a_m: vec![0.0; p],
            b_m: scaled_identity(p, 10.0),
            a_v: df,
            b_v: scaled_identity(p, 1.0),
            a_s: df,
            b_s: scaled_identity(p, 1.0 / df),
            nu: df,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let square = |m: &Vec<Vec<f64>>| m.len() == p && m.iter().all(|r| r.len() == p);
        if self.a_m.len() != p || !square(&self.b_m) || !square(&self.b_v) || !square(&self.b_s) {
            return Err(Error::Config(format!("hyperprior dimensions do not match {p} variables")));
        }
        let min_df = (p - 1) as f64;
        if !(self.a_v > min_df && self.a_s > min_df && self.nu > min_df) {
            return Err(Error::Config(format!("degrees of freedom must exceed {min_df}")));
        }
        for m in [&self.b_m, &self.b_v, &self.b_s] {
            if to_matrix(m).cholesky().is_none() {
                return Err(Error::Config("hyperprior scale matrices must be positive definite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmmvnConfig {
    pub classes: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub imputations: usize,
    #[serde(default = "yes")]
    pub grow: bool,
    /// Defaults to [`DpmmvnPrior::vague`].
    #[serde(default)]
    pub prior: Option<DpmmvnPrior>,
}

fn yes() -> bool {
    true
}

impl DpmmvnConfig {
    pub fn new(n_iter: usize, burn_in: usize, imputations: usize) -> Self {
        DpmmvnConfig {
            classes: DEFAULT_CLASSES,
            n_iter,
            burn_in,
            imputations,
            grow: true,
            prior: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpmmvnState {
    pub z: Vec<usize>,
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    pub alpha: f64,
    /// Latent values, row-major `n x p`.
    pub x: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    pub m: DVector<f64>,
    pub vmat: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl DpmmvnState {
    pub fn classes(&self) -> usize {
        self.pi.len()
    }

    pub fn occupied(&self) -> usize {
        occupancy(&self.z, self.classes()).iter().filter(|&&c| c > 0).count()
    }

    /// `P(Y_j = 1)` under the current mixture.
    pub fn marginal_first_level(&self, j: usize, cutoffs: &Cutoffs) -> f64 {
        let normal = std_normal();
        let (_, hi) = cutoffs.window(1);
        self.pi
            .iter()
            .zip(self.mu.iter().zip(&self.sigma))
            .map(|(p, (mu, sig))| p * normal.cdf((hi - mu[j]) / sig[(j, j)].sqrt()))
            .sum()
    }
}

struct Prior {
    a_m: DVector<f64>,
    b_m_inv: DMatrix<f64>,
    a_v: f64,
    b_v: DMatrix<f64>,
    a_s: f64,
    b_s_inv: DMatrix<f64>,
    nu: f64,
}

pub struct DpmmvnSampler<'a> {
    pub state: DpmmvnState,
    pub current: OrdinalDataset,
    pub cutoffs: Vec<Cutoffs>,
    mask: &'a MaskMatrix,
    prior: Prior,
    grow: bool,
}

impl<'a> DpmmvnSampler<'a> {
    pub fn new(input: &'a IncompleteDataset, classes: usize, grow: bool, prior: &DpmmvnPrior, rng: &mut Rng) -> Result<Self> {
        let (n, p) = (input.n(), input.p());
        if classes == 0 {
            return Err(Error::InvalidArgument("need at least one latent class".into()));
        }
        prior.validate(p)?;
        let cutoffs: Vec<Cutoffs> = input.cardinalities().iter().map(|&d| Cutoffs::standard(d)).collect();
        let mut x = vec![0.0; n * p];
        let mut current = input.data().clone();
        for j in 0..p {
            for i in 0..n {
                x[i * p + j] = match input.get(i, j) {
                    Some(level) => {
                        let (lo, hi) = cutoffs[j].window(level);
                        sample_truncated_normal(0.0, 1.0, lo, hi, rng)?
                    }
                    None => {
                        let v: f64 = rng.sample(StandardNormal);
                        current.set(i, j, level_of(v, &cutoffs[j]));
                        v
                    }
                };
            }
        }
        let pr = Prior {
            a_m: DVector::from_vec(prior.a_m.clone()),
            b_m_inv: spd_inverse(&to_matrix(&prior.b_m))?,
            a_v: prior.a_v,
            b_v: to_matrix(&prior.b_v),
            a_s: prior.a_s,
            b_s_inv: spd_inverse(&to_matrix(&prior.b_s))?,
            nu: prior.nu,
        };
        let pf = p as f64;
        let vmat = if pr.a_v > pf + 1.0 { &pr.b_v / (pr.a_v - pf - 1.0) } else { pr.b_v.clone() };
        let s = spd_inverse(&pr.b_s_inv)? * pr.a_s;
        let sigma0 = if pr.nu > pf + 1.0 { &s / (pr.nu - pf - 1.0) } else { s.clone() };
        let vchol = cholesky(&vmat)?.l();
        let mu = (0..classes)
            .map(|_| &pr.a_m + &vchol * std_normal_vec(p, rng))
            .collect();
        let alpha = 1.0;
        let v = stick::sample_sticks(&vec![0; classes], alpha, rng);
        let state = DpmmvnState {
            z: (0..n).map(|_| rng.random_range(0..classes)).collect(),
            pi: stick::stick_break(&v)?,
            v,
            alpha,
            x,
            mu,
            sigma: vec![sigma0; classes],
            m: pr.a_m.clone(),
            vmat,
            s,
        };
        Ok(DpmmvnSampler {
            state,
            current,
            cutoffs,
            mask: input.mask(),
            prior: pr,
            grow,
        })
    }

    /// Checks the cutoff-window and positive-definiteness invariants.
    pub fn check(&self) -> Result<()> {
        let p = self.current.p();
        for i in 0..self.current.n() {
            for j in 0..p {
                let x = self.state.x[i * p + j];
                let level = self.current.get(i, j);
                if !x.is_finite() || level_of(x, &self.cutoffs[j]) != level {
                    return Err(Error::Numerical(format!("latent ({i}, {j}) = {x} outside the window of level {level}")));
                }
            }
        }
        for m in self.state.sigma.iter().chain([&self.state.vmat, &self.state.s]) {
            if m.clone().cholesky().is_none() {
                return Err(Error::Numerical("covariance draw not positive definite".into()));
            }
        }
        Ok(())
    }

    fn update_latents(&mut self, rng: &mut Rng) -> Result<()> {
        let p = self.current.p();
        let precisions = self
            .state
            .sigma
            .iter()
            .map(spd_inverse)
            .collect::<Result<Vec<_>>>()?;
        for i in 0..self.current.n() {
            let c = self.state.z[i];
            let (prec, mu) = (&precisions[c], &self.state.mu[c]);
            let row = &mut self.state.x[i * p..(i + 1) * p];
            for j in 0..p {
                let pjj = prec[(j, j)];
                let mut shift = 0.0;
                for l in (0..p).filter(|&l| l != j) {
                    shift += prec[(j, l)] * (row[l] - mu[l]);
                }
                let mean = mu[j] - shift / pjj;
                let sd = pjj.sqrt().recip();
                if self.mask.is_missing(i, j) {
                    row[j] = mean + sd * rng.sample::<f64, _>(StandardNormal);
                    self.current.set(i, j, level_of(row[j], &self.cutoffs[j]));
                } else {
                    let (lo, hi) = self.cutoffs[j].window(self.current.get(i, j));
                    row[j] = sample_truncated_normal(mean, sd, lo, hi, rng)?;
                }
            }
        }
        Ok(())
    }

    fn update_labels(&mut self, rng: &mut Rng) -> Result<()> {
        let p = self.current.p();
        let k = self.state.classes();
        let factors = self
            .state
            .sigma
            .iter()
            .map(|s| cholesky(s).map(|c| c.l()))
            .collect::<Result<Vec<_>>>()?;
        let consts: Vec<f64> = factors
            .iter()
            .zip(&self.state.pi)
            .map(|(l, pi)| pi.ln() - (0..p).map(|d| l[(d, d)].ln()).sum::<f64>())
            .collect();
        let mut log_w = vec![0.0; k];
        let mut resid = vec![0.0; p];
        for i in 0..self.current.n() {
            let row = &self.state.x[i * p..(i + 1) * p];
            for c in 0..k {
                let (l, mu) = (&factors[c], &self.state.mu[c]);
                // Forward substitution for L y = x - mu.
                let mut q = 0.0;
                for a in 0..p {
                    let mut v = row[a] - mu[a];
                    for b in 0..a {
                        v -= l[(a, b)] * resid[b];
                    }
                    resid[a] = v / l[(a, a)];
                    q += resid[a] * resid[a];
                }
                log_w[c] = consts[c] - 0.5 * q;
            }
            self.state.z[i] = sample_log_index(&mut log_w, rng);
        }
        Ok(())
    }

    fn add_classes(&mut self, count: usize, rng: &mut Rng) -> Result<()> {
        let p = self.current.p();
        let vchol = cholesky(&self.state.vmat)?.l();
        for _ in 0..count {
            self.state.mu.push(&self.state.m + &vchol * std_normal_vec(p, rng));
            self.state.sigma.push(sample_inverse_wishart(self.prior.nu, &self.state.s, rng)?);
        }
        Ok(())
    }

    fn update_components(&mut self, counts: &[usize], rng: &mut Rng) -> Result<()> {
        let p = self.current.p();
        let k = counts.len();
        let mut sums = vec![DVector::zeros(p); k];
        for i in 0..self.current.n() {
            let row = DVector::from_row_slice(&self.state.x[i * p..(i + 1) * p]);
            sums[self.state.z[i]] += row;
        }
        let vinv = spd_inverse(&self.state.vmat)?;
        let vinv_m = &vinv * &self.state.m;
        for c in 0..k {
            let sig_inv = spd_inverse(&self.state.sigma[c])?;
            let precision = &vinv + &sig_inv * counts[c] as f64;
            let shift = &vinv_m + &sig_inv * &sums[c];
            self.state.mu[c] = normal_from_precision(&precision, &shift, rng)?;
        }
        let mut scatter = vec![DMatrix::zeros(p, p); k];
        for i in 0..self.current.n() {
            let c = self.state.z[i];
            let d = DVector::from_row_slice(&self.state.x[i * p..(i + 1) * p]) - &self.state.mu[c];
            scatter[c] += &d * d.transpose();
        }
        for c in 0..k {
            let scale = &self.state.s + &scatter[c];
            self.state.sigma[c] = sample_inverse_wishart(self.prior.nu + counts[c] as f64, &scale, rng)?;
        }
        Ok(())
    }

    fn update_hyper(&mut self, rng: &mut Rng) -> Result<()> {
        let p = self.current.p();
        let k = self.state.classes();
        let vinv = spd_inverse(&self.state.vmat)?;
        let mu_sum = self.state.mu.iter().fold(DVector::zeros(p), |a, m| a + m);
        let precision = &self.prior.b_m_inv + &vinv * k as f64;
        let shift = &self.prior.b_m_inv * &self.prior.a_m + &vinv * mu_sum;
        self.state.m = normal_from_precision(&precision, &shift, rng)?;

        let mut spread = self.prior.b_v.clone();
        for mu in &self.state.mu {
            let d = mu - &self.state.m;
            spread += &d * d.transpose();
        }
        self.state.vmat = sample_inverse_wishart(self.prior.a_v + k as f64, &spread, rng)?;

        let mut inv_sum = self.prior.b_s_inv.clone();
        for s in &self.state.sigma {
            inv_sum += spd_inverse(s)?;
        }
        let df = self.prior.a_s + k as f64 * self.prior.nu;
        self.state.s = sample_wishart(df, &spd_inverse(&inv_sum)?, rng)?;
        Ok(())
    }

    /// One full Gibbs scan.
    pub fn sweep(&mut self, rng: &mut Rng) -> Result<()> {
        self.update_latents(rng)?;
        self.update_labels(rng)?;
        let mut counts = occupancy(&self.state.z, self.state.classes());
        if let Some(map) = stick::label_swaps(&mut counts, self.state.alpha, rng) {
            self.state.z.iter_mut().for_each(|z| *z = map[*z]);
            stick::permute(&mut self.state.mu, &map);
            stick::permute(&mut self.state.sigma, &map);
        }
        if self.grow && counts.iter().all(|&c| c > 0) {
            self.add_classes(stick::K_GROWTH_STEP, rng)?;
            counts.resize(counts.len() + stick::K_GROWTH_STEP, 0);
        }
        self.update_components(&counts, rng)?;
        self.update_hyper(rng)?;
        self.state.v = stick::sample_sticks(&counts, self.state.alpha, rng);
        self.state.pi = stick::stick_break(&self.state.v)?;
        self.state.alpha = stick::sample_alpha(&self.state.v, rng);
        debug_assert!(self.check().is_ok());
        Ok(())
    }

    pub fn trace_row(&self, sweep: usize) -> SweepTrace {
        SweepTrace {
            sweep,
            classes: self.state.classes(),
            occupied: self.state.occupied(),
            alpha: self.state.alpha,
            marginals: (0..self.current.p())
                .map(|j| self.state.marginal_first_level(j, &self.cutoffs[j]))
                .collect(),
        }
    }
}

pub fn dpmmvn_impute(input: &IncompleteDataset, config: &DpmmvnConfig, rng_seed: u64) -> Result<ImputationResult> {
    let saves = stick::save_points(config.n_iter, config.burn_in, config.imputations)?;
    input.check_imputable()?;
    let mut diagnostics = BTreeMap::new();
    if input.mask().is_empty() {
        return Ok(ImputationResult {
            method: "MI-DPMMVN".into(),
            seed: rng_seed,
            completed: vec![input.data().clone(); config.imputations],
            diagnostics,
            trace: Vec::new(),
        });
    }
    let prior = config.prior.clone().unwrap_or_else(|| DpmmvnPrior::vague(input.p()));
    let mut rng = rng::substream(rng_seed, &[0]);
    let mut sampler = DpmmvnSampler::new(input, config.classes, config.grow, &prior, &mut rng)?;
    let mut completed = Vec::with_capacity(saves.len());
    let mut trace = Vec::with_capacity(config.n_iter);
    let mut next = saves.iter().peekable();
    let mut post_occupied = 0.0;
    for t in 1..=config.n_iter {
        sampler
            .sweep(&mut rng)
            .map_err(|e| Error::Numerical(format!("sweep {t}: {e}")))?;
        trace.push(sampler.trace_row(t));
        if t > config.burn_in {
            post_occupied += sampler.state.occupied() as f64;
        }
        if next.peek() == Some(&&t) {
            completed.push(sampler.current.clone());
            next.next();
        }
    }
    sampler.check()?;
    diagnostics.insert("final_classes".into(), sampler.state.classes() as f64);
    diagnostics.insert(
        "mean_occupied_classes".into(),
        post_occupied / (config.n_iter - config.burn_in) as f64,
    );
    Ok(ImputationResult {
        method: "MI-DPMMVN".into(),
        seed: rng_seed,
        completed,
        diagnostics,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VariableSpec;

    #[test]
    fn level_of_windows() {
        let c = Cutoffs::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(level_of(0.5, &c), 2);
        assert_eq!(level_of(0.0, &c), 1);
        assert_eq!(level_of(1.0, &c), 2);
        assert_eq!(level_of(-3.0, &c), 1);
        assert_eq!(level_of(7.0, &c), 3);
        assert_eq!(c.window(2), (0.0, 1.0));
        assert_eq!(c.window(1).0, f64::NEG_INFINITY);
    }

    #[test]
    fn standard_cutoffs_are_quantiles() {
        let c = Cutoffs::standard(4);
        assert!(c.interior()[1].abs() < 1e-12);
        assert!((c.interior()[0] + 0.6744897501960817).abs() < 1e-9);
        assert!(Cutoffs::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn truncated_normal_moments() {
        let mut rng = rng::from_seed(1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03, "{mean} {var}");

        let half: f64 = (0..n)
            .map(|_| sample_truncated_normal(0.0, 1.0, 0.0, f64::INFINITY, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((half - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02, "{half}");
    }

    #[test]
    fn truncated_normal_stays_in_window() {
        let mut rng = rng::from_seed(2);
        for &(m, s, lo, hi) in &[(0.0, 1.0, 5.0, 5.001), (3.0, 0.5, -1.0, -0.5), (0.0, 2.0, -0.1, 0.1), (1.0, 1.0, 40.0, f64::INFINITY)] {
            for _ in 0..2000 {
                let x = sample_truncated_normal(m, s, lo, hi, &mut rng).unwrap();
                assert!(x > lo && x <= hi, "{x} not in ({lo}, {hi}]");
            }
        }
        assert!(sample_truncated_normal(0.0, 1.0, 1.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, 0.0, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn wishart_mean() {
        let mut rng = rng::from_seed(3);
        let scale = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let n = 20_000;
        let mut acc = DMatrix::zeros(2, 2);
        let mut acc_iw = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += sample_wishart(5.0, &scale, &mut rng).unwrap();
            acc_iw += sample_inverse_wishart(6.0, &scale, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let mean_iw = acc_iw / n as f64;
        // E W = df * scale; E IW = scale / (df - p - 1).
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            assert!((mean[(i, j)] - 5.0 * scale[(i, j)]).abs() < 0.1, "{mean}");
            assert!((mean_iw[(i, j)] - scale[(i, j)] / 3.0).abs() < 0.02, "{mean_iw}");
        }
    }

    fn vars(cards: &[usize]) -> Vec<VariableSpec> {
        cards
            .iter()
            .enumerate()
            .map(|(j, &d)| VariableSpec::new(format!("v{j}"), d).unwrap())
            .collect()
    }

    #[test]
    fn observed_latents_respect_windows() {
        let cols = vec![
            (0..50).map(|i| (i % 3 + 1) as u8).collect(),
            (0..50).map(|i| (i % 2 + 1) as u8).collect(),
        ];
        let input = IncompleteDataset::from_columns(vars(&[3, 2]), cols).unwrap();
        let mut rng = rng::from_seed(4);
        let mut s = DpmmvnSampler::new(&input, 5, true, &DpmmvnPrior::vague(2), &mut rng).unwrap();
        s.check().unwrap();
        for _ in 0..30 {
            s.sweep(&mut rng).unwrap();
            s.check().unwrap();
            assert_eq!(s.current, *input.data());
        }
    }

    #[test]
    fn empty_mask_and_determinism() {
        let data = OrdinalDataset::new(vars(&[2, 3]), vec![vec![1, 2, 1], vec![3, 1, 2]]).unwrap();
        let input = IncompleteDataset::fully_observed(&data);
        let res = dpmmvn_impute(&input, &DpmmvnConfig::new(10, 5, 2), 1).unwrap();
        assert!(res.completed.iter().all(|z| *z == data));

        let cols = vec![
            (0..30).map(|i| if i % 4 == 0 { 0 } else { (i % 3 + 1) as u8 }).collect(),
            (0..30).map(|i| (i % 2 + 1) as u8).collect(),
        ];
        let input = IncompleteDataset::from_columns(vars(&[3, 2]), cols).unwrap();
        let cfg = DpmmvnConfig {
            classes: 4,
            ..DpmmvnConfig::new(20, 10, 2)
        };
        let a = dpmmvn_impute(&input, &cfg, 7).unwrap();
        let b = dpmmvn_impute(&input, &cfg, 7).unwrap();
        assert_eq!(a.completed, b.completed);
        a.verify(&input).unwrap();
    }

    #[test]
    fn prior_validation() {
        assert!(DpmmvnPrior::vague(3).validate(3).is_ok());
        assert!(DpmmvnPrior::vague(3).validate(2).is_err());
        let mut bad = DpmmvnPrior::vague(2);
        bad.nu = 0.5;
        assert!(bad.validate(2).is_err());
    }
}
