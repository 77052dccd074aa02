//! Truncated Dirichlet-process mixture of products of multinomials.
//!
//! Rows belong to latent classes; within a class the variables are
//! independent categorical draws. The Gibbs sampler updates, in order, the
//! class labels (followed by Metropolis label swaps that let large classes
//! move to early sticks), the per-class level probabilities (uniform Dirichlet
//! prior), the stick proportions, the concentration parameter and finally
//! the missing cells, which are redrawn from their row's class.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{ImputationResult, IncompleteDataset, MaskMatrix, OrdinalDataset};
use crate::error::{Error, Result};
use crate::glm::sample_level;
use crate::mice::{initialize_with, ConditionalKind, ConditionalModelSpec, Initializer};
use crate::rng::{self, Rng};
use crate::stick::{self, occupancy, sample_log_index, SweepTrace};

pub const DEFAULT_CLASSES: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmpmConfig {
    pub classes: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub imputations: usize,
    /// Grow the truncation level when every class is occupied.
    #[serde(default = "yes")]
    pub grow: bool,
}

fn yes() -> bool {
    true
}

impl DpmpmConfig {
    pub fn new(n_iter: usize, burn_in: usize, imputations: usize) -> Self {
        DpmpmConfig {
            classes: DEFAULT_CLASSES,
            n_iter,
            burn_in,
            imputations,
            grow: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpmpmState {
    /// Class labels, 0-based.
    pub z: Vec<usize>,
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    /// `lambda[k][j][d]` = P(Y_j = d + 1 | class k).
    pub lambda: Vec<Vec<Vec<f64>>>,
    pub alpha: f64,
}

impl DpmpmState {
    pub fn classes(&self) -> usize {
        self.pi.len()
    }

    pub fn occupied(&self) -> usize {
        occupancy(&self.z, self.classes()).iter().filter(|&&c| c > 0).count()
    }

    /// Checks the weight and probability-vector invariants.
    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical(format!("mixture weights sum to {sum}")));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Numerical(format!("concentration {} not positive", self.alpha)));
        }
        for probs in self.lambda.iter().flatten() {
            let s: f64 = probs.iter().sum();
            if (s - 1.0).abs() > 1e-10 || probs.iter().any(|&p| p < 0.0) {
                return Err(Error::Numerical("class level probabilities not normalised".into()));
            }
        }
        Ok(())
    }

    /// `P(Y_j = level)` under the current mixture.
    pub fn marginal(&self, j: usize, level: u8) -> f64 {
        self.pi
            .iter()
            .zip(&self.lambda)
            .map(|(p, lam)| p * lam[j][level as usize - 1])
            .sum()
    }
}

fn dirichlet_ones_plus(counts: &[usize], rng: &mut Rng) -> Vec<f64> {
    let mut g: Vec<f64> = counts
        .iter()
        .map(|&c| Gamma::new(1.0 + c as f64, 1.0).expect("valid gamma").sample(rng))
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s);
    g
}

fn prior_lambda(cards: &[usize], rng: &mut Rng) -> Vec<Vec<f64>> {
    cards.iter().map(|&d| dirichlet_ones_plus(&vec![0; d], rng)).collect()
}

/// Gibbs sampler over the completed data.
pub struct DpmpmSampler<'a> {
    pub state: DpmpmState,
    pub current: OrdinalDataset,
    mask: &'a MaskMatrix,
    missing: Vec<(usize, usize)>,
    cards: Vec<usize>,
    grow: bool,
    log_lambda: Vec<f64>,
    log_w: Vec<f64>,
}

impl<'a> DpmpmSampler<'a> {
    /// Marginal initial fill of the missing cells, uniform class labels,
    /// prior draws elsewhere.
    pub fn new(input: &'a IncompleteDataset, classes: usize, grow: bool, rng: &mut Rng) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidArgument("need at least one latent class".into()));
        }
        let model = ConditionalModelSpec::new(ConditionalKind::Cart);
        let (current, _) = initialize_with(input, Initializer::Marginal, &model, rng)?;
        let cards = input.cardinalities();
        let alpha = 1.0;
        let v = stick::sample_sticks(&vec![0; classes], alpha, rng);
        let state = DpmpmState {
            z: (0..input.n()).map(|_| rand::Rng::random_range(rng, 0..classes)).collect(),
            pi: stick::stick_break(&v)?,
            v,
            lambda: (0..classes).map(|_| prior_lambda(&cards, rng)).collect(),
            alpha,
        };
        let mask = input.mask();
        let missing = (0..input.p())
            .flat_map(|j| mask.missing_rows(j).into_iter().map(move |i| (i, j)))
            .collect();
        Ok(DpmpmSampler {
            state,
            current,
            mask,
            missing,
            cards,
            grow,
            log_lambda: Vec::new(),
            log_w: Vec::new(),
        })
    }

    /// Builds a sampler from an explicit state, for tests and restarts.
    pub fn from_state(input: &'a IncompleteDataset, current: OrdinalDataset, state: DpmpmState, grow: bool) -> Self {
        let mask = input.mask();
        let missing = (0..input.p())
            .flat_map(|j| mask.missing_rows(j).into_iter().map(move |i| (i, j)))
            .collect();
        DpmpmSampler {
            state,
            current,
            mask,
            missing,
            cards: input.cardinalities(),
            grow,
            log_lambda: Vec::new(),
            log_w: Vec::new(),
        }
    }

    pub fn mask(&self) -> &MaskMatrix {
        self.mask
    }

    /// One full Gibbs scan.
    pub fn sweep(&mut self, rng: &mut Rng) {
        let n = self.current.n();
        let p = self.current.p();
        let k = self.state.classes();
        let max_d = self.cards.iter().copied().max().unwrap_or(2);

        // Class labels.
        self.log_lambda.clear();
        self.log_lambda.resize(k * p * max_d, f64::NEG_INFINITY);
        for (c, lam) in self.state.lambda.iter().enumerate() {
            for (j, probs) in lam.iter().enumerate() {
                for (d, &pr) in probs.iter().enumerate() {
                    self.log_lambda[(c * p + j) * max_d + d] = pr.ln();
                }
            }
        }
        let log_pi: Vec<f64> = self.state.pi.iter().map(|p| p.ln()).collect();
        self.log_w.resize(k, 0.0);
        for i in 0..n {
            for c in 0..k {
                let mut s = log_pi[c];
                for j in 0..p {
                    s += self.log_lambda[(c * p + j) * max_d + self.current.get(i, j) as usize - 1];
                }
                self.log_w[c] = s;
            }
            self.state.z[i] = sample_log_index(&mut self.log_w, rng);
        }

        let mut counts = occupancy(&self.state.z, k);
        if let Some(map) = stick::label_swaps(&mut counts, self.state.alpha, rng) {
            self.state.z.iter_mut().for_each(|z| *z = map[*z]);
            stick::permute(&mut self.state.lambda, &map);
        }
        if self.grow && counts.iter().all(|&c| c > 0) {
            for _ in 0..stick::K_GROWTH_STEP {
                self.state.lambda.push(prior_lambda(&self.cards, rng));
                counts.push(0);
            }
        }
        let k = counts.len();

        // Level probabilities.
        let mut level_counts: Vec<Vec<Vec<usize>>> =
            (0..k).map(|_| self.cards.iter().map(|&d| vec![0; d]).collect()).collect();
        for i in 0..n {
            let c = self.state.z[i];
            for j in 0..p {
                level_counts[c][j][self.current.get(i, j) as usize - 1] += 1;
            }
        }
        for c in 0..k {
            for j in 0..p {
                self.state.lambda[c][j] = dirichlet_ones_plus(&level_counts[c][j], rng);
            }
        }

        // Sticks and concentration.
        self.state.v = stick::sample_sticks(&counts, self.state.alpha, rng);
        self.state.pi = stick::stick_break(&self.state.v).expect("last stick is one");
        self.state.alpha = stick::sample_alpha(&self.state.v, rng);

        // Missing cells.
        for &(i, j) in &self.missing {
            let c = self.state.z[i];
            let level = sample_level(&self.state.lambda[c][j], rng);
            self.current.set(i, j, level);
        }

        debug_assert!(self.state.check().is_ok());
    }

    pub fn trace_row(&self, sweep: usize) -> SweepTrace {
        SweepTrace {
            sweep,
            classes: self.state.classes(),
            occupied: self.state.occupied(),
            alpha: self.state.alpha,
            marginals: (0..self.current.p()).map(|j| self.state.marginal(j, 1)).collect(),
        }
    }
}

/// Runs the sampler and keeps `L` evenly spaced post-burn-in datasets.
pub fn dpmpm_impute(input: &IncompleteDataset, config: &DpmpmConfig, rng_seed: u64) -> Result<ImputationResult> {
    let saves = stick::save_points(config.n_iter, config.burn_in, config.imputations)?;
    input.check_imputable()?;
    let mut diagnostics = BTreeMap::new();
    if input.mask().is_empty() {
        return Ok(ImputationResult {
            method: "MI-DPMPM".into(),
            seed: rng_seed,
            completed: vec![input.data().clone(); config.imputations],
            diagnostics,
            trace: Vec::new(),
        });
    }
    let mut rng = rng::substream(rng_seed, &[0]);
    let mut sampler = DpmpmSampler::new(input, config.classes, config.grow, &mut rng)?;
    let mut completed = Vec::with_capacity(saves.len());
    let mut trace = Vec::with_capacity(config.n_iter);
    let mut next = saves.iter().peekable();
    let mut post_occupied = 0.0;
    for t in 1..=config.n_iter {
        sampler.sweep(&mut rng);
        trace.push(sampler.trace_row(t));
        if t > config.burn_in {
            post_occupied += sampler.state.occupied() as f64;
        }
        if next.peek() == Some(&&t) {
            completed.push(sampler.current.clone());
            next.next();
        }
    }
    sampler.state.check()?;
    diagnostics.insert("final_classes".into(), sampler.state.classes() as f64);
    diagnostics.insert(
        "mean_occupied_classes".into(),
        post_occupied / (config.n_iter - config.burn_in) as f64,
    );
    Ok(ImputationResult {
        method: "MI-DPMPM".into(),
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

    fn vars(cards: &[usize]) -> Vec<VariableSpec> {
        cards
            .iter()
            .enumerate()
            .map(|(j, &d)| VariableSpec::new(format!("v{j}"), d).unwrap())
            .collect()
    }

    #[test]
    fn empty_mask_copies_input() {
        let data = OrdinalDataset::new(vars(&[2, 3]), vec![vec![1, 2], vec![3, 1]]).unwrap();
        let input = IncompleteDataset::fully_observed(&data);
        let res = dpmpm_impute(&input, &DpmpmConfig::new(20, 10, 2), 1).unwrap();
        assert!(res.completed.iter().all(|z| *z == data));
    }

    #[test]
    fn single_class_sampler_keeps_invariants() {
        let col: Vec<u8> = (0..60).map(|i| if i % 6 == 0 { 0 } else { (i % 3 + 1) as u8 }).collect();
        let input = IncompleteDataset::from_columns(vars(&[3]), vec![col]).unwrap();
        let mut rng = rng::from_seed(2);
        let mut s = DpmpmSampler::new(&input, 1, false, &mut rng).unwrap();
        for _ in 0..50 {
            s.sweep(&mut rng);
            assert!(s.state.z.iter().all(|&z| z == 0));
            assert_eq!(s.state.pi, vec![1.0]);
            s.state.check().unwrap();
        }
    }

    #[test]
    fn truncation_grows_when_full() {
        let cols = vec![(0..30).map(|i| (i % 2 + 1) as u8).collect()];
        let input = IncompleteDataset::from_columns(vars(&[2]), cols).unwrap();
        let mut rng = rng::from_seed(3);
        let mut s = DpmpmSampler::new(&input, 1, true, &mut rng).unwrap();
        s.sweep(&mut rng);
        assert_eq!(s.state.classes(), 1 + stick::K_GROWTH_STEP);
        s.state.check().unwrap();
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let col: Vec<u8> = (0..40).map(|i| if i % 5 == 0 { 0 } else { (i % 4 + 1) as u8 }).collect();
        let col2: Vec<u8> = (0..40).map(|i| (i % 2 + 1) as u8).collect();
        let input = IncompleteDataset::from_columns(vars(&[4, 2]), vec![col, col2]).unwrap();
        let cfg = DpmpmConfig {
            classes: 5,
            ..DpmpmConfig::new(40, 20, 4)
        };
        let a = dpmpm_impute(&input, &cfg, 9).unwrap();
        let b = dpmpm_impute(&input, &cfg, 9).unwrap();
        assert_eq!(a.completed, b.completed);
        assert_eq!(a.trace, b.trace);
        a.verify(&input).unwrap();
        assert_eq!(a.completed.len(), 4);
    }
}
