//! Multiple imputation by chained equations.
//!
//! Each of the `L` imputations is an independent chain: the missing cells
//! are initialised, then `T` sweeps visit every incomplete variable in turn,
//! fit its conditional model on the observed rows given the current values
//! of all other variables, and redraw its missing cells.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImputationResult, IncompleteDataset, OrdinalDataset};
use crate::error::{Error, Result};
use crate::glm::{self, encode_into, sample_level};
use crate::rng::{self, Rng};
use crate::tree::{self, Features, ForestMode};

pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalKind {
    Multireg,
    Polr,
    Cart,
    ForestSample,
    ForestMajority,
}

impl ConditionalKind {
    pub fn label(self) -> &'static str {
        match self {
            ConditionalKind::Multireg => "MI-Multireg",
            ConditionalKind::Polr => "MI-Polr",
            ConditionalKind::Cart => "MI-Cart",
            ConditionalKind::ForestSample => "MI-Forest",
            ConditionalKind::ForestMajority => "missForest",
        }
    }
}

/// Conditional model and its hyperparameters. Unset fields take the
/// kind's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalModelSpec {
    pub kind: ConditionalKind,
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub min_leaf: Option<usize>,
    #[serde(default)]
    pub complexity: Option<f64>,
    #[serde(default)]
    pub n_trees: Option<usize>,
    #[serde(default)]
    pub mtry: Option<usize>,
}

impl ConditionalModelSpec {
    pub fn new(kind: ConditionalKind) -> Self {
        ConditionalModelSpec {
            kind,
            ridge: None,
            min_leaf: None,
            complexity: None,
            n_trees: None,
            mtry: None,
        }
    }

    fn ridge(&self) -> f64 {
        self.ridge.unwrap_or(glm::DEFAULT_RIDGE)
    }

    fn min_leaf(&self) -> usize {
        self.min_leaf.unwrap_or(match self.kind {
            ConditionalKind::Cart => tree::DEFAULT_MIN_LEAF,
            _ => 1,
        })
    }

    fn n_trees(&self) -> usize {
        self.n_trees.unwrap_or(match self.kind {
            ConditionalKind::ForestMajority => tree::DEFAULT_MAJORITY_TREES,
            _ => tree::DEFAULT_SAMPLE_TREES,
        })
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if let Some(r) = self.ridge {
            if !(r >= 0.0) {
                return Err(Error::Config(format!("ridge {r} must be non-negative")));
            }
        }
        if let Some(c) = self.complexity {
            if !(c >= 0.0) {
                return Err(Error::Config(format!("complexity {c} must be non-negative")));
            }
        }
        if self.min_leaf == Some(0) {
            return Err(Error::Config("min_leaf must be at least 1".into()));
        }
        if self.n_trees == Some(0) {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m + 1 > p.max(2) {
                return Err(Error::Config(format!("mtry {m} outside 1..={}", p.saturating_sub(1))));
            }
        }
        Ok(())
    }
}

/// A conditional model could not be fit in some sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct FitFailure(pub String);

/// Fits the conditional of one variable and draws its missing cells.
pub trait Conditional {
    /// `observed` rows supply the training data; the returned levels are
    /// for `missing` rows, in order.
    fn impute(
        &self,
        current: &OrdinalDataset,
        target: usize,
        observed: &[usize],
        missing: &[usize],
        rng: &mut Rng,
    ) -> std::result::Result<Vec<u8>, FitFailure>;
}

fn predictors(p: usize, target: usize) -> Vec<usize> {
    (0..p).filter(|&k| k != target).collect()
}

impl Conditional for ConditionalModelSpec {
    fn impute(
        &self,
        current: &OrdinalDataset,
        target: usize,
        observed: &[usize],
        missing: &[usize],
        rng: &mut Rng,
    ) -> std::result::Result<Vec<u8>, FitFailure> {
        if observed.is_empty() {
            return Err(FitFailure("no observed rows".into()));
        }
        match self.kind {
            ConditionalKind::Multireg | ConditionalKind::Polr => self.impute_glm(current, target, observed, missing, rng),
            _ => self.impute_tree(current, target, observed, missing, rng),
        }
    }
}

impl ConditionalModelSpec {
    fn impute_glm(
        &self,
        current: &OrdinalDataset,
        target: usize,
        observed: &[usize],
        missing: &[usize],
        rng: &mut Rng,
    ) -> std::result::Result<Vec<u8>, FitFailure> {
        // Fit on the levels actually present; absent levels cannot be drawn.
        let d = current.cardinality(target);
        let y = current.column(target);
        let mut present = vec![false; d];
        for &i in observed {
            present[y[i] as usize - 1] = true;
        }
        let levels: Vec<u8> = (1..=d as u8).filter(|&l| present[l as usize - 1]).collect();
        if levels.len() == 1 {
            return Ok(vec![levels[0]; missing.len()]);
        }
        let mut code = vec![0u8; d + 1];
        for (c, &l) in levels.iter().enumerate() {
            code[l as usize] = c as u8 + 1;
        }

        let preds = predictors(current.p(), target);
        let cards: Vec<usize> = preds.iter().map(|&k| current.cardinality(k)).collect();
        let width: usize = cards.iter().map(|d| d - 1).sum();
        let mut row = vec![0u8; preds.len()];
        let mut enc = vec![0.0; width];
        let mut encode = |i: usize, enc: &mut [f64]| {
            for (slot, &k) in row.iter_mut().zip(&preds) {
                *slot = current.get(i, k);
            }
            encode_into(&row, &cards, enc);
        };
        let mut x = DMatrix::<f64>::zeros(observed.len(), width);
        for (r, &i) in observed.iter().enumerate() {
            encode(i, &mut enc);
            for (c, &v) in enc.iter().enumerate() {
                x[(r, c)] = v;
            }
        }
        let labels: Vec<u8> = observed.iter().map(|&i| code[y[i] as usize]).collect();
        let k = levels.len();
        let fail = |e: Error| FitFailure(e.to_string());
        let probs_for: Box<dyn Fn(&[f64]) -> Vec<f64>> = match self.kind {
            ConditionalKind::Multireg => {
                let fit = glm::fit_multinomial(&x, &labels, k, self.ridge()).map_err(fail)?;
                let model = fit.draw(rng);
                Box::new(move |f| model.probabilities(f))
            }
            _ => {
                let fit = glm::fit_polr(&x, &labels, k, self.ridge()).map_err(fail)?;
                let model = fit.draw(rng);
                Box::new(move |f| model.probabilities(f))
            }
        };
        Ok(missing
            .iter()
            .map(|&i| {
                encode(i, &mut enc);
                let probs = probs_for(&enc);
                levels[sample_level(&probs, rng) as usize - 1]
            })
            .collect())
    }

    fn impute_tree(
        &self,
        current: &OrdinalDataset,
        target: usize,
        observed: &[usize],
        missing: &[usize],
        rng: &mut Rng,
    ) -> std::result::Result<Vec<u8>, FitFailure> {
        let preds = predictors(current.p(), target);
        let train_cols: Vec<Vec<u8>> = preds
            .iter()
            .map(|&k| observed.iter().map(|&i| current.get(i, k)).collect())
            .collect();
        let col_refs: Vec<&[u8]> = train_cols.iter().map(Vec::as_slice).collect();
        let cards: Vec<usize> = preds.iter().map(|&k| current.cardinality(k)).collect();
        let features = Features {
            columns: &col_refs,
            cardinalities: &cards,
        };
        let labels: Vec<u8> = observed.iter().map(|&i| current.get(i, target)).collect();
        let d = current.cardinality(target);
        let min_leaf = self.min_leaf();
        if labels.len() < min_leaf {
            return Err(FitFailure(format!("{} observed rows, min_leaf {min_leaf}", labels.len())));
        }
        let mut row = vec![0u8; preds.len()];
        let fill_row = |i: usize, row: &mut Vec<u8>| {
            for (slot, &k) in row.iter_mut().zip(&preds) {
                *slot = current.get(i, k);
            }
        };
        match self.kind {
            ConditionalKind::Cart => {
                let complexity = self.complexity.unwrap_or(tree::DEFAULT_COMPLEXITY);
                let t = tree::fit_tree(features, &labels, d, min_leaf, complexity).map_err(|e| FitFailure(e.to_string()))?;
                Ok(missing
                    .iter()
                    .map(|&i| {
                        fill_row(i, &mut row);
                        tree::sample_from_leaf(&t, &row, rng)
                    })
                    .collect())
            }
            kind => {
                let mode = if kind == ConditionalKind::ForestMajority {
                    ForestMode::Majority
                } else {
                    ForestMode::Sample
                };
                let mtry = self.mtry.unwrap_or_else(|| tree::default_mtry(preds.len())).min(preds.len().max(1));
                let f = tree::fit_forest(features, &labels, d, self.n_trees(), mtry, min_leaf, mode, rng)
                    .map_err(|e| FitFailure(e.to_string()))?;
                Ok(missing
                    .iter()
                    .map(|&i| {
                        fill_row(i, &mut row);
                        tree::forest_impute_value(&f, &row, rng)
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputationOrder {
    #[default]
    DataOrder,
    ByMissingCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    #[default]
    Marginal,
    ConditionalAvailableCase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiceConfig {
    pub iterations: usize,
    pub order: ImputationOrder,
    pub initializer: Initializer,
    pub model: ConditionalModelSpec,
    pub imputations: usize,
}

impl MiceConfig {
    pub fn new(kind: ConditionalKind, imputations: usize) -> Self {
        MiceConfig {
            iterations: DEFAULT_ITERATIONS,
            order: ImputationOrder::default(),
            initializer: Initializer::default(),
            model: ConditionalModelSpec::new(kind),
            imputations,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("MICE needs at least one iteration".into()));
        }
        if self.imputations == 0 {
            return Err(Error::Config("at least one imputation is required".into()));
        }
        self.model.validate(p)
    }
}

/// Incomplete variables in visiting order.
pub fn sweep_order(input: &IncompleteDataset, order: ImputationOrder) -> Vec<usize> {
    let mut vars: Vec<usize> = (0..input.p()).filter(|&j| input.mask().missing_count(j) > 0).collect();
    if order == ImputationOrder::ByMissingCount {
        vars.sort_by_key(|&j| (input.mask().missing_count(j), j));
    }
    vars
}

fn fill_marginal(input: &IncompleteDataset, out: &mut OrdinalDataset, j: usize, rng: &mut Rng) {
    let pmf = input.observed_pmf(j);
    for i in input.mask().missing_rows(j) {
        out.set(i, j, sample_level(&pmf, rng));
    }
}

fn marginal_fill(input: &IncompleteDataset, rng: &mut Rng) -> OrdinalDataset {
    let mut out = input.data().clone();
    for j in 0..input.p() {
        if input.mask().missing_count(j) > 0 {
            fill_marginal(input, &mut out, j, rng);
        }
    }
    out
}

pub(crate) fn initialize_with(
    input: &IncompleteDataset,
    initializer: Initializer,
    model: &ConditionalModelSpec,
    rng: &mut Rng,
) -> Result<(OrdinalDataset, usize)> {
    input.check_imputable()?;
    let mut out = marginal_fill(input, rng);
    let mut fallbacks = 0;
    if initializer == Initializer::ConditionalAvailableCase {
        let mask = input.mask();
        for j in sweep_order(input, ImputationOrder::DataOrder) {
            let available: Vec<usize> = (0..input.n())
                .filter(|&i| (0..input.p()).all(|k| !mask.is_missing(i, k)))
                .collect();
            let missing = mask.missing_rows(j);
            match model.impute(&out, j, &available, &missing, rng) {
                Ok(levels) => {
                    for (&i, v) in missing.iter().zip(levels) {
                        out.set(i, j, v);
                    }
                }
                Err(_) => fallbacks += 1,
            }
        }
    }
    Ok((out, fallbacks))
}

/// Fills every masked cell. `Marginal` draws from the observed pmf of the
/// column; `ConditionalAvailableCase` then redraws each incomplete column
/// from a model fit on the complete cases, keeping the marginal draw when
/// that fit is impossible.
pub fn initialize_missing(input: &IncompleteDataset, initializer: Initializer, rng_seed: u64) -> Result<OrdinalDataset> {
    let mut rng = rng::from_seed(rng_seed);
    let model = ConditionalModelSpec::new(ConditionalKind::Cart);
    initialize_with(input, initializer, &model, &mut rng).map(|(d, _)| d)
}

/// Runs one chain, reporting each `(sweep, variable)` visit to `observe`.
/// Returns the completed data and the number of fit fallbacks.
pub fn run_chain(
    input: &IncompleteDataset,
    config: &MiceConfig,
    chain_seed: u64,
    observe: &mut dyn FnMut(usize, usize),
) -> Result<(OrdinalDataset, usize)> {
    let mut rng = rng::from_seed(chain_seed);
    let (mut current, mut fallbacks) = initialize_with(input, config.initializer, &config.model, &mut rng)?;
    let order = sweep_order(input, config.order);
    let observed: Vec<Vec<usize>> = (0..input.p()).map(|j| input.mask().observed_rows(j)).collect();
    let missing: Vec<Vec<usize>> = (0..input.p()).map(|j| input.mask().missing_rows(j)).collect();
    for t in 0..config.iterations {
        for &j in &order {
            observe(t, j);
            match config.model.impute(&current, j, &observed[j], &missing[j], &mut rng) {
                Ok(levels) => {
                    for (&i, v) in missing[j].iter().zip(levels) {
                        current.set(i, j, v);
                    }
                }
                Err(_) => {
                    fallbacks += 1;
                    fill_marginal(input, &mut current, j, &mut rng);
                }
            }
        }
    }
    Ok((current, fallbacks))
}

/// MICE with one chain per supplied seed.
pub fn mice_impute_with_chain_seeds(
    input: &IncompleteDataset,
    config: &MiceConfig,
    chain_seeds: &[u64],
) -> Result<(Vec<OrdinalDataset>, usize)> {
    config.validate(input.p())?;
    input.check_imputable()?;
    let chains: Vec<Result<(OrdinalDataset, usize)>> = chain_seeds
        .par_iter()
        .map(|&s| {
            if input.mask().is_empty() {
                Ok((input.data().clone(), 0))
            } else {
                run_chain(input, config, s, &mut |_, _| {})
            }
        })
        .collect();
    let mut out = Vec::with_capacity(chains.len());
    let mut fallbacks = 0;
    for c in chains {
        let (d, f) = c?;
        out.push(d);
        fallbacks += f;
    }
    Ok((out, fallbacks))
}

pub fn chain_seeds(seed: u64, l: usize) -> Vec<u64> {
    (0..l as u64).map(|c| rng::child_seed(seed, &[c])).collect()
}

pub fn mice_impute(input: &IncompleteDataset, config: &MiceConfig, rng_seed: u64) -> Result<ImputationResult> {
    let seeds = chain_seeds(rng_seed, config.imputations);
    let (completed, fallbacks) = mice_impute_with_chain_seeds(input, config, &seeds)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("fit_fallbacks".to_string(), fallbacks as f64);
    diagnostics.insert("iterations".to_string(), config.iterations as f64);
    Ok(ImputationResult {
        method: config.model.kind.label().to_string(),
        seed: rng_seed,
        completed,
        diagnostics,
        trace: Vec::new(),
    })
}
