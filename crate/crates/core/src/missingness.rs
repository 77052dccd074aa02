//! MCAR and MAR missingness injection.
//!
//! MAR rules are logistic models on the fully observed variables. Before a
//! predictor enters the linear predictor its level is rescaled to `[0, 1]`
//! by `(level - 1) / (D - 1)` and its coefficient is multiplied by
//! [`COEFFICIENT_SCALE`]. Coefficients as printed for the ACS scenarios
//! (for example `15 RMSP` with RMSP up to 19 rooms) would otherwise push
//! almost every row to probability 0 or 1. The intercept is then calibrated
//! so that the expected missing rate hits the configured target.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{IncompleteDataset, MaskMatrix, OrdinalDataset, VariableSpec};
use crate::error::{Error, Result};
use crate::rng;

/// Multiplier applied to configured MAR coefficients.
pub const COEFFICIENT_SCALE: f64 = 0.1;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarRule {
    pub target: usize,
    pub intercept: f64,
    /// Predictor variable index to coefficient, before scaling.
    pub coefficients: BTreeMap<usize, f64>,
}

impl MarRule {
    /// Linear predictor for row `i`.
    pub fn linear_predictor(&self, data: &OrdinalDataset, i: usize) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .map(|(&k, &c)| c * COEFFICIENT_SCALE * scaled_level(data, i, k))
                .sum::<f64>()
    }

    /// Per-row masking probabilities.
    pub fn probabilities(&self, data: &OrdinalDataset) -> Vec<f64> {
        (0..data.n())
            .map(|i| logistic(self.linear_predictor(data, i)))
            .collect()
    }
}

fn scaled_level(data: &OrdinalDataset, i: usize, k: usize) -> f64 {
    (data.get(i, k) as f64 - 1.0) / (data.cardinality(k) as f64 - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingnessScenario {
    pub mechanism: Mechanism,
    pub fully_observed: BTreeSet<usize>,
    pub mcar_targets: Vec<(usize, f64)>,
    pub mar_rules: Vec<MarRule>,
    pub target_rate: f64,
}

impl MissingnessScenario {
    /// Independent MCAR on each of `targets` at `rate`; all other variables
    /// fully observed.
    pub fn mcar(p: usize, targets: &[usize], rate: f64) -> Self {
        MissingnessScenario {
            mechanism: Mechanism::Mcar,
            fully_observed: (0..p).filter(|j| !targets.contains(j)).collect(),
            mcar_targets: targets.iter().map(|&j| (j, rate)).collect(),
            mar_rules: Vec::new(),
            target_rate: rate,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad_rate = |r: f64| !(0.0..1.0).contains(&r);
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::Config(format!("target rate {} outside (0,1)", self.target_rate)));
        }
        let mut roles = BTreeSet::new();
        for &j in &self.fully_observed {
            if j >= p {
                return Err(Error::Config(format!("variable index {j} out of range")));
            }
            roles.insert(j);
        }
        for &(j, r) in &self.mcar_targets {
            if j >= p {
                return Err(Error::Config(format!("variable index {j} out of range")));
            }
            if bad_rate(r) {
                return Err(Error::Config(format!("MCAR rate {r} outside [0,1)")));
            }
            if !roles.insert(j) {
                return Err(Error::Config(format!("variable {j} has more than one missingness role")));
            }
        }
        if self.mechanism == Mechanism::Mcar && !self.mar_rules.is_empty() {
            return Err(Error::Config("MCAR scenario carries MAR rules".into()));
        }
        for rule in &self.mar_rules {
            if rule.target >= p {
                return Err(Error::Config(format!("variable index {} out of range", rule.target)));
            }
            if !roles.insert(rule.target) {
                return Err(Error::Config(format!(
                    "variable {} has more than one missingness role",
                    rule.target
                )));
            }
            if let Some(k) = rule.coefficients.keys().find(|k| !self.fully_observed.contains(k)) {
                return Err(Error::Config(format!(
                    "MAR rule for variable {} uses predictor {k}, which is not fully observed",
                    rule.target
                )));
            }
        }
        Ok(())
    }

    /// Copy with every MAR intercept calibrated on `data` to `target_rate`.
    pub fn calibrated(&self, data: &OrdinalDataset) -> Result<Self> {
        let mut out = self.clone();
        for rule in &mut out.mar_rules {
            rule.intercept = calibrate_intercept(data, rule, self.target_rate)?;
        }
        Ok(out)
    }

    pub fn inject(&self, data: &OrdinalDataset, rng_seed: u64) -> Result<IncompleteDataset> {
        match self.mechanism {
            Mechanism::Mcar => {
                self.validate(data.p())?;
                inject_mcar(data, &self.mcar_targets, rng_seed)
            }
            Mechanism::Mar => inject_mar(data, self, rng_seed),
        }
    }
}

fn mcar_mask(mask: &mut MaskMatrix, n: usize, j: usize, rate: f64, seed: u64) {
    let mut rng = rng::substream(seed, &[0, j as u64]);
    for i in 0..n {
        if rng.random::<f64>() < rate {
            mask.set(i, j, true);
        }
    }
}

/// Masks each target cell independently with its rate.
pub fn inject_mcar(data: &OrdinalDataset, targets: &[(usize, f64)], rng_seed: u64) -> Result<IncompleteDataset> {
    let mut mask = MaskMatrix::empty(data.n(), data.p());
    for &(j, rate) in targets {
        if j >= data.p() {
            return Err(Error::InvalidArgument(format!("variable index {j} out of range")));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("MCAR rate {rate} must lie in [0,1)")));
        }
        mcar_mask(&mut mask, data.n(), j, rate, rng_seed);
    }
    IncompleteDataset::from_complete(data, mask)
}

/// Applies the scenario's MCAR targets and MAR logistic rules.
pub fn inject_mar(data: &OrdinalDataset, scenario: &MissingnessScenario, rng_seed: u64) -> Result<IncompleteDataset> {
    scenario.validate(data.p())?;
    let mut mask = MaskMatrix::empty(data.n(), data.p());
    for &(j, rate) in &scenario.mcar_targets {
        mcar_mask(&mut mask, data.n(), j, rate, rng_seed);
    }
    for rule in &scenario.mar_rules {
        let probs = rule.probabilities(data);
        let mut rng = rng::substream(rng_seed, &[1, rule.target as u64]);
        for (i, prob) in probs.into_iter().enumerate() {
            if rng.random::<f64>() < prob {
                mask.set(i, rule.target, true);
            }
        }
    }
    IncompleteDataset::from_complete(data, mask)
}

/// Intercept at which the mean masking probability over `data` equals
/// `target_rate`. The mean is strictly increasing in the intercept, so
/// bisection converges.
pub fn calibrate_intercept(data: &OrdinalDataset, rule: &MarRule, target_rate: f64) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidArgument(format!("target rate {target_rate} outside (0,1)")));
    }
    if data.n() == 0 {
        return Err(Error::InvalidArgument("cannot calibrate on an empty dataset".into()));
    }
    let base: Vec<f64> = {
        let mut r = rule.clone();
        r.intercept = 0.0;
        (0..data.n()).map(|i| r.linear_predictor(data, i)).collect()
    };
    let mean_rate = |b: f64| base.iter().map(|&x| logistic(x + b)).sum::<f64>() / base.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while mean_rate(lo) > target_rate {
        lo *= 2.0;
    }
    while mean_rate(hi) < target_rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_rate(mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// On-disk scenario description, with variables referenced by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mechanism: Mechanism,
    pub target_rate: f64,
    #[serde(default)]
    pub fully_observed: Vec<String>,
    /// Recalibrate MAR intercepts to `target_rate` before injection.
    #[serde(default = "default_true")]
    pub calibrate: bool,
    #[serde(default)]
    pub mcar: Vec<McarEntry>,
    #[serde(default)]
    pub mar: Vec<MarEntry>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McarEntry {
    pub variable: String,
    /// Defaults to the scenario's `target_rate`.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarEntry {
    pub variable: String,
    #[serde(default)]
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl ScenarioFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    /// Resolves names against a dictionary.
    pub fn resolve(&self, variables: &[VariableSpec]) -> Result<MissingnessScenario> {
        let index = |name: &str| {
            variables
                .iter()
                .position(|v| v.name == name)
                .ok_or_else(|| Error::Config(format!("scenario names unknown variable {name:?}")))
        };
        let scenario = MissingnessScenario {
            mechanism: self.mechanism,
            fully_observed: self.fully_observed.iter().map(|n| index(n)).collect::<Result<_>>()?,
            mcar_targets: self
                .mcar
                .iter()
                .map(|e| Ok((index(&e.variable)?, e.rate.unwrap_or(self.target_rate))))
                .collect::<Result<_>>()?,
            mar_rules: self
                .mar
                .iter()
                .map(|e| {
                    Ok(MarRule {
                        target: index(&e.variable)?,
                        intercept: e.intercept,
                        coefficients: e
                            .coefficients
                            .iter()
                            .map(|(k, &c)| Ok((index(k)?, c)))
                            .collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
            target_rate: self.target_rate,
        };
        scenario.validate(variables.len())?;
        Ok(scenario)
    }

    /// Resolves and, when `calibrate` is set, calibrates on `data`.
    pub fn build(&self, data: &OrdinalDataset) -> Result<MissingnessScenario> {
        let s = self.resolve(data.variables())?;
        if self.calibrate {
            s.calibrated(data)
        } else {
            Ok(s)
        }
    }
}
