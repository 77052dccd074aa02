//! Repeated-sampling experiments.
//!
//! Each replication draws a sample from the population, records the
//! sample's own estimates and Wald intervals, injects missingness, runs
//! every configured method, pools the completed-data estimates and scores
//! them against the population values. Every random draw is keyed by
//! `(replication, method)` through seed substreams, so reports do not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, draw_sample, marginal_pmf, ImputationResult, IncompleteDataset, OrdinalDataset, VariableSpec};
use crate::dpmmvn::{dpmmvn_impute, DpmmvnConfig, DpmmvnPrior};
use crate::dpmpm::{dpmpm_impute, DpmpmConfig};
use crate::error::{Error, Result};
use crate::gain::{gain_method, GainConfig};
use crate::glm::sample_level;
use crate::inference::{enumerate_estimands, estimate_all, pool, wald_interval, Estimand};
use crate::mice::{mice_impute, ConditionalKind, ConditionalModelSpec, ImputationOrder, Initializer, MiceConfig, DEFAULT_ITERATIONS};
use crate::missingness::{Mechanism, ScenarioFile};
use crate::rng;

/// Environment variable overriding the configured worker count.
pub const THREADS_ENV: &str = "ORDIMPUTE_THREADS";

/// Label of the fully observed reference in reports.
pub const BASELINE: &str = "Pre-missing";

/// Quantile labels of the summary tables.
pub const SUMMARY_ROWS: [&str; 5] = ["Min", "1st Qu.", "Median", "3rd Qu.", "Max"];

/// Complete-case share outside this range triggers a warning under MAR.
pub const COMPLETE_CASE_RANGE: (f64, f64) = (0.01, 0.12);

/// Scale presets. `Desk` is a laptop-sized setting; `Full` matches the
/// published study's replications, sample size, imputations and chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scale {
    pub n_sample: usize,
    pub replications: usize,
    pub imputations: usize,
    pub mcmc_iterations: usize,
    pub mcmc_burn_in: usize,
}

impl Profile {
    pub fn scale(self) -> Scale {
        match self {
            Profile::Desk => Scale {
                n_sample: 2_000,
                replications: 50,
                imputations: 10,
                mcmc_iterations: 3_000,
                mcmc_burn_in: 1_000,
            },
            Profile::Full => Scale {
                n_sample: 10_000,
                replications: 500,
                imputations: 50,
                mcmc_iterations: 15_000,
                mcmc_burn_in: 5_000,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Multireg,
    Polr,
    Cart,
    Forest,
    Missforest,
    Dpmpm,
    Dpmmvn,
    Gain,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Multireg => "MI-Multireg",
            MethodKind::Polr => "MI-Polr",
            MethodKind::Cart => "MI-Cart",
            MethodKind::Forest => "MI-Forest",
            MethodKind::Missforest => "missForest",
            MethodKind::Dpmpm => "MI-DPMPM",
            MethodKind::Dpmmvn => "MI-DPMMVN",
            MethodKind::Gain => "GAIN",
        }
    }

    fn conditional(self) -> Option<ConditionalKind> {
        match self {
            MethodKind::Multireg => Some(ConditionalKind::Multireg),
            MethodKind::Polr => Some(ConditionalKind::Polr),
            MethodKind::Cart => Some(ConditionalKind::Cart),
            MethodKind::Forest => Some(ConditionalKind::ForestSample),
            MethodKind::Missforest => Some(ConditionalKind::ForestMajority),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let all = [
            MethodKind::Multireg,
            MethodKind::Polr,
            MethodKind::Cart,
            MethodKind::Forest,
            MethodKind::Missforest,
            MethodKind::Dpmpm,
            MethodKind::Dpmmvn,
            MethodKind::Gain,
        ];
        let key = name.to_ascii_lowercase().replace(['-', '_'], "");
        all.into_iter()
            .find(|k| {
                let label = k.label().to_ascii_lowercase().replace('-', "");
                key == label || key == label.trim_start_matches("mi")
            })
            .ok_or_else(|| Error::Config(format!("unknown method {name:?}")))
    }
}

/// One imputation method and its settings. Unset fields take the method's
/// defaults; MCMC lengths default to the experiment scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: MethodKind,
    #[serde(default)]
    pub label: Option<String>,
    /// MICE sweeps, or MCMC iterations for the mixture samplers.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
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
    #[serde(default)]
    pub order: ImputationOrder,
    #[serde(default)]
    pub initializer: Initializer,
    #[serde(default)]
    pub gain: Option<GainConfig>,
    #[serde(default)]
    pub prior: Option<DpmmvnPrior>,
}

impl MethodSpec {
    pub fn new(method: MethodKind) -> Self {
        MethodSpec {
            method,
            label: None,
            iterations: None,
            burn_in: None,
            classes: None,
            ridge: None,
            min_leaf: None,
            complexity: None,
            n_trees: None,
            mtry: None,
            order: ImputationOrder::default(),
            initializer: Initializer::default(),
            gain: None,
            prior: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.label().to_string())
    }

    fn mice_config(&self, kind: ConditionalKind, imputations: usize) -> MiceConfig {
        MiceConfig {
            iterations: self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            order: self.order,
            initializer: self.initializer,
            model: ConditionalModelSpec {
                kind,
                ridge: self.ridge,
                min_leaf: self.min_leaf,
                complexity: self.complexity,
                n_trees: self.n_trees,
                mtry: self.mtry,
            },
            imputations,
        }
    }

    fn chain_length(&self, scale: &Scale) -> (usize, usize) {
        (
            self.iterations.unwrap_or(scale.mcmc_iterations),
            self.burn_in.unwrap_or(scale.mcmc_burn_in),
        )
    }

    /// Checks the settings against a dataset with `p` variables.
    pub fn validate(&self, p: usize, scale: &Scale) -> Result<()> {
        let l = scale.imputations;
        match self.method.conditional() {
            Some(kind) => self.mice_config(kind, l).validate(p),
            None => match self.method {
                MethodKind::Gain => self.gain.clone().unwrap_or_default().validate(p),
                _ => {
                    let (n_iter, burn_in) = self.chain_length(scale);
                    crate::stick::save_points(n_iter, burn_in, l).map(|_| ())?;
                    if self.classes == Some(0) {
                        return Err(Error::Config("a mixture needs at least one class".into()));
                    }
                    if let Some(prior) = &self.prior {
                        prior.validate(p)?;
                    }
                    Ok(())
                }
            },
        }
    }

    /// Produces `l` completed datasets.
    pub fn run(&self, input: &IncompleteDataset, l: usize, scale: &Scale, seed: u64) -> Result<ImputationResult> {
        let mut result = match (self.method.conditional(), self.method) {
            (Some(kind), _) => mice_impute(input, &self.mice_config(kind, l), seed)?,
            (None, MethodKind::Dpmpm) => {
                let (n_iter, burn_in) = self.chain_length(scale);
                let mut c = DpmpmConfig::new(n_iter, burn_in, l);
                c.classes = self.classes.unwrap_or(c.classes);
                dpmpm_impute(input, &c, seed)?
            }
            (None, MethodKind::Dpmmvn) => {
                let (n_iter, burn_in) = self.chain_length(scale);
                let mut c = DpmmvnConfig::new(n_iter, burn_in, l);
                c.classes = self.classes.unwrap_or(c.classes);
                c.prior = self.prior.clone();
                dpmmvn_impute(input, &c, seed)?
            }
            (None, _) => gain_method(input, &self.gain.clone().unwrap_or_default(), l, seed)?,
        };
        result.method = self.label();
        Ok(result)
    }
}

/// Latent-class population generator: rows fall in classes with the given
/// weights and, within a class, variables are independent categorical
/// draws whose probabilities come from a flat Dirichlet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPopulation {
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cards")]
    pub cardinalities: Vec<usize>,
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
}

fn default_rows() -> usize {
    100_000
}

fn default_cards() -> Vec<usize> {
    vec![2, 3, 4, 5, 3]
}

fn default_weights() -> Vec<f64> {
    vec![0.5, 0.3, 0.2]
}

impl Default for SyntheticPopulation {
    fn default() -> Self {
        SyntheticPopulation {
            rows: default_rows(),
            seed: 0,
            cardinalities: default_cards(),
            weights: default_weights(),
        }
    }
}

impl SyntheticPopulation {
    /// `lambda[k][j]`, the level probabilities of variable `j` in class `k`.
    pub fn class_probabilities(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.weights.len())
            .map(|k| {
                self.cardinalities
                    .iter()
                    .enumerate()
                    .map(|(j, &d)| {
                        let mut r = rng::substream(self.seed, &[0, k as u64, j as u64]);
                        let g: Vec<f64> = (0..d)
                            .map(|_| Gamma::new(1.0, 1.0).expect("valid gamma").sample(&mut r))
                            .collect();
                        let s: f64 = g.iter().sum();
                        g.into_iter().map(|x| x / s).collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn generate(&self) -> Result<OrdinalDataset> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.is_empty() || self.weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("class weights must be non-negative and sum to one".into()));
        }
        if self.rows == 0 || self.cardinalities.is_empty() {
            return Err(Error::Config("synthetic population needs rows and variables".into()));
        }
        let vars = self
            .cardinalities
            .iter()
            .enumerate()
            .map(|(j, &d)| VariableSpec::new(format!("V{}", j + 1), d))
            .collect::<Result<Vec<_>>>()?;
        let lambda = self.class_probabilities();
        let mut r = rng::substream(self.seed, &[1]);
        let mut cols = vec![Vec::with_capacity(self.rows); vars.len()];
        for _ in 0..self.rows {
            let k = sample_level(&self.weights, &mut r) as usize - 1;
            for (col, probs) in cols.iter_mut().zip(&lambda[k]) {
                col.push(sample_level(probs, &mut r));
            }
        }
        OrdinalDataset::new(vars, cols)
    }

    /// Exact population-model probability of an estimand's cells.
    pub fn cell_probability(&self, cells: &[(usize, u8)]) -> f64 {
        let lambda = self.class_probabilities();
        self.weights
            .iter()
            .zip(&lambda)
            .map(|(w, lam)| w * cells.iter().map(|&(j, l)| lam[j][l as usize - 1]).product::<f64>())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PopulationSource {
    File { path: PathBuf, dictionary: PathBuf },
    Synthetic { synthetic: SyntheticPopulation },
}

impl PopulationSource {
    pub fn load(&self) -> Result<OrdinalDataset> {
        match self {
            PopulationSource::File { path, dictionary } => {
                let dict = data::load_dictionary(dictionary)?;
                let input = data::load_csv(path, &dict)?;
                if !input.mask().is_empty() {
                    return Err(Error::Data(format!("population file {} has missing cells", path.display())));
                }
                Ok(input.data().clone())
            }
            PopulationSource::Synthetic { synthetic } => synthetic.generate(),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        if let PopulationSource::File { path, dictionary } = self {
            *path = dir.join(&*path);
            *dictionary = dir.join(&*dictionary);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Inline(ScenarioFile),
}

impl ScenarioSource {
    pub fn load(&self) -> Result<ScenarioFile> {
        match self {
            ScenarioSource::Path(p) => ScenarioFile::load(p),
            ScenarioSource::Inline(s) => Ok(s.clone()),
        }
    }
}

/// A full experiment. Scale fields left unset take the profile's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationSource,
    pub scenario: ScenarioSource,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub n_sample: Option<usize>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub imputations: Option<usize>,
    #[serde(default)]
    pub mcmc_iterations: Option<usize>,
    #[serde(default)]
    pub mcmc_burn_in: Option<usize>,
    #[serde(default = "default_arities")]
    pub arities: Vec<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `ORDIMPUTE_THREADS` overrides, default is all cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

fn default_arities() -> Vec<usize> {
    vec![1, 2, 3]
}

impl ExperimentConfig {
    /// Reads a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        config.population.rebase(dir);
        if let ScenarioSource::Path(p) = &mut config.scenario {
            *p = dir.join(&*p);
        }
        if let Some(out) = &mut config.output_dir {
            *out = dir.join(&*out);
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment: {e}")))
    }

    pub fn scale(&self) -> Scale {
        let base = self.profile.scale();
        Scale {
            n_sample: self.n_sample.unwrap_or(base.n_sample),
            replications: self.replications.unwrap_or(base.replications),
            imputations: self.imputations.unwrap_or(base.imputations),
            mcmc_iterations: self.mcmc_iterations.unwrap_or(base.mcmc_iterations),
            mcmc_burn_in: self.mcmc_burn_in.unwrap_or(base.mcmc_burn_in),
        }
    }

    /// Switches to the full-scale profile, dropping explicit scale values.
    pub fn use_full_scale(&mut self) {
        self.profile = Profile::Full;
        self.n_sample = None;
        self.replications = None;
        self.imputations = None;
        self.mcmc_iterations = None;
        self.mcmc_burn_in = None;
    }

    pub fn threads(&self) -> Result<usize> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
            Err(_) => Ok(self.parallelism.unwrap_or_else(rayon::current_num_threads).max(1)),
        }
    }

    pub fn validate(&self, population_rows: usize, p: usize) -> Result<()> {
        let s = self.scale();
        if s.replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if s.imputations < 2 {
            return Err(Error::Config("pooling needs at least two imputations".into()));
        }
        if s.n_sample == 0 || s.n_sample > population_rows {
            return Err(Error::Config(format!(
                "sample size {} outside 1..={population_rows}",
                s.n_sample
            )));
        }
        if self.arities.is_empty() || self.arities.iter().any(|a| !(1..=3).contains(a)) {
            return Err(Error::Config("estimand arities must lie in 1..=3".into()));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.push(BASELINE.into());
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method labels must be unique".into()));
        }
        for m in &self.methods {
            m.validate(p, &s)?;
        }
        Ok(())
    }
}

/// Fraction of intervals containing `q`.
pub fn coverage_rate(intervals: &[(f64, f64)], q: f64) -> f64 {
    let hits = intervals.iter().filter(|&&(lo, hi)| lo <= q && q <= hi).count();
    hits as f64 / intervals.len() as f64
}

/// `sum (pooled - Q)^2 / sum (premissing - Q)^2`; `None` when the
/// denominator is zero.
pub fn relative_mse(pooled: &[f64], premissing: &[f64], q: f64) -> Option<f64> {
    let num: f64 = pooled.iter().map(|x| (x - q).powi(2)).sum();
    let den: f64 = premissing.iter().map(|x| (x - q).powi(2)).sum();
    (den > 0.0).then(|| num / den)
}

/// Mean of the pooled estimates minus `Q`.
pub fn bias(pooled: &[f64], q: f64) -> f64 {
    pooled.iter().sum::<f64>() / pooled.len() as f64 - q
}

/// Linear interpolation between order statistics at `h = (n - 1) p`.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Min, quartiles, median and max; `None` for an empty slice.
pub fn five_number_summary(values: &[f64]) -> Option<[f64; 5]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some([0.0, 0.25, 0.5, 0.75, 1.0].map(|p| quantile(&v, p)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimandRecord {
    pub label: String,
    pub cells: Vec<(usize, u8)>,
    pub truth: f64,
    /// Sample estimate before missingness, per replication.
    pub pre_missing: Vec<f64>,
}

impl EstimandRecord {
    pub fn arity(&self) -> usize {
        self.cells.len()
    }
}

/// Per-estimand scores of one method, with the per-replication values
/// they are computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub q_bar: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub coverage: f64,
    pub rel_mse: Option<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Replications that produced imputations, in order.
    pub replications: Vec<usize>,
    pub failures: Vec<FailureRecord>,
    /// One record per estimand, in the report's estimand order. Empty when
    /// every replication failed.
    pub cells: Vec<CellRecord>,
    /// Completed-data pmf per variable, averaged over replications and
    /// imputations.
    pub marginal_pmf: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub arity: usize,
    pub statistic: String,
    pub coverage: f64,
    pub rel_mse: Option<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub scale: Scale,
    pub master_seed: u64,
    pub mechanism: Mechanism,
    pub population_rows: usize,
    pub variables: Vec<VariableSpec>,
    pub arities: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub settings: ReportSettings,
    pub population_pmf: Vec<Vec<f64>>,
    pub estimands: Vec<EstimandRecord>,
    /// The fully observed baseline first, then the configured methods.
    pub methods: Vec<MethodReport>,
    pub summaries: Vec<SummaryRow>,
    /// Relative MSE values left out of summaries as undefined, per
    /// `(method, arity)`.
    pub undefined_rel_mse: Vec<(String, usize, usize)>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Summary row for `(method, arity, statistic)`.
    pub fn summary(&self, method: &str, arity: usize, statistic: &str) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|r| r.method == method && r.arity == arity && r.statistic == statistic)
    }
}

struct Replication {
    pre: Vec<(f64, f64)>,
    pmf: Vec<Vec<f64>>,
    input: IncompleteDataset,
}

struct Outcome {
    /// `(q_bar, lower, upper)` per estimand.
    pooled: Vec<(f64, f64, f64)>,
    pmf: Vec<Vec<f64>>,
}

fn pooled_outcome(result: &ImputationResult, estimands: &[Estimand], p: usize) -> Result<Outcome> {
    let per_set: Vec<Vec<(f64, f64)>> = result.completed.iter().map(|z| estimate_all(z, estimands)).collect();
    let pooled = (0..estimands.len())
        .map(|e| {
            let q: Vec<f64> = per_set.iter().map(|s| s[e].0).collect();
            let u: Vec<f64> = per_set.iter().map(|s| s[e].1).collect();
            pool(&q, &u).map(|pe| (pe.q_bar, pe.ci_lower, pe.ci_upper))
        })
        .collect::<Result<_>>()?;
    let l = result.completed.len() as f64;
    let pmf = (0..p)
        .map(|j| {
            let mut acc = vec![0.0; result.completed[0].cardinality(j)];
            for z in &result.completed {
                for (a, v) in acc.iter_mut().zip(marginal_pmf(z, j)) {
                    *a += v / l;
                }
            }
            acc
        })
        .collect();
    Ok(Outcome { pooled, pmf })
}

fn score(estimands: &[Estimand], pre: &[Vec<f64>], reps: &[usize], pooled: &[&[(f64, f64, f64)]]) -> Vec<CellRecord> {
    if reps.is_empty() {
        return Vec::new();
    }
    estimands
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let q_bar: Vec<f64> = pooled.iter().map(|o| o[e].0).collect();
            let lower: Vec<f64> = pooled.iter().map(|o| o[e].1).collect();
            let upper: Vec<f64> = pooled.iter().map(|o| o[e].2).collect();
            let intervals: Vec<(f64, f64)> = lower.iter().copied().zip(upper.iter().copied()).collect();
            let before: Vec<f64> = reps.iter().map(|&h| pre[e][h]).collect();
            CellRecord {
                coverage: coverage_rate(&intervals, est.truth),
                rel_mse: relative_mse(&q_bar, &before, est.truth),
                bias: bias(&q_bar, est.truth),
                q_bar,
                lower,
                upper,
            }
        })
        .collect()
}

fn summarise(report: &mut MetricsReport) {
    let arities: Vec<usize> = report.settings.arities.clone();
    for m in &report.methods {
        if m.cells.is_empty() {
            continue;
        }
        for &a in &arities {
            let cells: Vec<&CellRecord> = m
                .cells
                .iter()
                .zip(&report.estimands)
                .filter(|(_, e)| e.arity() == a)
                .map(|(c, _)| c)
                .collect();
            let cov: Vec<f64> = cells.iter().map(|c| c.coverage).collect();
            let bias: Vec<f64> = cells.iter().map(|c| c.bias).collect();
            let rel: Vec<f64> = cells.iter().filter_map(|c| c.rel_mse).collect();
            let undefined = cells.len() - rel.len();
            if undefined > 0 {
                report.undefined_rel_mse.push((m.method.clone(), a, undefined));
            }
            let (Some(cs), Some(bs)) = (five_number_summary(&cov), five_number_summary(&bias)) else {
                continue;
            };
            let rs = five_number_summary(&rel);
            for (k, name) in SUMMARY_ROWS.iter().enumerate() {
                report.summaries.push(SummaryRow {
                    method: m.method.clone(),
                    arity: a,
                    statistic: name.to_string(),
                    coverage: cs[k],
                    rel_mse: rs.map(|r| r[k]),
                    bias: bs[k],
                });
            }
        }
    }
}

/// Runs every replication and method and scores them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let population = config.population.load()?;
    config.validate(population.n(), population.p())?;
    let scale = config.scale();
    let scenario = config.scenario.load()?.build(&population)?;
    let mut estimands = Vec::new();
    for &a in &config.arities {
        estimands.extend(enumerate_estimands(&population, a, scale.n_sample)?);
    }
    let seed = config.master_seed;
    let p = population.p();
    let threads = config.threads()?;
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let (replications, outcomes) = pool_threads.install(|| -> Result<_> {
        let replications: Vec<Replication> = (0..scale.replications)
            .into_par_iter()
            .map(|h| {
                let sample = draw_sample(&population, scale.n_sample, rng::child_seed(seed, &[0, h as u64]))?;
                let pre = estimate_all(&sample, &estimands);
                let pmf = (0..p).map(|j| marginal_pmf(&sample, j)).collect();
                let input = scenario.inject(&sample, rng::child_seed(seed, &[1, h as u64]))?;
                Ok(Replication { pre, pmf, input })
            })
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..config.methods.len())
            .flat_map(|m| (0..scale.replications).map(move |h| (m, h)))
            .collect();
        let outcomes: Vec<std::result::Result<Outcome, String>> = jobs
            .par_iter()
            .map(|&(m, h)| {
                let job_seed = rng::child_seed(seed, &[2, h as u64, m as u64]);
                let input = &replications[h].input;
                config.methods[m]
                    .run(input, scale.imputations, &scale, job_seed)
                    .and_then(|r| {
                        r.verify(input)?;
                        pooled_outcome(&r, &estimands, p)
                    })
                    .map_err(|e| e.to_string())
            })
            .collect();
        Ok((replications, outcomes))
    })?;

    // pre[e][h]
    let pre: Vec<Vec<f64>> = (0..estimands.len())
        .map(|e| replications.iter().map(|r| r.pre[e].0).collect())
        .collect();
    let all: Vec<usize> = (0..scale.replications).collect();
    let n = scale.n_sample;
    let baseline_pooled: Vec<Vec<(f64, f64, f64)>> = replications
        .iter()
        .map(|r| {
            r.pre
                .iter()
                .map(|&(q, _)| {
                    let (lo, hi) = wald_interval(q, n);
                    (q, lo, hi)
                })
                .collect()
        })
        .collect();
    let baseline_refs: Vec<&[(f64, f64, f64)]> = baseline_pooled.iter().map(Vec::as_slice).collect();
    let mut methods = vec![MethodReport {
        method: BASELINE.into(),
        replications: all.clone(),
        failures: Vec::new(),
        cells: score(&estimands, &pre, &all, &baseline_refs),
        marginal_pmf: (0..p)
            .map(|j| {
                let mut acc = vec![0.0; population.cardinality(j)];
                for r in &replications {
                    for (a, v) in acc.iter_mut().zip(&r.pmf[j]) {
                        *a += v / scale.replications as f64;
                    }
                }
                acc
            })
            .collect(),
    }];

    for (m, spec) in config.methods.iter().enumerate() {
        let slice = &outcomes[m * scale.replications..(m + 1) * scale.replications];
        let mut reps = Vec::new();
        let mut failures = Vec::new();
        let mut pooled: Vec<&[(f64, f64, f64)]> = Vec::new();
        let mut pmf: Vec<Vec<f64>> = (0..p).map(|j| vec![0.0; population.cardinality(j)]).collect();
        for (h, o) in slice.iter().enumerate() {
            match o {
                Ok(o) => {
                    reps.push(h);
                    pooled.push(&o.pooled);
                    for (acc, v) in pmf.iter_mut().zip(&o.pmf) {
                        for (a, x) in acc.iter_mut().zip(v) {
                            *a += x;
                        }
                    }
                }
                Err(msg) => failures.push(FailureRecord {
                    replication: h,
                    message: msg.clone(),
                }),
            }
        }
        if !reps.is_empty() {
            let k = reps.len() as f64;
            pmf.iter_mut().flatten().for_each(|x| *x /= k);
        }
        methods.push(MethodReport {
            method: spec.label(),
            cells: score(&estimands, &pre, &reps, &pooled),
            replications: reps,
            failures,
            marginal_pmf: pmf,
        });
    }

    let mut warnings = Vec::new();
    if scenario.mechanism == Mechanism::Mar {
        let cc = replications
            .iter()
            .map(|r| r.input.mask().complete_cases() as f64 / r.input.n() as f64)
            .sum::<f64>()
            / replications.len() as f64;
        if !(COMPLETE_CASE_RANGE.0..=COMPLETE_CASE_RANGE.1).contains(&cc) {
            warnings.push(format!(
                "mean complete-case share {cc:.3} outside [{}, {}]",
                COMPLETE_CASE_RANGE.0, COMPLETE_CASE_RANGE.1
            ));
        }
    }
    for m in &methods {
        if !m.failures.is_empty() {
            warnings.push(format!("{}: {} failed replications excluded", m.method, m.failures.len()));
        }
    }

    let mut report = MetricsReport {
        settings: ReportSettings {
            scale,
            master_seed: seed,
            mechanism: scenario.mechanism,
            population_rows: population.n(),
            variables: population.variables().to_vec(),
            arities: config.arities.clone(),
        },
        population_pmf: (0..p).map(|j| marginal_pmf(&population, j)).collect(),
        estimands: estimands
            .iter()
            .enumerate()
            .map(|(e, est)| EstimandRecord {
                label: est.label(&population),
                cells: est.cells.clone(),
                truth: est.truth,
                pre_missing: pre[e].clone(),
            })
            .collect(),
        methods,
        summaries: Vec::new(),
        undefined_rel_mse: Vec::new(),
        warnings,
    };
    summarise(&mut report);
    Ok(report)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `report.json`, `estimands.csv`, `summary.csv` and
/// `marginals.csv` into `dir`.
pub fn emit_report(report: &MetricsReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let json = dir.join("report.json");
    let file = std::fs::File::create(&json).map_err(|e| Error::io(&json, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), report)
        .map_err(|e| Error::Data(format!("{}: {e}", json.display())))?;

    let path = dir.join("estimands.csv");
    let mut w = create(&path)?;
    w.write_record(["method", "estimand", "arity", "truth", "coverage", "rel_mse", "bias", "replications"])?;
    for m in &report.methods {
        for (c, e) in m.cells.iter().zip(&report.estimands) {
            w.write_record([
                m.method.clone(),
                e.label.clone(),
                e.arity().to_string(),
                e.truth.to_string(),
                c.coverage.to_string(),
                fmt_opt(c.rel_mse),
                c.bias.to_string(),
                m.replications.len().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.csv");
    let mut w = create(&path)?;
    w.write_record(["method", "arity", "statistic", "coverage", "rel_mse", "bias"])?;
    for r in &report.summaries {
        w.write_record([
            r.method.clone(),
            r.arity.to_string(),
            r.statistic.clone(),
            r.coverage.to_string(),
            fmt_opt(r.rel_mse),
            r.bias.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("marginals.csv");
    let mut w = create(&path)?;
    w.write_record(["method", "variable", "level", "population", "completed"])?;
    for m in &report.methods {
        for (j, pmf) in m.marginal_pmf.iter().enumerate() {
            for (d, v) in pmf.iter().enumerate() {
                w.write_record([
                    m.method.clone(),
                    report.settings.variables[j].name.clone(),
                    (d + 1).to_string(),
                    report.population_pmf[j][d].to_string(),
                    v.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Counts of each method's failures, for quick inspection.
pub fn failure_counts(report: &MetricsReport) -> BTreeMap<String, usize> {
    report.methods.iter().map(|m| (m.method.clone(), m.failures.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_rate(&[(0.4, 0.6), (0.7, 0.8)], 0.5), 0.5);
        assert_eq!(coverage_rate(&[(0.4, 0.6), (0.45, 0.8)], 0.5), 1.0);
        assert_eq!(coverage_rate(&[(0.6, 0.7), (0.7, 0.8)], 0.5), 0.0);
    }

    #[test]
    fn relative_mse_examples() {
        assert_eq!(relative_mse(&[0.6, 0.45], &[0.6, 0.45], 0.5), Some(1.0));
        let r = relative_mse(&[0.7, 0.3], &[0.6, 0.4], 0.5).unwrap();
        assert!((r - 4.0).abs() < 1e-12);
        let r = relative_mse(&[0.51, 0.49], &[0.505, 0.505], 0.5).unwrap();
        assert!((r - 4.0).abs() < 1e-9, "{r}");
        assert_eq!(relative_mse(&[0.6], &[0.5], 0.5), None);
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias(&[0.5, 0.5], 0.5), 0.0);
        assert!(bias(&[0.52, 0.48], 0.5).abs() < 1e-15);
        assert!((bias(&[0.6, 0.6, 0.6], 0.5) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn quantiles_match_a_sort_oracle() {
        let v = [7.0, 1.0, 3.0, 5.0, 2.0, 6.0, 4.0];
        assert_eq!(five_number_summary(&v).unwrap(), [1.0, 2.5, 4.0, 5.5, 7.0]);
        let w = [0.3, 0.1, 0.9, 0.4, 0.2, 0.8, 0.5];
        let mut sorted = w.to_vec();
        sorted.sort_by(f64::total_cmp);
        for p in [0.0, 0.1, 0.25, 0.5, 0.6, 0.75, 1.0] {
            let h: f64 = 6.0 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            let expect = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);
            assert_eq!(quantile(&sorted, p), expect);
        }
    }

    #[test]
    fn method_names_parse() {
        assert_eq!(MethodKind::parse("cart").unwrap(), MethodKind::Cart);
        assert_eq!(MethodKind::parse("MI-Cart").unwrap(), MethodKind::Cart);
        assert_eq!(MethodKind::parse("missForest").unwrap(), MethodKind::Missforest);
        assert_eq!(MethodKind::parse("mi_dpmpm").unwrap(), MethodKind::Dpmpm);
        assert_eq!(MethodKind::parse("GAIN").unwrap(), MethodKind::Gain);
        assert!(MethodKind::parse("knn").is_err());
    }

    #[test]
    fn synthetic_population_is_deterministic() {
        let spec = SyntheticPopulation {
            rows: 500,
            ..SyntheticPopulation::default()
        };
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.cardinalities(), vec![2, 3, 4, 5, 3]);
        let total: f64 = (1..=3u8).map(|l| spec.cell_probability(&[(1, l)])).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profiles_and_overrides() {
        let text = r#"
            methods = [{ method = "cart" }]
            replications = 3
            scenario = { mechanism = "mcar", target_rate = 0.3, mcar = [{ variable = "V1" }] }
            [population.synthetic]
            rows = 1000
        "#;
        let mut c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.scale().replications, 3);
        assert_eq!(c.scale().n_sample, 2_000);
        c.use_full_scale();
        assert_eq!(
            c.scale(),
            Scale {
                n_sample: 10_000,
                replications: 500,
                imputations: 50,
                mcmc_iterations: 15_000,
                mcmc_burn_in: 5_000,
            }
        );
    }
}
