//! Gini classification trees and random forests over ordinal predictors.
//!
//! Splits are ordered: a node sends a row left when its level on the split
//! variable is `<= threshold`. Leaves keep the full class counts of the
//! training rows that reach them so imputations can sample from the leaf.

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Minimum leaf size used by the CART conditional.
pub const DEFAULT_MIN_LEAF: usize = 4;
/// Relative complexity threshold: a split must reduce the total weighted
/// Gini impurity by more than this fraction of the root impurity.
pub const DEFAULT_COMPLEXITY: f64 = 1e-4;
/// Trees per forest for the leaf-sampling mode.
pub const DEFAULT_SAMPLE_TREES: usize = 10;
/// Trees per forest for the majority-vote mode.
pub const DEFAULT_MAJORITY_TREES: usize = 100;

const MIN_GAIN: f64 = 1e-12;

/// Predictor columns with their cardinalities.
#[derive(Clone, Copy, Debug)]
pub struct Features<'a> {
    pub columns: &'a [&'a [u8]],
    pub cardinalities: &'a [usize],
}

impl Features<'_> {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        variable: usize,
        threshold: u8,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Count of training responses per level, index `level - 1`.
        counts: Vec<u32>,
        total: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationTree {
    nodes: Vec<Node>,
    n_classes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    pub min_leaf: usize,
    pub complexity: f64,
    /// Predictors sampled per split; `None` considers all of them.
    pub mtry: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_leaf: DEFAULT_MIN_LEAF,
            complexity: DEFAULT_COMPLEXITY,
            mtry: None,
        }
    }
}

/// Best split found at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub variable: usize,
    pub threshold: u8,
    /// `sum_L c^2 / n_L + sum_R c^2 / n_R`; larger means purer children.
    pub score: f64,
}

/// Weighted Gini impurity `n (1 - sum p^2)` of a count vector.
pub fn weighted_gini(counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    n as f64 - sum_sq(counts) / n as f64
}

fn sum_sq(counts: &[u32]) -> f64 {
    counts.iter().map(|&c| (c as f64) * (c as f64)).sum()
}

struct Builder<'a> {
    features: Features<'a>,
    labels: &'a [u8],
    n_classes: usize,
    params: TreeParams,
    threshold: f64,
    nodes: Vec<Node>,
    table: Vec<u32>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[u32]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &r in rows {
            c[self.labels[r as usize] as usize - 1] += 1;
        }
        c
    }

    fn best_split(&mut self, rows: &[u32], candidates: &[usize]) -> Option<SplitChoice> {
        let k = self.n_classes;
        let min_leaf = self.params.min_leaf.max(1);
        let n = rows.len();
        let mut best: Option<SplitChoice> = None;
        for &v in candidates {
            let d = self.features.cardinalities[v];
            let col = self.features.columns[v];
            self.table.clear();
            self.table.resize(d * k, 0);
            for &r in rows {
                let lvl = col[r as usize] as usize - 1;
                let y = self.labels[r as usize] as usize - 1;
                self.table[lvl * k + y] += 1;
            }
            let mut left = vec![0u32; k];
            let mut right: Vec<u32> = (0..k).map(|y| (0..d).map(|l| self.table[l * k + y]).sum()).collect();
            let mut n_left = 0usize;
            for c in 0..d - 1 {
                for y in 0..k {
                    let t = self.table[c * k + y];
                    left[y] += t;
                    right[y] -= t;
                    n_left += t as usize;
                }
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let score = sum_sq(&left) / n_left as f64 + sum_sq(&right) / n_right as f64;
                let better = match best {
                    None => true,
                    Some(b) => score > b.score + 1e-12 * b.score.abs().max(1.0),
                };
                if better {
                    best = Some(SplitChoice {
                        variable: v,
                        threshold: (c + 1) as u8,
                        score,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: &mut [u32], rng: &mut Option<&mut Rng>) -> usize {
        let counts = self.counts(rows);
        let id = self.nodes.len();
        let total = rows.len() as u32;
        self.nodes.push(Node::Leaf {
            counts: counts.clone(),
            total,
        });
        let n = rows.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let p = self.features.len();
        let candidates: Vec<usize> = match (self.params.mtry, rng.as_deref_mut()) {
            (Some(m), Some(r)) if m < p => {
                let mut c = index::sample(r, p, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p).collect(),
        };
        let Some(split) = self.best_split(rows, &candidates) else {
            return id;
        };
        let parent = sum_sq(&counts) / n as f64;
        if split.score - parent <= self.threshold {
            return id;
        }
        let col = self.features.columns[split.variable];
        let mut lo = 0;
        for i in 0..n {
            if col[rows[i] as usize] <= split.threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (l_rows, r_rows) = rows.split_at_mut(lo);
        let left = self.build(l_rows, rng);
        let right = self.build(r_rows, rng);
        self.nodes[id] = Node::Split {
            variable: split.variable,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn validate(features: &Features<'_>, labels: &[u8], n_classes: usize) -> Result<()> {
    if features.columns.len() != features.cardinalities.len() {
        return Err(Error::InvalidArgument("one cardinality per predictor column required".into()));
    }
    if features.columns.iter().any(|c| c.len() != labels.len()) {
        return Err(Error::InvalidArgument("predictor columns and labels differ in length".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y == 0 || y as usize > n_classes) {
        return Err(Error::InvalidArgument(format!("label {y} outside 1..={n_classes}")));
    }
    for (col, &d) in features.columns.iter().zip(features.cardinalities) {
        if col.iter().any(|&v| v == 0 || v as usize > d) {
            return Err(Error::InvalidArgument("predictor level out of range".into()));
        }
    }
    Ok(())
}

fn grow(
    features: Features<'_>,
    labels: &[u8],
    n_classes: usize,
    params: TreeParams,
    mut rows: Vec<u32>,
    mut rng: Option<&mut Rng>,
) -> ClassificationTree {
    let mut builder = Builder {
        features,
        labels,
        n_classes,
        params,
        threshold: 0.0,
        nodes: Vec::new(),
        table: Vec::new(),
    };
    let root_counts = builder.counts(&rows);
    let root_impurity = weighted_gini(&root_counts);
    builder.threshold = (params.complexity * root_impurity).max(MIN_GAIN);
    builder.build(&mut rows, &mut rng);
    ClassificationTree {
        nodes: builder.nodes,
        n_classes,
    }
}

/// Greedy Gini tree on all rows.
pub fn fit_tree(features: Features<'_>, labels: &[u8], n_classes: usize, min_leaf: usize, complexity: f64) -> Result<ClassificationTree> {
    validate(&features, labels, n_classes)?;
    if labels.len() < min_leaf.max(1) {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot fill a leaf of size {min_leaf}",
            labels.len()
        )));
    }
    let params = TreeParams {
        min_leaf,
        complexity,
        mtry: None,
    };
    Ok(grow(features, labels, n_classes, params, (0..labels.len() as u32).collect(), None))
}

impl ClassificationTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Index of the leaf reached by a row of predictor levels.
    pub fn leaf_index(&self, row: &[u8]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    variable,
                    threshold,
                    left,
                    right,
                } => id = if row[*variable] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Class counts of the leaf reached by `row`.
    pub fn leaf_counts(&self, row: &[u8]) -> &[u32] {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { counts, .. } => counts,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Plurality class of the reached leaf, lowest level on ties.
    pub fn predict(&self, row: &[u8]) -> u8 {
        argmax_lowest(self.leaf_counts(row))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn argmax_lowest(counts: &[u32]) -> u8 {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u8 + 1
}

/// Uniform draw from the reached leaf's response multiset.
pub fn sample_from_leaf(tree: &ClassificationTree, row: &[u8], rng: &mut Rng) -> u8 {
    let counts = tree.leaf_counts(row);
    let total: u32 = counts.iter().sum();
    let mut u = rng.random_range(0..total);
    for (k, &c) in counts.iter().enumerate() {
        if u < c {
            return k as u8 + 1;
        }
        u -= c;
    }
    unreachable!("leaf counts sum to total")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMode {
    /// Pick a tree uniformly, then sample from its leaf.
    Sample,
    /// Plurality vote of the trees' leaf predictions.
    Majority,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<ClassificationTree>,
    pub mtry: usize,
    pub mode: ForestMode,
}

/// `floor(sqrt(n_predictors))`, at least 1.
pub fn default_mtry(n_predictors: usize) -> usize {
    ((n_predictors as f64).sqrt().floor() as usize).max(1)
}

/// Bootstrap indices of size `n`.
pub fn bootstrap_rows(n: usize, rng: &mut Rng) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..n as u32)).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn fit_forest(
    features: Features<'_>,
    labels: &[u8],
    n_classes: usize,
    n_trees: usize,
    mtry: usize,
    min_leaf: usize,
    mode: ForestMode,
    rng: &mut Rng,
) -> Result<ForestModel> {
    validate(&features, labels, n_classes)?;
    if n_trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let p = features.len();
    if p > 0 && !(1..=p).contains(&mtry) {
        return Err(Error::InvalidArgument(format!("mtry {mtry} outside 1..={p}")));
    }
    if labels.is_empty() || labels.len() < min_leaf.max(1) {
        return Err(Error::InvalidArgument("too few rows for a forest".into()));
    }
    let params = TreeParams {
        min_leaf,
        complexity: 0.0,
        mtry: Some(mtry),
    };
    let trees = (0..n_trees)
        .map(|_| {
            let rows = bootstrap_rows(labels.len(), rng);
            grow(features, labels, n_classes, params, rows, Some(rng))
        })
        .collect();
    Ok(ForestModel { trees, mtry, mode })
}

impl ForestModel {
    /// Plurality vote across trees, lowest level on ties.
    pub fn majority(&self, row: &[u8]) -> u8 {
        let k = self.trees[0].n_classes();
        let mut votes = vec![0u32; k];
        for t in &self.trees {
            votes[t.predict(row) as usize - 1] += 1;
        }
        argmax_lowest(&votes)
    }
}

pub fn forest_impute_value(model: &ForestModel, row: &[u8], rng: &mut Rng) -> u8 {
    match model.mode {
        ForestMode::Sample => {
            let t = &model.trees[rng.random_range(0..model.trees.len())];
            sample_from_leaf(t, row, rng)
        }
        ForestMode::Majority => model.majority(row),
    }
}
