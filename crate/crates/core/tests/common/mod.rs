//! Oracles shared by the sampler tests and the acceptance target.
#![allow(dead_code)]

use ordimpute::data::{OrdinalDataset, VariableSpec};
use ordimpute::tree::{ClassificationTree, Node};
use statrs::function::erf::erfc;

// Pattern counts for (y1, y2) in {1,2}^2.
pub const PATTERNS: [((u8, u8), usize); 4] = [((1, 1), 8), ((1, 2), 2), ((2, 1), 3), ((2, 2), 7)];

pub fn pattern_dataset() -> OrdinalDataset {
    let vars = vec![VariableSpec::new("a", 2).unwrap(), VariableSpec::new("b", 2).unwrap()];
    let rows: Vec<Vec<u8>> = PATTERNS
        .iter()
        .flat_map(|&((a, b), c)| std::iter::repeat_n(vec![a, b], c))
        .collect();
    OrdinalDataset::from_rows(vars, &rows).unwrap()
}

/// Posterior mean of P(y1 = 1, y2 = 1) for a two-class mixture, by
/// midpoint quadrature over (s, four level probabilities). The concentration
/// is integrated out analytically: given alpha, -ln(1 - V1) ~ Exp(alpha), so
/// marginally it is Lomax and V1 is a transform of s ~ U(0, 1).
pub fn grid_oracle(g: usize) -> f64 {
    let (a, b) = (0.25_f64, 0.25_f64);
    let mid: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
    let (mut num, mut den) = (0.0, 0.0);
    let mut max_ll = f64::NEG_INFINITY;
    // First pass for the maximum log-likelihood, second for the sums.
    for pass in 0..2 {
        for &s in &mid {
            let u = b * ((1.0 - s).powf(-1.0 / a) - 1.0);
            let v1 = -(-u).exp_m1();
            let pi = [v1, 1.0 - v1];
            for &l11 in &mid {
                for &l12 in &mid {
                    for &l21 in &mid {
                        for &l22 in &mid {
                            let lam = [[l11, l12], [l21, l22]];
                            let mut ll = 0.0;
                            for &((y1, y2), c) in &PATTERNS {
                                let mut lik = 0.0;
                                for k in 0..2 {
                                    let p1 = if y1 == 1 { lam[k][0] } else { 1.0 - lam[k][0] };
                                    let p2 = if y2 == 1 { lam[k][1] } else { 1.0 - lam[k][1] };
                                    lik += pi[k] * p1 * p2;
                                }
                                ll += c as f64 * lik.ln();
                            }
                            if pass == 0 {
                                max_ll = max_ll.max(ll);
                            } else {
                                let w = (ll - max_ll).exp();
                                num += w * (pi[0] * l11 * l12 + pi[1] * l21 * l22);
                                den += w;
                            }
                        }
                    }
                }
            }
        }
    }
    num / den
}

// Upper tail of the standard normal, accurate far from zero.
pub fn upper(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// CDF of the standard normal truncated to `(a, b]`.
pub fn truncated_cdf(x: f64, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        (upper(a) - upper(x)) / (upper(a) - upper(b))
    } else if b <= 0.0 {
        (upper(-x) - upper(-a)) / (upper(-b) - upper(-a))
    } else {
        let lower = |t: f64| upper(-t);
        (lower(x) - lower(a)) / (lower(b) - lower(a))
    }
}

/// Kolmogorov-Smirnov distance of sorted draws from a CDF.
pub fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Gini impurity n (1 - sum p^2) of the labels of `rows`, computed directly.
pub fn impurity(labels: &[u8], rows: &[usize], k: usize) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let sq: f64 = (1..=k as u8)
        .map(|c| rows.iter().filter(|&&r| labels[r] == c).count() as f64)
        .map(|c| c * c)
        .sum();
    n - sq / n
}

/// Exhaustive best split over all (variable, threshold) pairs: lowest
/// children impurity, ties to the lowest variable and then threshold.
pub fn brute_split(cols: &[Vec<u8>], cards: &[usize], labels: &[u8], rows: &[usize], k: usize, min_leaf: usize) -> Option<(usize, u8, f64)> {
    let mut best: Option<(usize, u8, f64)> = None;
    for (v, col) in cols.iter().enumerate() {
        for c in 1..cards[v] as u8 {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= c);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let g = impurity(labels, &l, k) + impurity(labels, &r, k);
            if best.is_none_or(|b| g < b.2 - 1e-9) {
                best = Some((v, c, g));
            }
        }
    }
    best
}

/// A tree-fitting instance: predictor columns, their cardinalities, labels
/// with `k` levels and the minimum leaf size.
pub struct TreeCase<'a> {
    pub cols: &'a [Vec<u8>],
    pub cards: &'a [usize],
    pub labels: &'a [u8],
    pub k: usize,
    pub min_leaf: usize,
    /// Minimum impurity decrease for a split.
    pub threshold: f64,
}

/// Walks the tree from node `id` and checks each node against the
/// exhaustive search.
pub fn check_node(tree: &ClassificationTree, id: usize, rows: Vec<usize>, case: &TreeCase) -> Result<(), String> {
    let TreeCase { cols, cards, labels, k, min_leaf, threshold } = *case;
    let parent = impurity(labels, &rows, k);
    let best = brute_split(cols, cards, labels, &rows, k, min_leaf);
    match &tree.nodes()[id] {
        Node::Split {
            variable,
            threshold: t,
            left,
            right,
        } => {
            let (v, c, g) = best.ok_or("split where no valid split exists")?;
            if (*variable, *t) != (v, c) {
                return Err(format!("node {id}: split ({variable}, {t}) but optimum is ({v}, {c})"));
            }
            if parent - g <= threshold {
                return Err(format!("node {id}: split with gain {} below threshold", parent - g));
            }
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| cols[v][i] <= c);
            check_node(tree, *left, l, case)?;
            check_node(tree, *right, r, case)
        }
        Node::Leaf { counts, total } => {
            if rows.len() < min_leaf || *total as usize != rows.len() {
                return Err(format!("leaf {id}: holds {} rows, records {total}", rows.len()));
            }
            for (c, &cnt) in counts.iter().enumerate() {
                if cnt as usize != rows.iter().filter(|&&r| labels[r] as usize == c + 1).count() {
                    return Err(format!("leaf {id}: wrong count for level {}", c + 1));
                }
            }
            match best {
                Some((_, _, g)) if parent - g > threshold + 1e-9 => Err(format!("leaf {id} left a gain of {}", parent - g)),
                _ => Ok(()),
            }
        }
    }
}
