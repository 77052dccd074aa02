//! Cell-probability estimands, Rubin's combining rules and Wald intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::OrdinalDataset;
use crate::error::{Error, Result};

/// Minimum expected count on each side of the filter `nQ > 10, n(1-Q) > 10`.
pub const MIN_EXPECTED: f64 = 10.0;

/// Joint probability that every listed variable takes its listed level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimand {
    /// `(variable, level)` pairs, sorted by variable.
    pub cells: Vec<(usize, u8)>,
    /// Population value.
    pub truth: f64,
}

impl Estimand {
    pub fn new(mut cells: Vec<(usize, u8)>, truth: f64) -> Result<Self> {
        cells.sort_unstable();
        if cells.is_empty() || cells.len() > 3 {
            return Err(Error::InvalidArgument(format!("estimand arity {} outside 1..=3", cells.len())));
        }
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("estimand variables must be distinct".into()));
        }
        Ok(Estimand { cells, truth })
    }

    pub fn arity(&self) -> usize {
        self.cells.len()
    }

    pub fn variables(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.0).collect()
    }

    pub fn validate(&self, data: &OrdinalDataset) -> Result<()> {
        for &(j, level) in &self.cells {
            if j >= data.p() || level == 0 || level as usize > data.cardinality(j) {
                return Err(Error::InvalidArgument(format!("estimand cell ({j}, {level}) out of range")));
            }
        }
        Ok(())
    }

    /// `NAME=level` terms joined by `&`.
    pub fn label(&self, data: &OrdinalDataset) -> String {
        self.cells
            .iter()
            .map(|&(j, l)| format!("{}={}", data.variables()[j].name, l))
            .collect::<Vec<_>>()
            .join("&")
    }
}

/// Sample proportion `q` of rows matching every cell, and `u = q(1-q)/n`.
pub fn cell_probability(data: &OrdinalDataset, estimand: &Estimand) -> (f64, f64) {
    let n = data.n();
    let cols: Vec<(&[u8], u8)> = estimand.cells.iter().map(|&(j, l)| (data.column(j), l)).collect();
    let hits = (0..n).filter(|&i| cols.iter().all(|(c, l)| c[i] == *l)).count();
    let q = hits as f64 / n as f64;
    (q, q * (1.0 - q) / n as f64)
}

/// Joint count table over a tuple of variables, indexed in mixed radix.
fn joint_counts(data: &OrdinalDataset, vars: &[usize]) -> Vec<usize> {
    let size: usize = vars.iter().map(|&j| data.cardinality(j)).product();
    let mut counts = vec![0usize; size];
    let cols: Vec<&[u8]> = vars.iter().map(|&j| data.column(j)).collect();
    for i in 0..data.n() {
        counts[cell_index(data, vars, |k| cols[k][i])] += 1;
    }
    counts
}

fn cell_index(data: &OrdinalDataset, vars: &[usize], level: impl Fn(usize) -> u8) -> usize {
    let mut idx = 0;
    for (k, &j) in vars.iter().enumerate() {
        idx = idx * data.cardinality(j) + level(k) as usize - 1;
    }
    idx
}

/// `(q, u)` for every estimand, sharing one count table per variable tuple.
pub fn estimate_all(data: &OrdinalDataset, estimands: &[Estimand]) -> Vec<(f64, f64)> {
    let n = data.n() as f64;
    let mut tables: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    estimands
        .iter()
        .map(|e| {
            let vars = e.variables();
            let table = tables.entry(vars.clone()).or_insert_with(|| joint_counts(data, &vars));
            let q = table[cell_index(data, &vars, |k| e.cells[k].1)] as f64 / n;
            (q, q * (1.0 - q) / n)
        })
        .collect()
}

/// All cells of the given arity whose population value passes the
/// expected-count filter at sample size `n_sample`.
pub fn enumerate_estimands(population: &OrdinalDataset, arity: usize, n_sample: usize) -> Result<Vec<Estimand>> {
    if !(1..=3).contains(&arity) {
        return Err(Error::InvalidArgument(format!("arity {arity} outside 1..=3")));
    }
    let p = population.p();
    let n_pop = population.n() as f64;
    let mut out = Vec::new();
    let mut tuple = Vec::with_capacity(arity);
    let mut tuples = Vec::new();
    combinations(p, arity, 0, &mut tuple, &mut tuples);
    for vars in tuples {
        let counts = joint_counts(population, &vars);
        let cards: Vec<usize> = vars.iter().map(|&j| population.cardinality(j)).collect();
        for (idx, &c) in counts.iter().enumerate() {
            let q = c as f64 / n_pop;
            if !passes_filter(q, n_sample) {
                continue;
            }
            let mut rem = idx;
            let mut levels = vec![0u8; arity];
            for k in (0..arity).rev() {
                levels[k] = (rem % cards[k]) as u8 + 1;
                rem /= cards[k];
            }
            let cells = vars.iter().copied().zip(levels).collect();
            out.push(Estimand { cells, truth: q });
        }
    }
    Ok(out)
}

pub fn passes_filter(q: f64, n: usize) -> bool {
    let n = n as f64;
    n * q > MIN_EXPECTED && n * (1.0 - q) > MIN_EXPECTED
}

fn combinations(p: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for j in start..p {
        cur.push(j);
        combinations(p, k, j + 1, cur, out);
        cur.pop();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub q_bar: f64,
    pub b: f64,
    pub u_bar: f64,
    pub total: f64,
    /// Infinite when the between-imputation variance is zero.
    pub dof: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl PooledEstimate {
    pub fn covers(&self, q: f64) -> bool {
        self.ci_lower <= q && q <= self.ci_upper
    }
}

/// Upper 0.975 quantile of Student's t; `dof = inf` gives the normal value.
pub fn t_quantile_975(dof: f64) -> f64 {
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975);
    if dof.is_infinite() {
        return z;
    }
    // statrs loses accuracy and eventually stalls for very large dof; the
    // expansion in 1/dof is accurate to about 1e-9 from here on.
    if dof > 1e3 {
        let (z2, v) = (z * z, dof);
        let g1 = z * (z2 + 1.0) / 4.0;
        let g2 = z * ((5.0 * z2 + 16.0) * z2 + 3.0) / 96.0;
        let g3 = z * (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) / 384.0;
        return z + g1 / v + g2 / (v * v) + g3 / (v * v * v);
    }
    StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975)
}

/// Rubin's combining rules over `L >= 2` completed-data estimates.
pub fn pool(q: &[f64], u: &[f64]) -> Result<PooledEstimate> {
    let l = q.len();
    if l < 2 || u.len() != l {
        return Err(Error::InvalidArgument(format!("pooling needs L >= 2 paired estimates, got {l} and {}", u.len())));
    }
    let lf = l as f64;
    // Offset from the first estimate so identical estimates pool exactly.
    let q_bar = q[0] + q.iter().map(|x| x - q[0]).sum::<f64>() / lf;
    let b = q.iter().map(|x| (x - q_bar).powi(2)).sum::<f64>() / (lf - 1.0);
    let u_bar = u.iter().sum::<f64>() / lf;
    let inflated = (1.0 + 1.0 / lf) * b;
    let total = inflated + u_bar;
    let dof = if b > 0.0 {
        (lf - 1.0) * (1.0 + u_bar / inflated).powi(2)
    } else {
        f64::INFINITY
    };
    let half = t_quantile_975(dof) * total.sqrt();
    Ok(PooledEstimate {
        q_bar,
        b,
        u_bar,
        total,
        dof,
        ci_lower: q_bar - half,
        ci_upper: q_bar + half,
    })
}

/// `q +- 1.96 sqrt(q(1-q)/n)`, not clamped to `[0, 1]`.
pub fn wald_interval(q_hat: f64, n: usize) -> (f64, f64) {
    let half = 1.96 * (q_hat * (1.0 - q_hat) / n as f64).sqrt();
    (q_hat - half, q_hat + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantile_is_continuous_across_the_expansion_switch() {
        let below = t_quantile_975(999.999);
        let above = t_quantile_975(1000.001);
        assert!((below - above).abs() < 1e-8, "{below} {above}");
        assert!((t_quantile_975(1e12) - 1.959963984540054).abs() < 1e-10);
        assert!(t_quantile_975(1e30).is_finite());
    }
    use crate::data::VariableSpec;

    fn small() -> OrdinalDataset {
        let vars = vec![
            VariableSpec::new("a", 2).unwrap(),
            VariableSpec::new("b", 3).unwrap(),
            VariableSpec::new("c", 2).unwrap(),
        ];
        OrdinalDataset::new(vars, vec![vec![1, 1, 1, 2], vec![1, 2, 3, 3], vec![2, 2, 2, 1]]).unwrap()
    }

    #[test]
    fn cell_probability_counts() {
        let d = small();
        assert_eq!(cell_probability(&d, &Estimand::new(vec![(2, 2)], 0.0).unwrap()).0, 0.75);
        let (q, u) = cell_probability(&d, &Estimand::new(vec![(0, 1)], 0.0).unwrap());
        assert_eq!((q, u), (0.75, 0.046875));
        let all = OrdinalDataset::new(vec![VariableSpec::new("x", 2).unwrap()], vec![vec![2, 2]]).unwrap();
        assert_eq!(cell_probability(&all, &Estimand::new(vec![(0, 2)], 0.0).unwrap()), (1.0, 0.0));
    }

    #[test]
    fn grouped_estimates_match_direct() {
        let d = small();
        let est: Vec<Estimand> = (1..=3)
            .flat_map(|a| enumerate_estimands(&d, a, 1_000_000).unwrap())
            .collect();
        let grouped = estimate_all(&d, &est);
        for (e, g) in est.iter().zip(&grouped) {
            assert_eq!(cell_probability(&d, e), *g);
            assert_eq!(g.0, e.truth);
        }
    }

    #[test]
    fn estimand_validation() {
        assert!(Estimand::new(vec![], 0.0).is_err());
        assert!(Estimand::new(vec![(0, 1), (0, 2)], 0.0).is_err());
        assert!(Estimand::new(vec![(0, 1), (1, 1), (2, 1), (3, 1)], 0.0).is_err());
        let e = Estimand::new(vec![(2, 1), (0, 2)], 0.0).unwrap();
        assert_eq!(e.cells, vec![(0, 2), (2, 1)]);
        assert_eq!(e.label(&small()), "a=2&c=1");
        assert!(Estimand::new(vec![(1, 4)], 0.0).unwrap().validate(&small()).is_err());
    }

    #[test]
    fn pool_worked_example() {
        let p = pool(&[0.5, 0.6, 0.7], &[0.01, 0.01, 0.01]).unwrap();
        assert!((p.q_bar - 0.6).abs() < 1e-12);
        assert!((p.b - 0.01).abs() < 1e-12);
        assert!((p.u_bar - 0.01).abs() < 1e-12);
        assert!((p.total - 0.07 / 3.0).abs() < 1e-12);
        assert!((p.dof - 6.125).abs() < 1e-12);
        assert!(p.ci_lower <= p.q_bar && p.q_bar <= p.ci_upper);
    }

    #[test]
    fn pool_degenerate_and_linear() {
        let p = pool(&[0.3, 0.3, 0.3], &[0.01, 0.02, 0.03]).unwrap();
        assert_eq!(p.b, 0.0);
        assert!(p.dof.is_infinite());
        assert!((p.total - 0.02).abs() < 1e-15);
        assert!((p.ci_upper - 0.3 - 1.959963984540054 * 0.02f64.sqrt()).abs() < 1e-12);

        let q = [0.2, 0.25, 0.31, 0.22];
        let u = [0.001, 0.002, 0.0015, 0.001];
        let base = pool(&q, &u).unwrap();
        let doubled: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let twice = pool(&q, &doubled).unwrap();
        assert!((twice.total - base.total - base.u_bar).abs() < 1e-15);
        assert!(pool(&[0.1], &[0.1]).is_err());
    }

    #[test]
    fn pool_is_permutation_invariant() {
        let a = pool(&[0.1, 0.4, 0.2, 0.3], &[0.01, 0.02, 0.03, 0.04]).unwrap();
        let b = pool(&[0.3, 0.2, 0.1, 0.4], &[0.04, 0.03, 0.01, 0.02]).unwrap();
        assert!((a.q_bar - b.q_bar).abs() < 1e-15 && (a.total - b.total).abs() < 1e-15);
    }

    #[test]
    fn t_quantiles() {
        for (dof, want) in [(1.0, 12.706), (2.0, 4.303), (10.0, 2.228), (f64::INFINITY, 1.960)] {
            assert!((t_quantile_975(dof) - want).abs() < 1e-3, "{dof}");
        }
    }

    #[test]
    fn wald() {
        let (lo, hi) = wald_interval(0.5, 10_000);
        assert!((lo - 0.4902).abs() < 1e-12 && (hi - 0.5098).abs() < 1e-12);
        assert_eq!(wald_interval(0.0, 50), (0.0, 0.0));
        assert_eq!(wald_interval(1.0, 50), (1.0, 1.0));
    }

    #[test]
    fn filter_rule() {
        assert!(!passes_filter(0.0005, 10_000));
        assert!(passes_filter(0.5, 10_000));
        let d = small();
        assert!(enumerate_estimands(&d, 1, 1000).unwrap().len() <= 7);
        assert!(enumerate_estimands(&d, 4, 10).is_err());
    }
}
