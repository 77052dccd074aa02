mod common;

use common::{ks_distance, truncated_cdf, upper};
use ordimpute::data::{IncompleteDataset, OrdinalDataset, VariableSpec};
use ordimpute::dpmmvn::{dpmmvn_impute, level_of, sample_truncated_normal, Cutoffs, DpmmvnConfig, DpmmvnPrior, DpmmvnSampler};
use ordimpute::missingness::inject_mcar;
use ordimpute::rng;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn truncated_normal_ks() {
    let windows = [
        (0.0, f64::INFINITY),
        (3.0, f64::INFINITY),
        (8.0, f64::INFINITY),
        (f64::NEG_INFINITY, -6.0),
        (5.0, 5.5),
        (-7.5, -7.0),
        (-1.0, 2.0),
        (-0.2, 0.3),
        (f64::NEG_INFINITY, f64::INFINITY),
    ];
    let mut r = rng::from_seed(11);
    for &(a, b) in &windows {
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_truncated_normal(0.0, 1.0, a, b, &mut r).unwrap()).collect();
        draws.sort_by(f64::total_cmp);
        let ks = ks_distance(&draws, |x| truncated_cdf(x, a, b));
        assert!(ks < 0.01, "window ({a}, {b}]: KS {ks}");
    }
}

#[test]
fn single_class_probit_marginal() {
    let n = 500;
    let mut r = rng::from_seed(12);
    let col: Vec<u8> = (0..n).map(|_| if r.random::<f64>() < 0.3 { 1 } else { 2 }).collect();
    let data = OrdinalDataset::new(vec![VariableSpec::new("y", 2).unwrap()], vec![col]).unwrap();
    let input = inject_mcar(&data, &[(0, 0.3)], 13).unwrap();
    let observed = input.observed_pmf(0)[0];
    let missing = input.mask().missing_rows(0);

    let mut sampler = DpmmvnSampler::new(&input, 1, false, &DpmmvnPrior::vague(1), &mut r).unwrap();
    let (burn, keep) = (500, 5000);
    let mut ones = 0usize;
    for t in 0..burn + keep {
        sampler.sweep(&mut r).unwrap();
        if t >= burn {
            ones += missing.iter().filter(|&&i| sampler.current.get(i, 0) == 1).count();
        }
    }
    let rate = ones as f64 / (keep * missing.len()) as f64;
    assert!((rate - observed).abs() < 0.03, "imputed {rate} vs observed {observed}");
}

fn separated_clusters() -> IncompleteDataset {
    let n = 1000;
    let mut r = rng::from_seed(14);
    let cut = Cutoffs::standard(10);
    let mut cols = vec![Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let centre = if i % 2 == 0 { -1.0 } else { 1.0 };
        for col in cols.iter_mut() {
            let x = centre + 0.25 * r.sample::<f64, _>(StandardNormal);
            col.push(level_of(x, &cut));
        }
    }
    let vars = vec![VariableSpec::new("a", 10).unwrap(), VariableSpec::new("b", 10).unwrap()];
    IncompleteDataset::from_columns(vars, cols).unwrap()
}

// Per post-burn-in sweep: occupied classes, and whether every class draws
// its rows from a single generating cluster.
fn cluster_sweeps(input: &IncompleteDataset) -> Vec<(usize, bool)> {
    let mut r = rng::from_seed(24);
    let mut sampler = DpmmvnSampler::new(input, 50, true, &DpmmvnPrior::vague(2), &mut r).unwrap();
    let (burn, keep) = (500, 1000);
    let mut out = Vec::with_capacity(keep);
    for t in 0..burn + keep {
        sampler.sweep(&mut r).unwrap();
        if t < burn {
            continue;
        }
        let z = &sampler.state.z;
        let k = sampler.state.classes();
        let mut seen = vec![[false; 2]; k];
        for (i, &c) in z.iter().enumerate() {
            seen[c][i % 2] = true;
        }
        let pure = seen.iter().all(|s| !(s[0] && s[1]));
        out.push((sampler.state.occupied(), pure));
    }
    out
}

#[test]
fn separated_clusters_never_merge() {
    let sweeps = cluster_sweeps(&separated_clusters());
    let good = sweeps.iter().filter(|s| s.1).count();
    assert!(good as f64 >= 0.9 * sweeps.len() as f64, "classes pure in {good} of {} sweeps", sweeps.len());
}

#[test]
#[ignore = "vague hyperprior keeps small extra classes; exactly two is rare"]
fn separated_clusters_use_exactly_two_classes() {
    let sweeps = cluster_sweeps(&separated_clusters());
    let two = sweeps.iter().filter(|s| s.0 == 2).count();
    assert!(two as f64 >= 0.9 * sweeps.len() as f64, "two classes in {two} of {} sweeps", sweeps.len());
}

#[test]
fn recovers_generating_marginals() {
    let n = 2000;
    let cards = [3usize, 4, 2];
    let mu = [0.2, -0.3, 0.0];
    // Equicorrelated, correlation 0.5, unit variances.
    let rho: f64 = 0.5;
    let mut r = rng::from_seed(15);
    let cutoffs: Vec<Cutoffs> = cards.iter().map(|&d| Cutoffs::standard(d)).collect();
    let mut cols = vec![Vec::with_capacity(n); 3];
    for _ in 0..n {
        let common: f64 = r.sample(StandardNormal);
        for j in 0..3 {
            let e: f64 = r.sample(StandardNormal);
            let x = mu[j] + rho.sqrt() * common + (1.0 - rho).sqrt() * e;
            cols[j].push(level_of(x, &cutoffs[j]));
        }
    }
    let vars: Vec<VariableSpec> = cards
        .iter()
        .enumerate()
        .map(|(j, &d)| VariableSpec::new(format!("v{j}"), d).unwrap())
        .collect();
    let data = OrdinalDataset::new(vars, cols).unwrap();
    let input = inject_mcar(&data, &[(0, 0.3), (1, 0.3), (2, 0.3)], 16).unwrap();
    let cfg = DpmmvnConfig {
        classes: 20,
        ..DpmmvnConfig::new(1500, 500, 10)
    };
    let res = dpmmvn_impute(&input, &cfg, 17).unwrap();
    res.verify(&input).unwrap();
    let upper_tail = |x: f64| upper(x);
    for j in 0..3 {
        let mut pooled = vec![0.0; cards[j]];
        for z in &res.completed {
            for &y in z.column(j) {
                pooled[y as usize - 1] += 1.0 / (n * res.completed.len()) as f64;
            }
        }
        for d in 1..=cards[j] {
            let (lo, hi) = cutoffs[j].window(d as u8);
            let truth = upper_tail(lo - mu[j]) - upper_tail(hi - mu[j]);
            assert!((pooled[d - 1] - truth).abs() < 0.03, "var {j} level {d}: {} vs {truth}", pooled[d - 1]);
        }
    }
}
