mod common;

use common::{grid_oracle, pattern_dataset};
use ordimpute::data::{IncompleteDataset, OrdinalDataset, VariableSpec};
use ordimpute::dpmpm::{dpmpm_impute, DpmpmConfig, DpmpmSampler};
use ordimpute::glm::sample_level;
use ordimpute::missingness::inject_mcar;
use ordimpute::rng::{self, Rng};

#[test]
fn two_class_posterior_matches_quadrature() {
    let target = grid_oracle(36);
    let data = pattern_dataset();
    let input = IncompleteDataset::fully_observed(&data);
    let mut r = rng::from_seed(20);
    let mut sampler = DpmpmSampler::new(&input, 2, false, &mut r).unwrap();
    let (burn, keep) = (2_000, 200_000);
    let mut acc = 0.0;
    for t in 0..burn + keep {
        sampler.sweep(&mut r);
        if t >= burn {
            let st = &sampler.state;
            acc += (0..2).map(|k| st.pi[k] * st.lambda[k][0][0] * st.lambda[k][1][0]).sum::<f64>();
        }
    }
    let est = acc / keep as f64;
    assert!((est - target).abs() < 0.01, "chain {est} vs quadrature {target}");
}

/// Draws `n` rows from a latent-class model with weights `pi` and
/// per-class level probabilities `lambda[k][j]`.
fn simulate(n: usize, pi: &[f64], lambda: &[Vec<Vec<f64>>], r: &mut Rng) -> OrdinalDataset {
    let p = lambda[0].len();
    let mut cols = vec![Vec::with_capacity(n); p];
    for _ in 0..n {
        let k = sample_level(pi, r) as usize - 1;
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(sample_level(&lambda[k][j], r));
        }
    }
    let vars = (0..p)
        .map(|j| VariableSpec::new(format!("v{j}"), lambda[0][j].len()).unwrap())
        .collect();
    OrdinalDataset::new(vars, cols).unwrap()
}

#[test]
fn separated_classes_occupy_two() {
    // Five levels keep a fresh class's prior predictive small, so stray
    // rows stay with their generating class.
    let low = vec![0.98, 0.02, 0.0, 0.0, 0.0];
    let high = vec![0.0, 0.0, 0.0, 0.02, 0.98];
    let lambda = vec![vec![low; 4], vec![high; 4]];
    let mut r = rng::from_seed(40);
    let data = simulate(1000, &[0.5, 0.5], &lambda, &mut r);
    let input = IncompleteDataset::fully_observed(&data);
    let mut sampler = DpmpmSampler::new(&input, 40, true, &mut r).unwrap();
    let (burn, keep) = (500, 2000);
    let mut two = 0;
    for t in 0..burn + keep {
        sampler.sweep(&mut r);
        if t >= burn && sampler.state.occupied() == 2 {
            two += 1;
        }
    }
    assert!(two as f64 >= 0.95 * keep as f64, "two classes in {two} of {keep} sweeps");
}

// Batch-means standard error of a mean.
fn batch_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[test]
fn marginal_trace_is_stationary() {
    let lambda = vec![
        vec![vec![0.7, 0.2, 0.1], vec![0.6, 0.4], vec![0.5, 0.3, 0.1, 0.1]],
        vec![vec![0.1, 0.3, 0.6], vec![0.2, 0.8], vec![0.1, 0.1, 0.3, 0.5]],
    ];
    let mut r = rng::from_seed(41);
    let data = simulate(500, &[0.6, 0.4], &lambda, &mut r);
    let input = inject_mcar(&data, &[(0, 0.3), (2, 0.3)], 42).unwrap();
    let cfg = DpmpmConfig::new(6000, 1000, 2);
    let res = dpmpm_impute(&input, &cfg, 43).unwrap();
    let trace: Vec<f64> = res.trace[1000..].iter().map(|t| t.marginals[0]).collect();
    let first = &trace[..trace.len() / 10];
    let last = &trace[trace.len() / 2..];
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let z = (mean(first) - mean(last)) / (batch_se(first, 10).powi(2) + batch_se(last, 10).powi(2)).sqrt();
    assert!(z.abs() < 1.96, "Geweke z = {z}");
}

#[test]
fn recovers_bivariate_probabilities() {
    let pi = [0.5, 0.3, 0.2];
    let lambda = vec![
        vec![vec![0.8, 0.1, 0.1], vec![0.7, 0.2, 0.1], vec![0.6, 0.4]],
        vec![vec![0.1, 0.8, 0.1], vec![0.2, 0.6, 0.2], vec![0.3, 0.7]],
        vec![vec![0.1, 0.1, 0.8], vec![0.1, 0.2, 0.7], vec![0.9, 0.1]],
    ];
    let mut r = rng::from_seed(44);
    let n = 3000;
    let data = simulate(n, &pi, &lambda, &mut r);
    let input = inject_mcar(&data, &[(0, 0.3), (1, 0.3), (2, 0.3)], 45).unwrap();
    let res = dpmpm_impute(&input, &DpmpmConfig::new(2000, 1000, 10), 46).unwrap();
    res.verify(&input).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in [(0usize, 1usize), (0, 2), (1, 2)] {
        for x in 1..=lambda[0][a].len() {
            for y in 1..=lambda[0][b].len() {
                let truth: f64 = (0..3).map(|k| pi[k] * lambda[k][a][x - 1] * lambda[k][b][y - 1]).sum();
                let pooled = res
                    .completed
                    .iter()
                    .map(|z| (0..n).filter(|&i| z.get(i, a) as usize == x && z.get(i, b) as usize == y).count() as f64 / n as f64)
                    .sum::<f64>()
                    / res.completed.len() as f64;
                worst = worst.max((pooled - truth).abs());
            }
        }
    }
    assert!(worst < 0.03, "worst bivariate error {worst}");
}
