use std::collections::{BTreeMap, BTreeSet};

use ordimpute::data::{OrdinalDataset, VariableSpec};
use ordimpute::missingness::{calibrate_intercept, inject_mar, inject_mcar, logistic, Mechanism, MarRule, MissingnessScenario};
use ordimpute::rng;
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(n: usize, cards: &[usize], seed: u64) -> OrdinalDataset {
    let mut r = rng::from_seed(seed);
    let vars = cards
        .iter()
        .enumerate()
        .map(|(j, &d)| VariableSpec::new(format!("v{j}"), d).unwrap())
        .collect();
    let cols = cards
        .iter()
        .map(|&d| (0..n).map(|_| r.random_range(1..=d as u8)).collect())
        .collect();
    OrdinalDataset::new(vars, cols).unwrap()
}

// Two fully observed predictors, one MAR target, one MCAR target.
fn scenario(coef: (f64, f64), rate: f64) -> MissingnessScenario {
    MissingnessScenario {
        mechanism: Mechanism::Mar,
        fully_observed: BTreeSet::from([0, 1]),
        mcar_targets: vec![(3, rate)],
        mar_rules: vec![MarRule {
            target: 2,
            intercept: 0.0,
            coefficients: BTreeMap::from([(0, coef.0), (1, coef.1)]),
        }],
        target_rate: rate,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masking_never_changes_values(seed in 0u64..1000, rate in 0.0f64..0.95, a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let data = random_dataset(200, &[3, 5, 4, 2], seed);
        let s = scenario((a, b), rate.max(0.01)).calibrated(&data).unwrap();
        let out = inject_mar(&data, &s, seed + 1).unwrap();
        for j in 0..data.p() {
            for i in 0..data.n() {
                match out.get(i, j) {
                    Some(v) => prop_assert_eq!(v, data.get(i, j)),
                    None => prop_assert!(j >= 2, "fully observed column {} masked", j),
                }
            }
        }
    }

    #[test]
    fn calibration_hits_the_target(seed in 0u64..1000, rate in 0.02f64..0.98, a in -40.0f64..40.0, b in -40.0f64..40.0) {
        let data = random_dataset(300, &[3, 5, 4, 2], seed);
        let rule = &scenario((a, b), rate).mar_rules[0];
        let intercept = calibrate_intercept(&data, rule, rate).unwrap();
        let mut fitted = rule.clone();
        fitted.intercept = intercept;
        let mean = fitted.probabilities(&data).iter().sum::<f64>() / data.n() as f64;
        prop_assert!((mean - rate).abs() < 1e-4, "mean {} vs {}", mean, rate);
    }

    #[test]
    fn duplicate_rows_share_probabilities(seed in 0u64..1000, a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let base = random_dataset(50, &[3, 5, 4, 2], seed);
        let rows: Vec<Vec<u8>> = (0..base.n()).chain(0..base.n()).map(|i| base.row(i)).collect();
        let doubled = OrdinalDataset::from_rows(base.variables().to_vec(), &rows).unwrap();
        let probs = scenario((a, b), 0.3).mar_rules[0].probabilities(&doubled);
        for i in 0..base.n() {
            prop_assert_eq!(probs[i], probs[i + base.n()]);
        }
    }

    #[test]
    fn injection_is_seed_deterministic(seed in 0u64..1000) {
        let data = random_dataset(100, &[3, 5, 4, 2], 7);
        let s = scenario((10.0, -5.0), 0.3).calibrated(&data).unwrap();
        prop_assert_eq!(inject_mar(&data, &s, seed).unwrap(), inject_mar(&data, &s, seed).unwrap());
    }

    #[test]
    fn logistic_is_symmetric(x in -50.0f64..50.0) {
        let y = logistic(x);
        prop_assert!(y > 0.0 && y < 1.0 || x.abs() > 36.0);
        prop_assert!((y + logistic(-x) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn calibrated_45_percent_rate_on_ten_thousand_rows() {
    let data = random_dataset(10_000, &[3, 5, 4, 2], 11);
    let s = scenario((15.0, -12.0), 0.45).calibrated(&data).unwrap();
    let out = inject_mar(&data, &s, 12).unwrap();
    let rate = out.mask().missing_count(2) as f64 / data.n() as f64;
    assert!((rate - 0.45).abs() < 0.03, "MAR rate {rate}");
    let mcar = out.mask().missing_count(3) as f64 / data.n() as f64;
    assert!((mcar - 0.45).abs() < 0.03, "MCAR rate {mcar}");
}

#[test]
fn mar_depends_on_its_predictors() {
    // A strong positive coefficient on v0 masks high-v0 rows more often.
    let data = random_dataset(10_000, &[3, 5, 4, 2], 13);
    let s = scenario((30.0, 0.0), 0.3).calibrated(&data).unwrap();
    let out = inject_mar(&data, &s, 14).unwrap();
    let rate_at = |level: u8| {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| data.get(i, 0) == level).collect();
        rows.iter().filter(|&&i| out.mask().is_missing(i, 2)).count() as f64 / rows.len() as f64
    };
    assert!(rate_at(3) > rate_at(1) + 0.2, "low {} high {}", rate_at(1), rate_at(3));
}

#[test]
fn mcar_columns_are_independent_of_each_other() {
    let data = random_dataset(10_000, &[3, 5, 4, 2], 15);
    let out = inject_mcar(&data, &[(0, 0.3), (1, 0.3)], 16).unwrap();
    let both = (0..data.n())
        .filter(|&i| out.mask().is_missing(i, 0) && out.mask().is_missing(i, 1))
        .count() as f64
        / data.n() as f64;
    // 0.09 with a binomial 99.9% half-width near 0.0095.
    assert!((both - 0.09).abs() < 0.0095, "joint rate {both}");
}
