use ordimpute::bench::{emit_report, load_report, run_experiment, ExperimentConfig, MethodKind, MethodSpec, BASELINE, SUMMARY_ROWS};

fn config(scenario: &str, methods: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
        methods = [{methods}]
        n_sample = 400
        imputations = 3
        mcmc_iterations = 60
        mcmc_burn_in = 30
        master_seed = 9
        {extra}
        [population.synthetic]
        rows = 5000
        seed = 4
        [scenario]
        {scenario}
        "#
    );
    ExperimentConfig::parse(&text).unwrap()
}

const MCAR: &str = r#"mechanism = "mcar"
        target_rate = 0.3
        mcar = [{ variable = "V3" }, { variable = "V4" }]"#;

#[test]
fn no_missingness_gives_unit_relative_mse() {
    let empty = r#"mechanism = "mcar"
        target_rate = 0.3"#;
    let c = config(empty, r#"{ method = "cart" }, { method = "dpmpm" }"#, "replications = 1");
    let report = run_experiment(&c).unwrap();
    assert!(!report.estimands.is_empty());
    for m in &report.methods {
        assert!(m.failures.is_empty(), "{}: {:?}", m.method, m.failures);
        for (cell, e) in m.cells.iter().zip(&report.estimands) {
            if e.pre_missing[0] != e.truth {
                assert_eq!(cell.rel_mse, Some(1.0), "{} {}", m.method, e.label);
            }
            assert_eq!(cell.q_bar[0], e.pre_missing[0]);
            assert_eq!(cell.bias, e.pre_missing[0] - e.truth);
        }
    }
}

#[test]
fn reports_round_trip_and_write_tables() {
    let c = config(MCAR, r#"{ method = "cart" }"#, "replications = 2");
    let report = run_experiment(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    assert_eq!(load_report(dir.path().join("report.json")).unwrap(), report);

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    // Two methods, three arities, five quantiles, plus the header.
    assert_eq!(summary.lines().count(), 1 + 2 * 3 * SUMMARY_ROWS.len());
    assert!(summary.lines().any(|l| l.starts_with(&format!("{BASELINE},1,Median,"))));
    let estimands = std::fs::read_to_string(dir.path().join("estimands.csv")).unwrap();
    assert_eq!(estimands.lines().count(), 1 + 2 * report.estimands.len());
    let marginals = std::fs::read_to_string(dir.path().join("marginals.csv")).unwrap();
    assert_eq!(marginals.lines().count(), 1 + 2 * (2 + 3 + 4 + 5 + 3));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let methods = r#"{ method = "cart" }, { method = "dpmpm" }"#;
    let one = config(MCAR, methods, "replications = 3\nparallelism = 1");
    let four = config(MCAR, methods, "replications = 3\nparallelism = 4");
    let a = serde_json::to_string(&run_experiment(&one).unwrap()).unwrap();
    let b = serde_json::to_string(&run_experiment(&four).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn replications_are_keyed_by_index() {
    // The first two replications of a longer run match a two-replication run.
    let short = run_experiment(&config(MCAR, r#"{ method = "cart" }"#, "replications = 2")).unwrap();
    let long = run_experiment(&config(MCAR, r#"{ method = "cart" }"#, "replications = 4")).unwrap();
    for (s, l) in short.methods[1].cells.iter().zip(&long.methods[1].cells) {
        assert_eq!(s.q_bar[..], l.q_bar[..2]);
        assert_eq!(s.lower[..], l.lower[..2]);
    }
}

#[test]
fn failed_replications_are_excluded_and_counted() {
    // Four rows with half of V3 missing: some samples lose every V3 value,
    // which no method can impute.
    let scenario = r#"mechanism = "mcar"
        target_rate = 0.5
        mcar = [{ variable = "V3" }]"#;
    let mut c = config(scenario, r#"{ method = "cart" }"#, "replications = 24");
    c.n_sample = Some(4);
    let report = run_experiment(&c).unwrap();
    let cart = report.method("MI-Cart").unwrap();
    assert!(!cart.failures.is_empty());
    assert!(!cart.replications.is_empty());
    assert_eq!(cart.failures.len() + cart.replications.len(), 24);
    assert!(report.warnings.iter().any(|w| w.starts_with("MI-Cart")));
}

#[test]
fn metrics_recompute_from_retained_intermediates() {
    let c = config(MCAR, r#"{ method = "cart" }"#, "replications = 5");
    let report = run_experiment(&c).unwrap();
    for m in &report.methods {
        for (cell, e) in m.cells.iter().zip(&report.estimands) {
            let h = cell.q_bar.len() as f64;
            let hits = cell
                .lower
                .iter()
                .zip(&cell.upper)
                .filter(|&(&lo, &hi)| lo <= e.truth && e.truth <= hi)
                .count();
            assert_eq!(cell.coverage, hits as f64 / h);
            let mean = cell.q_bar.iter().sum::<f64>() / h;
            assert!((cell.bias - (mean - e.truth)).abs() < 1e-15);
            let num: f64 = cell.q_bar.iter().map(|q| (q - e.truth).powi(2)).sum();
            let den: f64 = m.replications.iter().map(|&r| (e.pre_missing[r] - e.truth).powi(2)).sum();
            match cell.rel_mse {
                Some(r) => assert!((r - num / den).abs() <= 1e-12 * r.max(1.0)),
                None => assert_eq!(den, 0.0),
            }
        }
    }
    for row in &report.summaries {
        let stats: Vec<&_> = report
            .summaries
            .iter()
            .filter(|r| r.method == row.method && r.arity == row.arity)
            .collect();
        assert_eq!(stats.len(), SUMMARY_ROWS.len());
        assert!(stats.windows(2).all(|w| w[0].coverage <= w[1].coverage && w[0].bias <= w[1].bias));
    }
}

#[test]
fn baseline_scores_its_own_wald_intervals() {
    let c = config(MCAR, "", "replications = 20");
    let report = run_experiment(&c).unwrap();
    let base = report.method(BASELINE).unwrap();
    let n = 400.0;
    for (cell, e) in base.cells.iter().zip(&report.estimands) {
        let hits = e
            .pre_missing
            .iter()
            .filter(|&&q| (q - e.truth).abs() <= 1.96 * (q * (1.0 - q) / n).sqrt())
            .count();
        assert_eq!(cell.coverage, hits as f64 / 20.0, "{}", e.label);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = config(MCAR, r#"{ method = "cart" }"#, "replications = 1");
    c.imputations = Some(1);
    assert!(run_experiment(&c).is_err());
    let mut c = config(MCAR, r#"{ method = "cart" }, { method = "cart" }"#, "replications = 1");
    assert!(run_experiment(&c).is_err());
    c.methods[1] = MethodSpec {
        label: Some("second".into()),
        ..MethodSpec::new(MethodKind::Cart)
    };
    c.n_sample = Some(10_000);
    assert!(run_experiment(&c).is_err());
    assert!(ExperimentConfig::parse("methods = []\nbogus = 1").is_err());
}

#[test]
fn relative_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("scenario.toml"),
        "mechanism = \"mcar\"\ntarget_rate = 0.2\nmcar = [{ variable = \"V2\" }]\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("bench.toml"),
        "scenario = \"scenario.toml\"\nmethods = []\nreplications = 2\nn_sample = 100\noutput_dir = \"out\"\n[population.synthetic]\nrows = 1000\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(dir.path().join("bench.toml")).unwrap();
    assert_eq!(c.output_dir.as_deref(), Some(dir.path().join("out").as_path()));
    let report = run_experiment(&c).unwrap();
    assert_eq!(report.settings.scale.replications, 2);
}
