use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordimpute"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SCENARIO: &str = "mechanism = \"mcar\"\ntarget_rate = 0.3\nmcar = [{ variable = \"V3\" }, { variable = \"V4\" }]\n";

fn synth(dir: &Path) {
    ok(dir, &["synth", "--rows", "400", "--seed", "1", "--output", "pop.csv", "--dictionary", "dict.csv"]);
    std::fs::write(dir.join("scenario.toml"), SCENARIO).unwrap();
}

#[test]
fn inject_impute_pool_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let inject = [
        "inject", "--input", "pop.csv", "--dictionary", "dict.csv", "--scenario", "scenario.toml", "--seed", "2",
        "--output", "miss.csv",
    ];
    ok(dir, &inject);
    let first = std::fs::read_to_string(dir.join("miss.csv")).unwrap();
    ok(dir, &inject);
    assert_eq!(std::fs::read_to_string(dir.join("miss.csv")).unwrap(), first);
    assert!(first.contains(",,"));

    ok(
        dir,
        &["impute", "--input", "miss.csv", "--dictionary", "dict.csv", "--method", "cart", "-L", "3", "--seed", "3", "--output-dir", "out"],
    );
    let pop = std::fs::read_to_string(dir.join("pop.csv")).unwrap();
    for l in 1..=3 {
        let done = std::fs::read_to_string(dir.join(format!("out/completed_{l}.csv"))).unwrap();
        assert_eq!(done.lines().count(), pop.lines().count());
        assert!(!done.contains(",,"));
        for (d, m) in done.lines().zip(first.lines()) {
            for (a, b) in d.split(',').zip(m.split(',')) {
                assert!(b.is_empty() || a == b);
            }
        }
    }
    assert!(dir.join("out/diagnostics.json").exists());

    let pooled = ok(
        dir,
        &["pool", "--completed", "out/completed_1.csv", "out/completed_2.csv", "out/completed_3.csv", "--dictionary", "dict.csv", "--arity", "1"],
    );
    // One row per level of each variable.
    assert_eq!(pooled.lines().count(), 1 + 2 + 3 + 4 + 5 + 3);
}

#[test]
fn pool_reads_estimate_tables() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("est.csv"), "estimand,q,u\na,0.5,0.01\na,0.6,0.01\na,0.7,0.01\n").unwrap();
    let out = ok(tmp.path(), &["pool", "--estimates", "est.csv"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "a");
    assert!((row[1].parse::<f64>().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn bench_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bench.toml"),
        format!(
            "methods = [{{ method = \"cart\" }}]\nreplications = 2\nn_sample = 200\nimputations = 2\n\
             output_dir = \"bench\"\n[population.synthetic]\nrows = 2000\n[scenario]\n{SCENARIO}"
        ),
    )
    .unwrap();
    let out = ok(dir, &["bench", "--config", "bench.toml"]);
    assert!(out.contains("MI-Cart"));
    for f in ["report.json", "summary.csv", "estimands.csv", "marginals.csv"] {
        assert!(dir.join("bench").join(f).exists(), "{f}");
    }
    std::fs::remove_file(dir.join("bench/summary.csv")).unwrap();
    ok(dir, &["report", "--input", "bench/report.json", "--output-dir", "bench"]);
    assert!(dir.join("bench/summary.csv").exists());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    assert_eq!(run(dir, &["bogus"]).status.code(), Some(1));
    let bad = run(dir, &["impute", "--input", "pop.csv", "--dictionary", "dict.csv", "--method", "knn", "-L", "2", "--output-dir", "o"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("knn"));
    let missing = run(dir, &["impute", "--input", "nope.csv", "--dictionary", "dict.csv", "-L", "2", "--output-dir", "o"]);
    assert_eq!(missing.status.code(), Some(2));
}
