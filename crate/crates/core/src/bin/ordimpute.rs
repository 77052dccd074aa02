use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ordimpute::bench::{self, ExperimentConfig, MethodKind, MethodSpec, Profile, SyntheticPopulation, BASELINE, THREADS_ENV};
use ordimpute::data::{self, IncompleteDataset, OrdinalDataset, VariableSpec};
use ordimpute::error::{Error, Result};
use ordimpute::inference::{enumerate_estimands, estimate_all, pool, PooledEstimate};
use ordimpute::missingness::ScenarioFile;

#[derive(Parser)]
#[command(name = "ordimpute", version, about = "Multiple imputation for multivariate ordinal data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask a complete CSV according to a missingness scenario.
    Inject(InjectArgs),
    /// Impute an incomplete CSV into L completed CSVs.
    Impute(ImputeArgs),
    /// Pool completed-data estimates with Rubin's rules.
    Pool(PoolArgs),
    /// Run a repeated-sampling experiment.
    Bench(BenchArgs),
    /// Re-render report tables from a report JSON.
    Report(ReportArgs),
    /// Write a synthetic latent-class population.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV with a header row naming the variables; empty cells are missing.
    #[arg(long)]
    input: PathBuf,
    /// `name,cardinality` lines, one per variable.
    #[arg(long)]
    dictionary: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Scenario TOML; MAR intercepts are calibrated on the input.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// multireg, polr, cart, forest, missforest, dpmpm, dpmmvn or gain.
    #[arg(long)]
    method: Option<String>,
    /// TOML with method settings; `--method` overrides its method.
    #[arg(long)]
    method_config: Option<PathBuf>,
    /// Number of completed datasets.
    #[arg(short = 'L', long, default_value_t = 10)]
    imputations: usize,
    /// MICE sweeps or MCMC iterations.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `completed_<l>.csv` and `diagnostics.json`.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    /// CSV with columns estimand,q,u and one row per completed dataset.
    #[arg(long, conflicts_with = "completed", required_unless_present = "completed")]
    estimates: Option<PathBuf>,
    /// Completed CSVs to estimate cell probabilities from.
    #[arg(long, num_args = 2.., requires = "dictionary")]
    completed: Vec<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Cell arity for `--completed`; cells with fewer than ten expected
    /// rows or non-rows are skipped.
    #[arg(long, default_value_t = 1)]
    arity: usize,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Use the full-scale replications, sample size, imputations and chains.
    #[arg(long, visible_alias = "paper-scale")]
    full_scale: bool,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; the environment variable takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.json` written by `bench`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100_000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Where to write the matching dictionary.
    #[arg(long)]
    dictionary: PathBuf,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load(args: &DataArgs) -> Result<IncompleteDataset> {
    let dict = data::load_dictionary(&args.dictionary)?;
    data::load_csv(&args.input, &dict)
}

fn inject(args: InjectArgs) -> Result<()> {
    let input = load(&args.data)?;
    if !input.mask().is_empty() {
        return Err(Error::Data("inject needs a complete input".into()));
    }
    let scenario = ScenarioFile::load(&args.scenario)?.build(input.data())?;
    let out = scenario.inject(input.data(), args.seed)?;
    data::save_csv(&out, &args.output)?;
    for j in 0..out.p() {
        let m = out.mask().missing_count(j);
        if m > 0 {
            eprintln!("{}: {m} of {} missing", out.variables()[j].name, out.n());
        }
    }
    Ok(())
}

fn impute(args: ImputeArgs) -> Result<()> {
    let input = load(&args.data)?;
    let mut spec = match &args.method_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            toml::from_str::<MethodSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let name = args
                .method
                .as_deref()
                .ok_or_else(|| Error::Config("give --method or --method-config".into()))?;
            MethodSpec::new(MethodKind::parse(name)?)
        }
    };
    if let (Some(name), Some(_)) = (&args.method, &args.method_config) {
        spec.method = MethodKind::parse(name)?;
    }
    spec.iterations = args.iterations.or(spec.iterations);
    spec.burn_in = args.burn_in.or(spec.burn_in);
    let scale = bench::Scale {
        imputations: args.imputations,
        ..Profile::Desk.scale()
    };
    spec.validate(input.p(), &scale)?;
    let result = spec.run(&input, args.imputations, &scale, args.seed)?;
    result.verify(&input)?;

    let dir = &args.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let width = result.completed.len().to_string().len();
    for (l, z) in result.completed.iter().enumerate() {
        data::save_complete_csv(z, dir.join(format!("completed_{:0width$}.csv", l + 1)))?;
    }
    let diagnostics = serde_json::json!({
        "method": result.method,
        "seed": result.seed,
        "diagnostics": result.diagnostics,
    });
    let path = dir.join("diagnostics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&diagnostics).expect("serialisable")).map_err(|e| io_error(&path, e))?;
    eprintln!("{}: wrote {} completed datasets to {}", result.method, result.completed.len(), dir.display());
    Ok(())
}

fn read_estimates(path: &Path) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name}", path.display())))
    };
    let (ie, iq, iu) = (col("estimand")?, col("q")?, col("u")?);
    let mut groups: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let num = |i: usize| {
            record[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("{} row {}: bad number {:?}", path.display(), line + 2, &record[i])))
        };
        let (q, u) = (num(iq)?, num(iu)?);
        let name = record[ie].to_string();
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => {
                g.1.push(q);
                g.2.push(u);
            }
            None => groups.push((name, vec![q], vec![u])),
        }
    }
    Ok(groups)
}

fn estimates_from_completed(paths: &[PathBuf], dictionary: &Path, arity: usize) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let dict = data::load_dictionary(dictionary)?;
    let completed: Vec<OrdinalDataset> = paths
        .iter()
        .map(|p| {
            let d = data::load_csv(p, &dict)?;
            if d.mask().is_empty() {
                Ok(d.data().clone())
            } else {
                Err(Error::Data(format!("{} has missing cells", p.display())))
            }
        })
        .collect::<Result<_>>()?;
    let first = &completed[0];
    let estimands = enumerate_estimands(first, arity, first.n())?;
    let per_set: Vec<Vec<(f64, f64)>> = completed.iter().map(|z| estimate_all(z, &estimands)).collect();
    Ok(estimands
        .iter()
        .enumerate()
        .map(|(e, est)| {
            (
                est.label(first),
                per_set.iter().map(|s| s[e].0).collect(),
                per_set.iter().map(|s| s[e].1).collect(),
            )
        })
        .collect())
}

fn pool_command(args: PoolArgs) -> Result<()> {
    let groups = match &args.estimates {
        Some(path) => read_estimates(path)?,
        None => {
            let dict = args.dictionary.as_deref().expect("clap requires a dictionary");
            estimates_from_completed(&args.completed, dict, args.arity)?
        }
    };
    let pooled: Vec<(String, PooledEstimate)> = groups
        .into_iter()
        .map(|(name, q, u)| pool(&q, &u).map(|p| (name, p)))
        .collect::<Result<_>>()?;
    let sink: Box<dyn std::io::Write> = match &args.output {
        Some(path) => Box::new(std::fs::File::create(path).map_err(|e| io_error(path, e))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["estimand", "q_bar", "b", "u_bar", "total", "dof", "lower", "upper"])?;
    for (name, p) in pooled {
        w.write_record([
            name,
            p.q_bar.to_string(),
            p.b.to_string(),
            p.u_bar.to_string(),
            p.total.to_string(),
            p.dof.to_string(),
            p.ci_lower.to_string(),
            p.ci_upper.to_string(),
        ])?;
    }
    w.flush().map_err(|e| io_error(args.output.as_deref().unwrap_or(Path::new("-")), e))?;
    Ok(())
}

fn print_summary(report: &bench::MetricsReport) {
    println!("{:<14} {:>5} {:>10} {:>10} {:>11} {:>7}", "method", "arity", "coverage", "rel_mse", "bias", "failed");
    for m in &report.methods {
        for &a in &report.settings.arities {
            if let Some(r) = report.summary(&m.method, a, "Median") {
                let rel = r.rel_mse.map_or_else(|| "NA".into(), |v| format!("{v:.3}"));
                println!(
                    "{:<14} {:>5} {:>10.3} {:>10} {:>11.2e} {:>7}",
                    m.method,
                    a,
                    r.coverage,
                    rel,
                    r.bias,
                    m.failures.len()
                );
            }
        }
    }
    println!("(medians over estimands; {BASELINE} is the sample before masking)");
}

fn bench_command(args: BenchArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if args.full_scale {
        config.use_full_scale();
    }
    if let Some(t) = args.threads {
        config.parallelism = Some(t);
    }
    let out = args
        .output_dir
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench-output"));
    let s = config.scale();
    eprintln!(
        "{} replications of n={} with L={} on {} threads ({THREADS_ENV} overrides)",
        s.replications,
        s.n_sample,
        s.imputations,
        config.threads()?
    );
    let report = bench::run_experiment(&config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    bench::emit_report(&report, &out)?;
    print_summary(&report);
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn report_command(args: ReportArgs) -> Result<()> {
    let report = bench::load_report(&args.input)?;
    bench::emit_report(&report, &args.output_dir)?;
    print_summary(&report);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticPopulation {
        rows: args.rows,
        seed: args.seed,
        ..SyntheticPopulation::default()
    };
    let population = spec.generate()?;
    data::save_complete_csv(&population, &args.output)?;
    let vars: Vec<VariableSpec> = population.variables().to_vec();
    data::save_dictionary(&vars, &args.dictionary)?;
    let classes: BTreeMap<usize, f64> = spec.weights.iter().copied().enumerate().collect();
    eprintln!("wrote {} rows; class weights {classes:?}", population.n());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Inject(a) => inject(a),
        Command::Impute(a) => impute(a),
        Command::Pool(a) => pool_command(a),
        Command::Bench(a) => bench_command(a),
        Command::Report(a) => report_command(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
