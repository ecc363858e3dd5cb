use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use memip_core::basis::{bernstein_coefficients, sup_norm_error, ApproxScheme};
use memip_core::eval::{background_diff, diff_score, pred_score};
use memip_core::experiment::{run_experiment, write_bundle, Experiment, ExperimentConfig};
use memip_core::io::{
    fmt15, read_events_file, read_model_file, read_truth_file, write_events_file, write_model_file, write_truth,
};
use memip_core::memip::{memip_fit_select, ExactRefine, FitOptions};
use memip_core::simulate::{simulate_config, spectral_radius, SimConfig};
use memip_core::Error;

#[derive(Parser)]
#[command(name = "memip", version, about = "Fit, simulate and evaluate multivariate Hawkes processes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HAWKES_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample realizations from a scenario config.
    Simulate(SimulateArgs),
    /// Fit exponential-sum models for K = 1..K_max and select K on a holdout.
    Fit(FitArgs),
    /// Score a model on test events.
    Evaluate(EvaluateArgs),
    /// Run a synthetic experiment end to end and write CSVs.
    Reproduce(ReproduceArgs),
    /// Exponential-sum approximation of a tabulated function.
    Approx(ApproxArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating model as JSON.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_realizations: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    t_plus: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML with any of: alpha, k_max, holdout_fraction, nonneg_warm_start, exact_refine.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Trailing fraction of realizations used to select K; 0 keeps K_max.
    #[arg(long)]
    holdout_fraction: Option<f64>,
    #[arg(long)]
    nonneg_warm_start: bool,
    /// Refine on the exact objective with this grid step.
    #[arg(long)]
    exact_refine: Option<f64>,
    /// K = 1 model file used as the Newton starting point.
    #[arg(long)]
    start: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FitFile {
    alpha: Option<f64>,
    k_max: Option<usize>,
    holdout_fraction: Option<f64>,
    nonneg_warm_start: Option<bool>,
    exact_refine: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    events: PathBuf,
    /// Ground-truth JSON; without it Pred is the mean AUC.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed label written with every row.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Diff horizon; defaults to the longest window.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    points: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Toy,
    Scaled1,
    Scaled2,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML overriding any experiment field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds, counted from --first-seed.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    seeds: Option<Vec<u64>>,
    d: Option<usize>,
    p: Option<f64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    t_plus: Option<f64>,
    alphas: Option<Vec<f64>>,
    k_max: Option<usize>,
    holdout: Option<f64>,
    diff_points: Option<usize>,
    curve_points: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Chebyshev,
    Bernstein,
}

#[derive(Args)]
struct ApproxArgs {
    /// CSV with columns t,f; linearly interpolated. The last t is the horizon.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "chebyshev")]
    scheme: SchemeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow!(Error::InvalidConfig(format!("{}: {e}", path.display()))))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: SimConfig =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    if let Some(rel) = config.model_path.clone().filter(|p| p.is_relative()) {
        if let Some(dir) = args.config.parent() {
            config.model_path = Some(dir.join(rel));
        }
    }
    config.seed = args.seed.unwrap_or(config.seed);
    config.n_realizations = args.n_realizations.unwrap_or(config.n_realizations);
    config.d = args.d.unwrap_or(config.d);
    config.p = args.p.unwrap_or(config.p);
    config.t_plus = args.t_plus.unwrap_or(config.t_plus);
    config.mu = args.mu.unwrap_or(config.mu);
    config.validate()?;
    let (model, data) = simulate_config(&config)?;
    let truth = model.truth();
    let rho = spectral_radius(&truth)?;
    if rho >= 1.0 {
        eprintln!("warning: spectral radius {rho} >= 1, the process may explode");
    }
    write_events_file(&args.out, &data).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.truth_out {
        fs::write(p, write_truth(&truth)).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "{} realizations, {} events, spectral radius {}",
        data.realizations().len(),
        data.total_events(),
        fmt15(rho)
    );
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let file: FitFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => FitFile::default(),
    };
    let alpha = args.alpha.or(file.alpha).unwrap_or(1.0);
    let k_max = args.k_max.or(file.k_max).unwrap_or(5);
    let holdout = args.holdout_fraction.or(file.holdout_fraction).unwrap_or(0.2);
    let dataset = read_events_file(&args.events).with_context(|| format!("reading {}", args.events.display()))?;
    let mut opts = FitOptions::new(alpha, k_max);
    opts.nonneg_warm_start = args.nonneg_warm_start || file.nonneg_warm_start.unwrap_or(false);
    opts.exact_refine = args.exact_refine.or(file.exact_refine).map(|dt| ExactRefine {
        dt,
        ..ExactRefine::default()
    });
    if let Some(p) = &args.start {
        opts.start = Some(read_model_file(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let fit = memip_fit_select(&dataset, &opts, holdout)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for m in &fit.models {
        write_model_file(&args.out_dir.join(format!("model_k{}.json", m.k())), m)?;
    }
    if let Some(m) = fit.selected() {
        write_model_file(&args.out_dir.join("model.json"), m)?;
    }
    let report = serde_json::to_string_pretty(&fit.report)?;
    fs::write(args.out_dir.join("report.json"), report + "\n")?;
    eprintln!(
        "fitted K = 1..{} on {} events; selected K = {}",
        k_max,
        fit.report.events,
        fit.report.selected_k.unwrap_or(k_max)
    );
    Ok(())
}

fn file_hash(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = read_model_file(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let test = read_events_file(&args.events).with_context(|| format!("reading {}", args.events.display()))?;
    let truth = match &args.truth {
        Some(p) => Some(read_truth_file(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut inputs = vec![args.model.as_path(), args.events.as_path()];
    if let Some(p) = &args.truth {
        inputs.push(p);
    }
    let hash = file_hash(&inputs)?;
    let mut rows: Vec<(&str, f64)> = Vec::new();
    let pred = pred_score(&model, &test, truth.as_ref())?;
    if let Some(truth) = &truth {
        let t_max = args.t_max.unwrap_or_else(|| test.realizations().iter().map(|r| r.duration()).fold(0.0, f64::max));
        rows.push(("diff", diff_score(truth, &model, t_max, args.points)?));
        rows.push(("background_diff", background_diff(truth, &model, t_max, args.points)?));
        rows.push(("pred", pred.score));
    } else {
        rows.push(("mean_auc", pred.score));
    }
    rows.push(("uniform_events", pred.uniform_events as f64));
    let mut out = String::from("metric,value,config_hash,seed\n");
    for (name, value) in rows {
        writeln!(out, "{name},{},{hash},{}", fmt15(value), args.seed)?;
    }
    for (u, a) in pred.auc.iter().enumerate() {
        if let Some(a) = a {
            writeln!(out, "auc_{},{},{hash},{}", u + 1, fmt15(*a), args.seed)?;
        }
    }
    write_out(args.out.as_deref(), &out)
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    let experiment = match args.scenario {
        ScenarioArg::Toy => Experiment::Toy,
        ScenarioArg::Scaled1 => Experiment::Scaled1,
        ScenarioArg::Scaled2 => Experiment::Scaled2,
    };
    let mut c = ExperimentConfig::preset(experiment);
    if let Some(p) = &args.config {
        let f: ExperimentFile = read_toml(p)?;
        c.seeds = f.seeds.unwrap_or(c.seeds);
        c.d = f.d.unwrap_or(c.d);
        c.p = f.p.unwrap_or(c.p);
        c.n_train = f.n_train.unwrap_or(c.n_train);
        c.n_test = f.n_test.unwrap_or(c.n_test);
        c.t_plus = f.t_plus.unwrap_or(c.t_plus);
        c.alphas = f.alphas.unwrap_or(c.alphas);
        c.k_max = f.k_max.unwrap_or(c.k_max);
        c.holdout = f.holdout.unwrap_or(c.holdout);
        c.diff_points = f.diff_points.unwrap_or(c.diff_points);
        c.curve_points = f.curve_points.unwrap_or(c.curve_points);
    }
    if let Some(n) = args.seeds {
        c.seeds = (args.first_seed..args.first_seed + n).collect();
    }
    c.n_train = args.n_train.unwrap_or(c.n_train);
    c.n_test = args.n_test.unwrap_or(c.n_test);
    c.k_max = args.k_max.unwrap_or(c.k_max);
    c.alphas = args.alphas.unwrap_or(c.alphas);
    let result = run_experiment(&c)?;
    write_bundle(&result, &args.out_dir).with_context(|| format!("writing {}", args.out_dir.display()))?;
    for (seed, msg) in &result.failures {
        eprintln!("seed {seed} failed: {msg}");
    }
    eprint!("{}", memip_core::experiment::table_csv(&result));
    if result.seeds.is_empty() {
        bail!(Error::Numerical("every seed failed".into()));
    }
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ts = Vec::new();
    let mut fs_ = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') || (n == 0 && l.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| anyhow!(Error::Parse { line: n + 1, msg: "expected `t,f`".into() }))
        };
        let mut parts = l.split(',');
        ts.push(parse(parts.next())?);
        fs_.push(parse(parts.next())?);
    }
    if ts.len() < 2 || ts[0] != 0.0 || ts.windows(2).any(|w| w[1] <= w[0]) {
        bail!(Error::InvalidData(
            "table needs at least two rows with strictly increasing t starting at 0".into()
        ));
    }
    Ok((ts, fs_))
}

fn approx(args: ApproxArgs) -> Result<()> {
    let (ts, values) = read_table(&args.input)?;
    let interp = |t: f64| -> f64 {
        let i = ts.partition_point(|x| *x <= t).clamp(1, ts.len() - 1);
        let (t0, t1) = (ts[i - 1], ts[i]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        values[i - 1] * (1.0 - w) + values[i] * w
    };
    let t_max = ts[ts.len() - 1];
    let scheme = match args.scheme {
        SchemeArg::Chebyshev => ApproxScheme::Chebyshev,
        SchemeArg::Bernstein => ApproxScheme::BernsteinOperator,
    };
    let coeffs = bernstein_coefficients(interp, args.k, args.alpha, t_max, scheme)?;
    let err = sup_norm_error(interp, &coeffs, args.alpha, t_max, 10_000);
    let mut out = format!("# sup_norm_error {}\nm,coefficient\n", fmt15(err));
    for (m, c) in coeffs.iter().enumerate() {
        writeln!(out, "{m},{}", fmt15(*c))?;
    }
    write_out(args.out.as_deref(), &out)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io(_) => 4,
                Error::Numerical(_) | Error::Infeasible => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Approx(a) => approx(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
