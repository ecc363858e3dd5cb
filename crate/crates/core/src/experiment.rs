//! Synthetic experiment reproductions: the two-type toy scenario and the
//! scaled sinusoidal power-law benchmarks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{background_diff, diff_score, pred_score, trimmed, Trimmed};
use crate::io::{fmt15, write_model};
use crate::memip::{fit_exp_baseline, memip_fit, memip_fit_select, FitOptions, ValidationScore};
use crate::model::{ExpSumModel, GroundTruthModel};
use crate::newton::NewtonParams;
use crate::simulate::{generate_synthetic, generate_toy, simulate_dataset, spectral_radius, Scenario, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Toy,
    /// `d = 20`, purely excitatory.
    Scaled1,
    /// `d = 20`, 10% inhibitive kernels.
    Scaled2,
}

impl std::str::FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Experiment::Toy),
            "scaled1" => Ok(Experiment::Scaled1),
            "scaled2" => Ok(Experiment::Scaled2),
            _ => Err(Error::InvalidConfig(format!("unknown experiment `{s}`"))),
        }
    }
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::Scaled1 => "scaled1",
            Experiment::Scaled2 => "scaled2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub d: usize,
    pub p: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub t_plus: f64,
    pub alphas: Vec<f64>,
    pub k_max: usize,
    /// Trailing fraction of the training set used to select `K`.
    pub holdout: f64,
    pub diff_points: usize,
    /// Grid size of the reconstruction curves.
    pub curve_points: usize,
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let (d, p, n_train, n_test) = match experiment {
            Experiment::Toy => (2, 1.0, 20_000, 2_000),
            Experiment::Scaled1 => (20, 1.0, 2_000, 2_000),
            Experiment::Scaled2 => (20, 0.9, 2_000, 2_000),
        };
        Self {
            experiment,
            seeds: (0..10).collect(),
            d,
            p,
            n_train,
            n_test,
            t_plus: 20.0,
            alphas: vec![0.1, 1.0, 10.0],
            k_max: 10,
            holdout: 0.2,
            diff_points: 10_000,
            curve_points: 201,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.alphas.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed and one alpha".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidConfig("alphas must be positive".into()));
        }
        if self.n_train == 0 || self.k_max == 0 || self.diff_points < 2 || self.curve_points < 2 {
            return Err(Error::InvalidConfig("n_train, k_max must be positive; grids need 2 points".into()));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::InvalidConfig("holdout must lie in (0, 1)".into()));
        }
        if self.experiment == Experiment::Toy && self.d != 2 {
            return Err(Error::InvalidConfig("the toy experiment has d = 2".into()));
        }
        Ok(())
    }

    /// Generating model of `seed`.
    pub fn truth(&self, seed: u64) -> Result<GroundTruthModel> {
        match self.experiment {
            Experiment::Toy => Ok(generate_toy(seed)),
            _ => {
                let c = SimConfig {
                    p: self.p,
                    ..SimConfig::new(Scenario::Large, self.d, self.t_plus, self.n_train, seed)
                };
                generate_synthetic(&c)
            }
        }
    }
}

impl ExperimentConfig {
    /// Generating model, training set and test set of `seed`.
    pub fn datasets(&self, seed: u64) -> Result<(GroundTruthModel, Dataset, Dataset)> {
        let truth = self.truth(seed)?;
        let all = simulate_dataset(&truth, self.n_train + self.n_test, 0.0, self.t_plus, seed)?;
        let mut realizations = all.into_realizations();
        let test = Dataset::new(self.d, realizations.split_off(self.n_train))?;
        let train = Dataset::new(self.d, realizations)?;
        Ok((truth, train, test))
    }
}

/// `int_0^t g_{v,source}`.
pub fn kernel_integral(model: &ExpSumModel, v: usize, source: usize, t: f64) -> f64 {
    let alpha = model.alpha();
    (0..model.k())
        .map(|j| {
            let rate = (j + 1) as f64 * alpha;
            model.get(v, source + 1, j) * -(-rate * t).exp_m1() / rate
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRun {
    pub method: String,
    pub alpha: f64,
    pub k: usize,
    pub diff: f64,
    pub background_diff: f64,
    pub pred: Option<f64>,
    /// Score on the selection holdout (MEMIP only).
    pub validation: Option<ValidationScore>,
    /// Optimal relaxed objective for `k = 1..=K_max` on the selection fit.
    pub objectives: Vec<f64>,
    /// Smallest objective gain over accepted Newton steps.
    pub min_step_gain: Option<f64>,
    /// `int_0^T g_{v,s}`, row-major over `(v, s)`.
    pub kernel_integrals: Vec<f64>,
    #[serde(skip)]
    pub model: ExpSumModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub spectral_radius: f64,
    pub train_events: usize,
    pub test_events: usize,
    pub runs: Vec<MethodRun>,
    pub seconds: f64,
    #[serde(skip)]
    pub truth: GroundTruthModel,
}

impl SeedRun {
    /// MEMIP run with the best validation likelihood over all alphas.
    pub fn selected_memip(&self) -> Option<&MethodRun> {
        self.runs
            .iter()
            .filter(|r| r.method == "memip")
            .reduce(|best, r| match (r.validation, best.validation) {
                (Some(a), Some(b)) if a.better_than(&b) => r,
                (Some(_), None) => r,
                _ => best,
            })
    }
}

fn evaluate(truth: &GroundTruthModel, model: &ExpSumModel, test: &Dataset, t_plus: f64, points: usize) -> Result<(f64, f64, Option<f64>)> {
    let diff = diff_score(truth, model, t_plus, points)?;
    let bdiff = background_diff(truth, model, t_plus, points)?;
    let pred = if test.total_events() > 0 {
        pred_score(model, test, Some(truth)).ok().map(|p| p.score)
    } else {
        None
    };
    Ok((diff, bdiff, pred))
}

fn integrals(model: &ExpSumModel, t: f64) -> Vec<f64> {
    let d = model.d();
    (0..d * d).map(|i| kernel_integral(model, i / d, i % d, t)).collect()
}

/// Simulate, fit MEMIP and the single-exponential baseline for every
/// alpha, and score both against the truth.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let clock = Instant::now();
    let (truth, train, test) = config.datasets(seed)?;
    let rho = spectral_radius(&truth)?;
    let mut runs = Vec::new();
    for &alpha in &config.alphas {
        let select = memip_fit_select(&train, &FitOptions::new(alpha, config.k_max), config.holdout)?;
        let k = select.report.selected_k.unwrap_or(config.k_max);
        let validation = select.report.validation.get(k - 1).copied();
        // refit on the whole training set at the selected size
        let model = memip_fit(&train, &FitOptions::new(alpha, k))?.models.pop().expect("k >= 1");
        let (diff, bdiff, pred) = evaluate(&truth, &model, &test, config.t_plus, config.diff_points)?;
        runs.push(MethodRun {
            method: "memip".into(),
            alpha,
            k,
            diff,
            background_diff: bdiff,
            pred,
            validation,
            objectives: select.report.per_k.iter().map(|r| r.objective).collect(),
            min_step_gain: select.report.per_k.iter().filter_map(|r| r.min_step_gain).reduce(f64::min),
            kernel_integrals: integrals(&model, config.t_plus),
            model,
        });

        let model = fit_exp_baseline(&train, alpha, NewtonParams::default())?;
        let (diff, bdiff, pred) = evaluate(&truth, &model, &test, config.t_plus, config.diff_points)?;
        runs.push(MethodRun {
            method: "exp".into(),
            alpha,
            k: 1,
            diff,
            background_diff: bdiff,
            pred,
            validation: None,
            objectives: Vec::new(),
            min_step_gain: None,
            kernel_integrals: integrals(&model, config.t_plus),
            model,
        });
    }
    Ok(SeedRun {
        seed,
        spectral_radius: rho,
        train_events: train.total_events(),
        test_events: test.total_events(),
        runs,
        seconds: clock.elapsed().as_secs_f64(),
        truth,
    })
}

/// Trimmed Pred and Diff of one (method, alpha) cell across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub method: String,
    pub alpha: f64,
    pub pred: Option<Trimmed>,
    pub diff: Option<Trimmed>,
    pub background_diff: Option<Trimmed>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
    /// `(seed, message)` of every seed that failed.
    pub failures: Vec<(u64, String)>,
    pub table: Vec<TableRow>,
}

impl ExperimentResult {
    pub fn row(&self, method: &str, alpha: f64) -> Option<&TableRow> {
        self.table.iter().find(|r| r.method == method && r.alpha == alpha)
    }

    /// Best trimmed mean Pred over alphas for `method`.
    pub fn best_pred(&self, method: &str) -> Option<f64> {
        self.table
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.pred.map(|t| t.mean))
            .reduce(f64::max)
    }

    /// Best (smallest) trimmed mean Diff over alphas for `method`.
    pub fn best_diff(&self, method: &str) -> Option<f64> {
        self.table
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.diff.map(|t| t.mean))
            .reduce(f64::min)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        match run_seed(config, seed) {
            Ok(run) => seeds.push(run),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let mut table = Vec::new();
    for method in ["memip", "exp"] {
        for &alpha in &config.alphas {
            let pick = |f: &dyn Fn(&MethodRun) -> Option<f64>| -> Vec<f64> {
                seeds
                    .iter()
                    .flat_map(|s| s.runs.iter())
                    .filter(|r| r.method == method && r.alpha == alpha)
                    .filter_map(f)
                    .collect()
            };
            table.push(TableRow {
                method: method.into(),
                alpha,
                pred: trimmed(&pick(&|r| r.pred)),
                diff: trimmed(&pick(&|r| Some(r.diff))),
                background_diff: trimmed(&pick(&|r| Some(r.background_diff))),
            });
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        seeds,
        failures,
        table,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt15).unwrap_or_default()
}

/// One row per (seed, method, alpha).
pub fn metrics_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("experiment,seed,method,alpha,k,diff,background_diff,pred,validation_loglik,validation_infeasible,spectral_radius,train_events,test_events\n");
    for s in &result.seeds {
        for r in &s.runs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                result.config.experiment.name(),
                s.seed,
                r.method,
                fmt15(r.alpha),
                r.k,
                fmt15(r.diff),
                fmt15(r.background_diff),
                opt(r.pred),
                opt(r.validation.map(|v| v.loglik)),
                r.validation.map(|v| v.infeasible.to_string()).unwrap_or_default(),
                fmt15(s.spectral_radius),
                s.train_events,
                s.test_events
            )
            .unwrap();
        }
    }
    out
}

/// Trimmed summaries in the layout of the published tables.
pub fn table_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(
        "method,alpha,pred_mean,pred_low,pred_high,diff_mean,diff_low,diff_high,background_diff_mean,seeds_kept\n",
    );
    for r in &result.table {
        let t = |x: Option<Trimmed>| match x {
            Some(t) => (fmt15(t.mean), fmt15(t.low), fmt15(t.high)),
            None => Default::default(),
        };
        let (pm, pl, ph) = t(r.pred);
        let (dm, dl, dh) = t(r.diff);
        writeln!(
            out,
            "{},{},{pm},{pl},{ph},{dm},{dl},{dh},{},{}",
            r.method,
            fmt15(r.alpha),
            r.background_diff.map(|t| fmt15(t.mean)).unwrap_or_default(),
            r.diff.map(|t| t.kept).unwrap_or(0)
        )
        .unwrap();
    }
    out
}

/// Objective per `k` of every MEMIP selection fit.
pub fn objectives_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("seed,alpha,k,objective\n");
    for s in &result.seeds {
        for r in s.runs.iter().filter(|r| r.method == "memip") {
            for (i, o) in r.objectives.iter().enumerate() {
                writeln!(out, "{},{},{},{}", s.seed, fmt15(r.alpha), i + 1, fmt15(*o)).unwrap();
            }
        }
    }
    out
}

/// Fitted kernel integrals over the window against the truth's sign.
pub fn integrals_csv(result: &ExperimentResult) -> String {
    let d = result.config.d;
    let mut out = String::from("seed,method,alpha,k,target,source,fitted_integral,true_integral\n");
    for s in &result.seeds {
        for r in &s.runs {
            for (i, fitted) in r.kernel_integrals.iter().enumerate() {
                let (v, u) = (i / d, i % d);
                let kernel = &s.truth.kernels[v][u];
                let true_int = crate::quadrature::integrate(|t| kernel.value(t), 0.0, result.config.t_plus, 1e-12, 1e-10)
                    .unwrap_or(f64::NAN);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    s.seed,
                    r.method,
                    fmt15(r.alpha),
                    r.k,
                    v,
                    u,
                    fmt15(*fitted),
                    fmt15(true_int)
                )
                .unwrap();
            }
        }
    }
    out
}

/// True and fitted kernels and backgrounds on a grid over the window, for
/// the validation-selected MEMIP model and the best-validated alpha's
/// baseline. Columns `gVS_*` hold the effect of type `S` on type `V`.
pub fn curves_csv(run: &SeedRun, t_plus: f64, points: usize) -> Option<String> {
    let memip = run.selected_memip()?;
    let exp = run.runs.iter().find(|r| r.method == "exp" && r.alpha == memip.alpha)?;
    let d = run.truth.d;
    let mut header = vec!["t".to_string()];
    for v in 0..d {
        for s in 0..d {
            for tag in ["true", "memip", "exp"] {
                header.push(format!("g{v}{s}_{tag}"));
            }
        }
    }
    for v in 0..d {
        for tag in ["true", "memip", "exp"] {
            header.push(format!("mu{v}_{tag}"));
        }
    }
    let mut out = header.join(",") + "\n";
    for i in 0..points {
        let t = t_plus * i as f64 / (points - 1) as f64;
        let mut row = vec![fmt15(t)];
        for v in 0..d {
            for s in 0..d {
                row.push(fmt15(run.truth.kernels[v][s].value(t)));
                row.push(fmt15(memip.model.kernel(v, s, t)));
                row.push(fmt15(exp.model.kernel(v, s, t)));
            }
        }
        for v in 0..d {
            row.push(fmt15(run.truth.backgrounds[v].value(t)));
            row.push(fmt15(memip.model.background(v, t)));
            row.push(fmt15(exp.model.background(v, t)));
        }
        out += &(row.join(",") + "\n");
    }
    Some(out)
}

/// Write every CSV of `result`, the selected models and a JSON summary to `dir`.
pub fn write_bundle(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(result))?;
    fs::write(dir.join("table.csv"), table_csv(result))?;
    fs::write(dir.join("objectives.csv"), objectives_csv(result))?;
    fs::write(dir.join("kernel_integrals.csv"), integrals_csv(result))?;
    let mut failures = String::from("seed,error\n");
    for (seed, msg) in &result.failures {
        writeln!(failures, "{seed},\"{}\"", msg.replace('"', "'")).unwrap();
    }
    fs::write(dir.join("failures.csv"), failures)?;
    for s in &result.seeds {
        if let Some(csv) = curves_csv(s, result.config.t_plus, result.config.curve_points) {
            fs::write(dir.join(format!("curves_seed{}.csv", s.seed)), csv)?;
        }
        if let Some(m) = s.selected_memip() {
            fs::write(dir.join(format!("model_seed{}.json", s.seed)), write_model(&m.model))?;
        }
        fs::write(dir.join(format!("truth_seed{}.json", s.seed)), crate::io::write_truth(&s.truth))?;
    }
    let summary = serde_json::to_string_pretty(result).map_err(|e| Error::Numerical(e.to_string()))?;
    fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_integral_closed_form() {
        let m = ExpSumModel::from_coeffs(1, 2, 0.5, vec![1.0, 0.0, 2.0, -1.0]).unwrap();
        let quad = crate::quadrature::integrate(|t| m.kernel(0, 0, t), 0.0, 7.0, 1e-14, 1e-13).unwrap();
        assert!((kernel_integral(&m, 0, 0, 7.0) - quad).abs() < 1e-12);
    }

    #[test]
    fn tiny_toy_run_writes_bundle() {
        let config = ExperimentConfig {
            seeds: vec![1, 2],
            n_train: 200,
            n_test: 100,
            alphas: vec![1.0],
            k_max: 3,
            diff_points: 200,
            curve_points: 11,
            ..ExperimentConfig::preset(Experiment::Toy)
        };
        let result = run_experiment(&config).unwrap();
        assert!(result.failures.is_empty(), "{:?}", result.failures);
        assert_eq!(result.seeds.len(), 2);
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        write_bundle(&result, dir).unwrap();
        let curves = fs::read_to_string(dir.join("curves_seed1.csv")).unwrap();
        assert!(curves.starts_with("t,g00_true,g00_memip,g00_exp,"));
        assert_eq!(curves.lines().count(), 12);
        assert!(fs::read_to_string(dir.join("table.csv")).unwrap().lines().count() == 3);
    }
}
