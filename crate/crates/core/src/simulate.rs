//! Ground-truth generators and Ogata thinning with non-increasing envelopes.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, Realization};
use crate::error::{Error, Result};
use crate::model::{Background, ExpSumModel, GroundTruthModel, IntensityModel, IntensityState, Kernel};
use crate::quadrature::integrate;

/// Realizations with more events than this are treated as explosive.
pub const MAX_EVENTS_PER_REALIZATION: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Sinusoidal power-law kernels with constant backgrounds.
    Large,
    /// Two types, time-varying backgrounds, one inhibitive self-kernel.
    Toy,
    /// Constant backgrounds `mu`, no interaction.
    Poisson,
    /// An exponential-sum model read from `model_path`.
    Expsum,
}

fn default_p() -> f64 {
    1.0
}
fn default_mu() -> f64 {
    1.0
}
fn default_mu_range() -> (f64, f64) {
    (0.0, 0.001)
}
fn default_omega_range() -> (f64, f64) {
    (1.0, 10.0)
}
fn default_nu_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub d: usize,
    /// Probability that a kernel is excitatory.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub t_minus: f64,
    pub t_plus: f64,
    pub n_realizations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Background rate of the Poisson scenario.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Background rates of the large scenario are drawn from this range.
    #[serde(default = "default_mu_range")]
    pub mu_range: (f64, f64),
    #[serde(default = "default_omega_range")]
    pub omega_range: (f64, f64),
    /// `|nu|` is drawn from `[0, nu_scale / d)`.
    #[serde(default = "default_nu_scale")]
    pub nu_scale: f64,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
}

impl SimConfig {
    pub fn new(scenario: Scenario, d: usize, t_plus: f64, n_realizations: usize, seed: u64) -> Self {
        Self {
            scenario,
            d,
            p: default_p(),
            t_minus: 0.0,
            t_plus,
            n_realizations,
            seed,
            mu: default_mu(),
            mu_range: default_mu_range(),
            omega_range: default_omega_range(),
            nu_scale: default_nu_scale(),
            model_path: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} must lie in [0, 1]", self.p));
        }
        if !(self.t_minus.is_finite() && self.t_plus.is_finite() && self.t_minus < self.t_plus) {
            return bad(format!("window [{}, {}] is invalid", self.t_minus, self.t_plus));
        }
        if matches!(self.scenario, Scenario::Large | Scenario::Poisson) && self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.scenario == Scenario::Toy && self.d != 0 && self.d != 2 {
            return bad("the toy scenario has d = 2".into());
        }
        if self.scenario == Scenario::Poisson && !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu = {} must be non-negative", self.mu));
        }
        let (lo, hi) = self.mu_range;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return bad("mu_range must satisfy 0 <= lo <= hi".into());
        }
        let (lo, hi) = self.omega_range;
        if !(0.0 < lo && lo <= hi && hi.is_finite()) {
            return bad("omega_range must satisfy 0 < lo <= hi".into());
        }
        if !(self.nu_scale >= 0.0 && self.nu_scale.is_finite()) {
            return bad("nu_scale must be non-negative".into());
        }
        if self.scenario == Scenario::Expsum && self.model_path.is_none() {
            return bad("the expsum scenario needs model_path".into());
        }
        Ok(())
    }
}

/// Deterministic RNG for stream `stream` of the master `seed`. Stream 0
/// draws model parameters; realization `h` uses stream `h + 1`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Random sinusoidal power-law model with constant backgrounds.
pub fn generate_synthetic(config: &SimConfig) -> Result<GroundTruthModel> {
    config.validate()?;
    let d = config.d;
    let mut rng = stream_rng(config.seed, 0);
    let nu_max = config.nu_scale / d as f64;
    let mut kernels = vec![vec![Kernel::Zero; d]; d];
    for (v, row) in kernels.iter_mut().enumerate() {
        for (u, k) in row.iter_mut().enumerate() {
            let omega = uniform(&mut rng, config.omega_range);
            let magnitude = uniform(&mut rng, (0.0, nu_max));
            let sign = if rng.gen_bool(config.p) { 1.0 } else { -1.0 };
            *k = Kernel::SinPowerLaw {
                nu: sign * magnitude,
                omega,
                parity: ((u + v) % 2) as u8,
            };
        }
    }
    let backgrounds = (0..d)
        .map(|_| Background::Constant {
            rate: uniform(&mut rng, config.mu_range),
        })
        .collect();
    GroundTruthModel::new(backgrounds, kernels)
}

/// Two-type model with decaying periodic backgrounds where `g_11` inhibits.
pub fn generate_toy(seed: u64) -> GroundTruthModel {
    let mut rng = stream_rng(seed, 0);
    let mut omega = || rng.gen_range(5.0..15.0);
    let backgrounds = vec![
        Background::CosineDecay { omega: omega() },
        Background::SineDecay { omega: omega() },
    ];
    let mut kernels = vec![vec![Kernel::Zero; 2]; 2];
    for (v, row) in kernels.iter_mut().enumerate() {
        for (u, k) in row.iter_mut().enumerate() {
            let omega = rng.gen_range(1.0..10.0);
            let magnitude = rng.gen_range(0.0..0.5);
            let nu = if (v, u) == (1, 1) { -magnitude } else { magnitude };
            *k = Kernel::SinPowerLaw {
                nu,
                omega,
                parity: ((u + v) % 2) as u8,
            };
        }
    }
    GroundTruthModel::new(backgrounds, kernels).expect("valid toy model")
}

/// Independent types with constant rate `mu`.
pub fn poisson_model(d: usize, mu: f64) -> Result<GroundTruthModel> {
    GroundTruthModel::new(vec![Background::Constant { rate: mu }; d], vec![vec![Kernel::Zero; d]; d])
}

/// `int_0^inf |g(t)| dt`.
pub fn kernel_abs_integral(kernel: &Kernel) -> Result<f64> {
    match kernel {
        Kernel::Zero => Ok(0.0),
        Kernel::ExpSum { alpha, coeffs } => {
            if coeffs.iter().all(|c| *c == 0.0) {
                return Ok(0.0);
            }
            if !(*alpha > 0.0) {
                return Err(Error::InvalidModel("kernel integral diverges: alpha <= 0".into()));
            }
            // |g| decays like the slowest term, so the tail beyond
            // 40 / alpha is below exp(-40) relative.
            let end = 40.0 / alpha;
            let head = integrate(|t| kernel.value(t).abs(), 0.0, end, 1e-300, 1e-10)?;
            let tail: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let rate = (j + 1) as f64 * alpha;
                    c.abs() * (-rate * end).exp() / rate
                })
                .sum();
            Ok(head + tail)
        }
        Kernel::SinPowerLaw { nu, omega, .. } => {
            if *nu == 0.0 {
                return Ok(0.0);
            }
            if !(*omega > 0.0 && omega.is_finite()) {
                return Err(Error::InvalidModel(format!("kernel period {omega} is invalid")));
            }
            // Integrate whole periods up to L, then use the mean value 2 of
            // (sin + 2) for the tail: int_L^inf 2|nu| / (3 (t+1)^2) dt; the
            // oscillating remainder is O(omega / L^2).
            let periods = (1e4 / omega).ceil().max(1.0) as usize;
            let mut head = 0.0;
            for i in 0..periods {
                let a = i as f64 * omega;
                head += integrate(|t| kernel.value(t).abs(), a, a + omega, 1e-300, 1e-10)?;
            }
            let l = periods as f64 * omega;
            Ok(head + 2.0 * nu.abs() / (3.0 * (l + 1.0)))
        }
    }
}

/// `Gamma[v][u] = int_0^inf |g_vu(t)| dt`.
pub fn gamma_matrix(model: &GroundTruthModel) -> Result<Vec<Vec<f64>>> {
    model
        .kernels
        .iter()
        .map(|row| row.iter().map(kernel_abs_integral).collect())
        .collect()
}

/// Spectral radius of a non-negative matrix by power iteration on
/// `A + I`, whose Perron root is the only eigenvalue of largest modulus.
pub fn perron_root(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n == 0 || a.iter().flatten().all(|x| *x == 0.0) {
        return 0.0;
    }
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = f64::NAN;
    for _ in 0..1_000_000 {
        let y: Vec<f64> = (0..n)
            .map(|i| x[i] + a[i].iter().zip(&x).map(|(aij, xj)| aij * xj).sum::<f64>())
            .collect();
        let norm: f64 = y.iter().sum();
        let next = norm - 1.0;
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - estimate).abs() <= 1e-10 * next.abs().max(1e-300) {
            return next.max(0.0);
        }
        estimate = next;
    }
    estimate.max(0.0)
}

/// Spectral radius of the matrix of absolute kernel integrals; the process
/// does not explode when it is below one.
pub fn spectral_radius(model: &GroundTruthModel) -> Result<f64> {
    Ok(perron_root(&gamma_matrix(model)?))
}

/// Sample one realization on `[t_minus, t_plus]` by thinning. The
/// dominating rate is recomputed after every candidate.
pub fn thinning_simulate<M, R>(model: &M, id: impl Into<String>, t_minus: f64, t_plus: f64, rng: &mut R) -> Result<Realization>
where
    M: IntensityModel + ?Sized,
    R: Rng + ?Sized,
{
    let d = model.dim();
    let mut state = model.start(t_minus);
    let mut rates = vec![0.0; d];
    let mut events = Vec::new();
    let mut t = t_minus;
    loop {
        let bound = state.dominating_rate();
        if !bound.is_finite() {
            return Err(Error::Numerical(format!("dominating rate is {bound} at t = {t}")));
        }
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.gen();
        t -= (1.0 - u).ln() / bound;
        if t >= t_plus {
            break;
        }
        state.advance_to(t);
        state.raw_intensities(&mut rates);
        let mut total = 0.0;
        for r in rates.iter_mut() {
            *r = r.max(0.0);
            total += *r;
        }
        if !total.is_finite() {
            return Err(Error::Numerical(format!("intensity is {total} at t = {t}")));
        }
        if total > bound * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "acceptance ratio {} exceeds 1 at t = {t}: envelope bound violated",
                total / bound
            )));
        }
        let w = rng.gen::<f64>() * bound;
        if w < total {
            // w is uniform on [0, total): reuse it to pick the type
            let mut kind = d - 1;
            let mut acc = 0.0;
            for (v, r) in rates.iter().enumerate() {
                acc += r;
                if w < acc {
                    kind = v;
                    break;
                }
            }
            state.record(kind);
            events.push(Event::new(t, kind));
            if events.len() > MAX_EVENTS_PER_REALIZATION {
                return Err(Error::Numerical(format!(
                    "more than {MAX_EVENTS_PER_REALIZATION} events before t = {t}: process looks explosive"
                )));
            }
        }
    }
    Realization::new(id, t_minus, t_plus, events)
}

/// `n` independent realizations, sampled in parallel; realization `h` is
/// named `h` and drawn from stream `h + 1` of `seed`.
pub fn simulate_dataset<M: IntensityModel + ?Sized>(
    model: &M,
    n: usize,
    t_minus: f64,
    t_plus: f64,
    seed: u64,
) -> Result<Dataset> {
    let realizations = (0..n)
        .into_par_iter()
        .map(|h| {
            let mut rng = stream_rng(seed, h as u64 + 1);
            thinning_simulate(model, h.to_string(), t_minus, t_plus, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(model.dim(), realizations)
}

/// A model that drives a simulation.
#[derive(Debug, Clone)]
pub enum SimModel {
    Truth(GroundTruthModel),
    ExpSum(ExpSumModel),
}

impl SimModel {
    /// Closed-form view used for scoring.
    pub fn truth(&self) -> GroundTruthModel {
        match self {
            SimModel::Truth(m) => m.clone(),
            SimModel::ExpSum(m) => GroundTruthModel::from_expsum(m),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SimModel::Truth(m) => m.d,
            SimModel::ExpSum(m) => m.d(),
        }
    }

    pub fn simulate(&self, n: usize, t_minus: f64, t_plus: f64, seed: u64) -> Result<Dataset> {
        match self {
            SimModel::Truth(m) => simulate_dataset(m, n, t_minus, t_plus, seed),
            SimModel::ExpSum(m) => simulate_dataset(m, n, t_minus, t_plus, seed),
        }
    }
}

/// The generating model of a scenario.
pub fn scenario_model(config: &SimConfig) -> Result<SimModel> {
    config.validate()?;
    Ok(match config.scenario {
        Scenario::Large => SimModel::Truth(generate_synthetic(config)?),
        Scenario::Toy => SimModel::Truth(generate_toy(config.seed)),
        Scenario::Poisson => SimModel::Truth(poisson_model(config.d, config.mu)?),
        Scenario::Expsum => {
            let path = config.model_path.as_ref().expect("validated");
            let model = crate::io::read_model_file(path)?;
            if config.d != 0 && config.d != model.d() {
                return Err(Error::InvalidConfig(format!(
                    "d = {} does not match the model file (d = {})",
                    config.d,
                    model.d()
                )));
            }
            SimModel::ExpSum(model)
        }
    })
}

/// Generating model and simulated dataset of `config`.
pub fn simulate_config(config: &SimConfig) -> Result<(SimModel, Dataset)> {
    let model = scenario_model(config)?;
    let data = model.simulate(config.n_realizations, config.t_minus, config.t_plus, config.seed)?;
    Ok((model, data))
}
