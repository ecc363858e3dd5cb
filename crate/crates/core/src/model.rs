//! Parametric models: the learned exponential-sum model and closed-form
//! ground-truth models used for simulation and scoring.
//!
//! Indexing convention. Targets `v` and source types are zero-based. Inside a
//! coefficient block the source slot `0` is the background and slot `s + 1`
//! is source type `s`. Basis index `j` runs over `0..K`:
//!
//! ```text
//! mu_v(t)   = sum_j X[v][0][j]     * exp(-j * alpha * t)
//! g_vs(t)   = sum_j X[v][s + 1][j] * exp(-(j + 1) * alpha * t)
//! ```
//!
//! so the background basis contains a constant and every kernel vanishes at
//! infinity. A model with `K = 1` is a constant background plus
//! single-exponential kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{Event, Realization};
use crate::error::{Error, Result};

/// Exponential flush threshold for decaying state.
pub(crate) const UNDERFLOW: f64 = 1e-300;

#[inline]
pub(crate) fn flush(x: f64) -> f64 {
    if x.abs() < UNDERFLOW {
        0.0
    } else {
        x
    }
}

/// Learned model: coefficients `X[v][u][j]` over `d` targets, `d + 1`
/// source slots and `K` basis functions with decay unit `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSumModel {
    d: usize,
    k: usize,
    alpha: f64,
    coeffs: Vec<f64>,
}

impl ExpSumModel {
    pub fn zeros(d: usize, k: usize, alpha: f64) -> Result<Self> {
        Self::from_coeffs(d, k, alpha, vec![0.0; d * (d + 1) * k])
    }

    pub fn from_coeffs(d: usize, k: usize, alpha: f64, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::InvalidModel(format!("d = {d} and K = {k} must be positive")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidModel(format!("alpha = {alpha} must be positive")));
        }
        if coeffs.len() != d * (d + 1) * k {
            return Err(Error::InvalidModel(format!(
                "expected {} coefficients for d = {d}, K = {k}; got {}",
                d * (d + 1) * k,
                coeffs.len()
            )));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite coefficient {bad}")));
        }
        Ok(Self { d, k, alpha, coeffs })
    }

    /// Assemble a model from per-target blocks of length `(d + 1) * K`.
    pub fn from_blocks(d: usize, k: usize, alpha: f64, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != d {
            return Err(Error::InvalidModel(format!("expected {d} target blocks, got {}", blocks.len())));
        }
        Self::from_coeffs(d, k, alpha, blocks.concat())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of basis functions `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn block_len(&self) -> usize {
        (self.d + 1) * self.k
    }

    #[inline]
    fn index(&self, v: usize, u: usize, j: usize) -> usize {
        (v * (self.d + 1) + u) * self.k + j
    }

    /// Coefficient for target `v`, source slot `u` (0 = background) and basis `j`.
    pub fn get(&self, v: usize, u: usize, j: usize) -> f64 {
        self.coeffs[self.index(v, u, j)]
    }

    pub fn set(&mut self, v: usize, u: usize, j: usize, value: f64) {
        let i = self.index(v, u, j);
        self.coeffs[i] = value;
    }

    /// Coefficients of target `v`, laid out `[u][j]`.
    pub fn target_block(&self, v: usize) -> &[f64] {
        let n = self.block_len();
        &self.coeffs[v * n..(v + 1) * n]
    }

    /// Background rate `mu_v(t)`, possibly negative.
    pub fn background(&self, v: usize, t: f64) -> f64 {
        crate::basis::reconstruct(self, v, 0, t)
    }

    /// Kernel `g_{v,source}(t)` describing the effect of a `source` event on target `v`.
    pub fn kernel(&self, v: usize, source: usize, t: f64) -> f64 {
        crate::basis::reconstruct(self, v, source + 1, t)
    }

    /// Keep only the leading `k` basis functions.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        self.resized(k)
    }

    /// Zero-pad (or truncate) the basis to size `k`.
    pub fn resized(&self, k: usize) -> Result<Self> {
        let mut out = Self::zeros(self.d, k, self.alpha)?;
        for v in 0..self.d {
            for u in 0..=self.d {
                for j in 0..k.min(self.k) {
                    out.set(v, u, j, self.get(v, u, j));
                }
            }
        }
        Ok(out)
    }
}

/// Closed-form background rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Constant { rate: f64 },
    /// `(cos(2 pi t / omega) + 2) / (1 + t)`
    CosineDecay { omega: f64 },
    /// `(sin(2 pi t / omega) + 2) / (1 + t)`
    SineDecay { omega: f64 },
    /// `sum_j coeffs[j] * exp(-j * alpha * t)`
    ExpSum { alpha: f64, coeffs: Vec<f64> },
}

impl Background {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Background::Constant { rate } => *rate,
            Background::CosineDecay { omega } => ((2.0 * PI * t / omega).cos() + 2.0) / (1.0 + t),
            Background::SineDecay { omega } => ((2.0 * PI * t / omega).sin() + 2.0) / (1.0 + t),
            Background::ExpSum { alpha, coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * (-(j as f64) * alpha * t).exp())
                .sum(),
        }
    }

    /// Non-increasing majorant: `sup_{s >= t} value(s) <= majorant(t)`.
    pub fn majorant(&self, t: f64) -> f64 {
        match self {
            Background::Constant { rate } => rate.max(0.0),
            Background::CosineDecay { .. } | Background::SineDecay { .. } => 3.0 / (1.0 + t.max(0.0)),
            Background::ExpSum { alpha, coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c.max(0.0) * (-(j as f64) * alpha * t).exp())
                .sum(),
        }
    }
}

/// Closed-form triggering kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    /// `nu * (sin(2 pi t / omega + (pi / 2) * parity) + 2) / (3 (t + 1)^2)`
    SinPowerLaw { nu: f64, omega: f64, parity: u8 },
    /// `sum_j coeffs[j] * exp(-(j + 1) * alpha * t)`
    ExpSum { alpha: f64, coeffs: Vec<f64> },
}

impl Kernel {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::SinPowerLaw { nu, omega, parity } => {
                let phase = 0.5 * PI * f64::from(*parity);
                nu * ((2.0 * PI * t / omega + phase).sin() + 2.0) / (3.0 * (t + 1.0) * (t + 1.0))
            }
            Kernel::ExpSum { alpha, coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * (-((j + 1) as f64) * alpha * t).exp())
                .sum(),
        }
    }

    /// Non-increasing envelope with `|g(t + s)| <= envelope(s)` for all `t, s >= 0`.
    pub fn envelope(&self, s: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::SinPowerLaw { nu, .. } => nu.abs() / ((s + 1.0) * (s + 1.0)),
            Kernel::ExpSum { alpha, coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c.abs() * (-((j + 1) as f64) * alpha * s).exp())
                .sum(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::SinPowerLaw { nu, .. } => *nu == 0.0,
            Kernel::ExpSum { coeffs, .. } => coeffs.iter().all(|c| *c == 0.0),
        }
    }
}

/// Ground-truth model with closed-form backgrounds and kernels.
/// `kernels[v][s]` is the effect of a type-`s` event on target `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub d: usize,
    pub backgrounds: Vec<Background>,
    pub kernels: Vec<Vec<Kernel>>,
}

impl GroundTruthModel {
    pub fn new(backgrounds: Vec<Background>, kernels: Vec<Vec<Kernel>>) -> Result<Self> {
        let d = backgrounds.len();
        let m = Self { d, backgrounds, kernels };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.backgrounds.len() != self.d {
            return Err(Error::InvalidModel("background count must equal d >= 1".into()));
        }
        if self.kernels.len() != self.d || self.kernels.iter().any(|row| row.len() != self.d) {
            return Err(Error::InvalidModel("kernel matrix must be d x d".into()));
        }
        Ok(())
    }

    /// The same process expressed in closed form.
    pub fn from_expsum(model: &ExpSumModel) -> Self {
        let (d, k, alpha) = (model.d(), model.k(), model.alpha());
        let backgrounds = (0..d)
            .map(|v| Background::ExpSum {
                alpha,
                coeffs: (0..k).map(|j| model.get(v, 0, j)).collect(),
            })
            .collect();
        let kernels = (0..d)
            .map(|v| {
                (0..d)
                    .map(|s| Kernel::ExpSum {
                        alpha,
                        coeffs: (0..k).map(|j| model.get(v, s + 1, j)).collect(),
                    })
                    .collect()
            })
            .collect();
        Self { d, backgrounds, kernels }
    }
}

/// Incrementally maintained conditional intensity along one realization.
pub trait IntensityState {
    fn time(&self) -> f64;
    /// Move forward to `t` without any event in between.
    fn advance_to(&mut self, t: f64);
    /// Register an event of type `kind` at the current time.
    fn record(&mut self, kind: usize);
    /// Unclipped `mu_v(t) + sum g_{v, u_j}(t - t_j)` for every target.
    fn raw_intensities(&self, out: &mut [f64]);
    /// Upper bound on the total clipped intensity over `[time, inf)` when no
    /// further event occurs.
    fn dominating_rate(&self) -> f64;
}

/// A model whose conditional intensity can be tracked along a history.
pub trait IntensityModel: Sync {
    type State<'a>: IntensityState
    where
        Self: 'a;
    fn dim(&self) -> usize;
    fn start(&self, t0: f64) -> Self::State<'_>;
}

/// Markov state of an [`ExpSumModel`]: per source type and basis index the
/// decayed event count `sum_j exp(-(j + 1) alpha (t - t_j))`.
#[derive(Debug, Clone)]
pub struct ExpSumState<'a> {
    model: &'a ExpSumModel,
    t: f64,
    decay: Vec<f64>,
}

impl ExpSumState<'_> {
    /// Coefficients `c_0..=c_K` with `lambda_v(time + s) = sum_m c_m exp(-m alpha s)`
    /// while no event occurs.
    pub fn segment_coeffs(&self, v: usize, out: &mut [f64]) {
        let m = self.model;
        let k = m.k;
        let block = m.target_block(v);
        out.iter_mut().for_each(|c| *c = 0.0);
        for (j, x) in block[..k].iter().enumerate() {
            out[j] += x * (-(j as f64) * m.alpha * self.t).exp();
        }
        for u in 0..m.d {
            for j in 0..k {
                out[j + 1] += block[k + u * k + j] * self.decay[u * k + j];
            }
        }
    }
}

impl IntensityState for ExpSumState<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.t;
        if dt > 0.0 {
            let k = self.model.k;
            let base = (-self.model.alpha * dt).exp();
            for row in self.decay.chunks_mut(k) {
                let mut f = base;
                for s in row.iter_mut() {
                    *s = flush(*s * f);
                    f *= base;
                }
            }
        }
        self.t = t;
    }

    fn record(&mut self, kind: usize) {
        let k = self.model.k;
        for s in &mut self.decay[kind * k..(kind + 1) * k] {
            *s += 1.0;
        }
    }

    fn raw_intensities(&self, out: &mut [f64]) {
        let m = self.model;
        let k = m.k;
        let bg: Vec<f64> = (0..k).map(|j| (-(j as f64) * m.alpha * self.t).exp()).collect();
        for (v, o) in out.iter_mut().enumerate() {
            let block = m.target_block(v);
            let mut acc: f64 = block[..k].iter().zip(&bg).map(|(x, b)| x * b).sum();
            acc += block[k..].iter().zip(&self.decay).map(|(x, s)| x * s).sum::<f64>();
            *o = acc;
        }
    }

    fn dominating_rate(&self) -> f64 {
        let m = self.model;
        let k = m.k;
        let mut total = 0.0;
        for v in 0..m.d {
            let block = m.target_block(v);
            for (j, x) in block[..k].iter().enumerate() {
                total += x.max(0.0) * (-(j as f64) * m.alpha * self.t).exp();
            }
            total += block[k..]
                .iter()
                .zip(&self.decay)
                .map(|(x, s)| x.max(0.0) * s)
                .sum::<f64>();
        }
        total
    }
}

impl IntensityModel for ExpSumModel {
    type State<'a> = ExpSumState<'a> where Self: 'a;

    fn dim(&self) -> usize {
        self.d
    }

    fn start(&self, t0: f64) -> Self::State<'_> {
        ExpSumState {
            model: self,
            t: t0,
            decay: vec![0.0; self.d * self.k],
        }
    }
}

/// History-based state of a [`GroundTruthModel`]. Events whose type has no
/// nonzero outgoing kernel are not stored.
#[derive(Debug, Clone)]
pub struct GroundTruthState<'a> {
    model: &'a GroundTruthModel,
    t: f64,
    history: Vec<Event>,
    excites: Vec<bool>,
}

impl IntensityState for GroundTruthState<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn advance_to(&mut self, t: f64) {
        self.t = t;
    }

    fn record(&mut self, kind: usize) {
        if self.excites[kind] {
            self.history.push(Event::new(self.t, kind));
        }
    }

    fn raw_intensities(&self, out: &mut [f64]) {
        let m = self.model;
        for (v, o) in out.iter_mut().enumerate() {
            let mut acc = m.backgrounds[v].value(self.t);
            for e in &self.history {
                acc += m.kernels[v][e.kind].value(self.t - e.time);
            }
            *o = acc;
        }
    }

    fn dominating_rate(&self) -> f64 {
        let m = self.model;
        let mut total = 0.0;
        for v in 0..m.d {
            total += m.backgrounds[v].majorant(self.t);
            for e in &self.history {
                total += m.kernels[v][e.kind].envelope(self.t - e.time);
            }
        }
        total
    }
}

impl IntensityModel for GroundTruthModel {
    type State<'a> = GroundTruthState<'a> where Self: 'a;

    fn dim(&self) -> usize {
        self.d
    }

    fn start(&self, t0: f64) -> Self::State<'_> {
        let excites = (0..self.d)
            .map(|s| (0..self.d).any(|v| !self.kernels[v][s].is_zero()))
            .collect();
        GroundTruthState {
            model: self,
            t: t0,
            history: Vec::new(),
            excites,
        }
    }
}

/// Clipped intensities `lambda_u(t_i)` just before every event of `r`,
/// flattened as `n x d`. Simultaneous events do not see each other.
pub fn event_intensities<M: IntensityModel + ?Sized>(model: &M, r: &Realization) -> Vec<f64> {
    let d = model.dim();
    let mut state = model.start(r.t_minus);
    let mut out = vec![0.0; r.len() * d];
    let mut pending: Vec<usize> = Vec::new();
    for (i, e) in r.events.iter().enumerate() {
        if e.time > state.time() {
            for &kind in &pending {
                state.record(kind);
            }
            pending.clear();
            state.advance_to(e.time);
        }
        let row = &mut out[i * d..(i + 1) * d];
        state.raw_intensities(row);
        for x in row.iter_mut() {
            *x = x.max(0.0);
        }
        pending.push(e.kind);
    }
    out
}
