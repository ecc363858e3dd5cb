//! MEMIP: successive Newton maximizations of the relaxed log-likelihood over
//! growing exponential bases.
//!
//! Features are built once at `K_max`; the problem of size `k` uses their
//! leading `k` basis functions. The optimum at size `k - 1`, zero-padded,
//! starts the Newton solve at size `k`, which makes the optimal objective
//! non-decreasing in `k`. Targets are independent and fitted in parallel.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::{build_event_features, build_grid_features, FeatureSet};
use crate::likelihood::{clipped_loglik, first_infeasible_event, relaxed_loglik, ExactTargetObjective, TargetObjective};
use crate::model::ExpSumModel;
use crate::newton::{newton_argmax, ConcaveObjective, NewtonParams, NewtonResult};

/// First-order refinement on the exact positive-part objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactRefine {
    /// Grid step of the exact objective.
    pub dt: f64,
    pub iterations: usize,
}

impl Default for ExactRefine {
    fn default() -> Self {
        Self { dt: 0.05, iterations: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub alpha: f64,
    pub k_max: usize,
    pub newton: NewtonParams,
    /// Also start Newton from a non-negative multiplicative-update solution
    /// and keep the better optimum.
    pub nonneg_warm_start: bool,
    pub exact_refine: Option<ExactRefine>,
    /// Starting point for `k = 1`; defaults to [`default_start`].
    pub start: Option<ExpSumModel>,
}

impl FitOptions {
    pub fn new(alpha: f64, k_max: usize) -> Self {
        Self {
            alpha,
            k_max,
            newton: NewtonParams::default(),
            nonneg_warm_start: false,
            exact_refine: None,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub k: usize,
    /// Relaxed objective at the optimum, summed over targets.
    pub objective: f64,
    /// Newton iterations summed over targets.
    pub iterations: usize,
    /// Largest exit gradient norm over targets.
    pub grad_norm: f64,
    /// Smallest objective gain over all accepted Newton steps, if any.
    pub min_step_gain: Option<f64>,
    pub pseudo_inverse: bool,
    /// Targets whose optimum came from the non-negative warm start.
    pub nonneg_selected: usize,
    /// Exact objective after refinement, when requested.
    pub exact_objective: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub features_s: f64,
    pub newton_s: f64,
    pub refine_s: f64,
    pub selection_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub alpha: f64,
    pub k_max: usize,
    pub events: usize,
    pub per_k: Vec<KReport>,
    pub selected_k: Option<usize>,
    /// Validation score per `k`, when selection ran.
    pub validation: Vec<ValidationScore>,
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct MemipFit {
    /// Fitted model for `k = 1..=K_max`.
    pub models: Vec<ExpSumModel>,
    pub report: FitReport,
}

impl MemipFit {
    /// Model of basis size `k` (1-based).
    pub fn model(&self, k: usize) -> &ExpSumModel {
        &self.models[k - 1]
    }

    pub fn selected(&self) -> Option<&ExpSumModel> {
        self.report.selected_k.map(|k| self.model(k))
    }
}

/// Background constant `N_v / (total observed time)` per target, zero kernels.
pub fn default_start(features: &FeatureSet) -> ExpSumModel {
    let duration = features.bhat[0];
    let mut m = ExpSumModel::zeros(features.d, 1, features.alpha).expect("valid shape");
    for v in 0..features.d {
        let rate = if duration > 0.0 {
            features.targets[v].len() as f64 / duration
        } else {
            0.0
        };
        m.set(v, 0, 0, rate);
    }
    m
}

/// Multiplicative-update ascent of the relaxed objective restricted to
/// `x >= 0`, from a uniform positive start. The background constant is kept
/// at least `1e-8` so the result is always feasible.
pub fn nonneg_warm_start(features: &FeatureSet, v: usize, k: usize) -> Vec<f64> {
    let obj = TargetObjective::new(features, v, k);
    nonneg_ascent(&obj, &uniform_start(&obj))
}

/// Each coordinate alone explains an equal share of the target's events.
pub fn uniform_start(obj: &TargetObjective) -> Vec<f64> {
    let p = obj.dim();
    let n = obj.n_events().max(1) as f64;
    obj.bhat()
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if b > 0.0 {
                n / (p as f64 * b)
            } else if i == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

const BACKGROUND_FLOOR: f64 = 1e-8;

fn nonneg_ascent(obj: &TargetObjective, start: &[f64]) -> Vec<f64> {
    let p = obj.dim();
    let mut x = start.to_vec();
    x[0] = x[0].max(BACKGROUND_FLOOR);
    let mut value = obj.value(&x);
    for _ in 0..100 {
        let mut num = vec![0.0; p];
        for row in obj.rows() {
            let rate: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            for (n, a) in num.iter_mut().zip(row) {
                *n += a / rate;
            }
        }
        for ((xi, n), &b) in x.iter_mut().zip(&num).zip(obj.bhat()) {
            *xi = if b > 0.0 { *xi * n / b } else { 0.0 };
        }
        x[0] = x[0].max(BACKGROUND_FLOOR);
        let next = obj.value(&x);
        let change = (next - value).abs() / value.abs().max(1e-300);
        value = next;
        if change < 1e-6 {
            break;
        }
    }
    x
}

struct TargetFit {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    grad_norm: f64,
    min_gain: Option<f64>,
    pseudo_inverse: bool,
    nonneg: bool,
}

fn min_gain(r: &NewtonResult) -> Option<f64> {
    r.trace.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
}

fn fit_target(features: &FeatureSet, v: usize, w1: &[f64], opts: &FitOptions) -> Result<Vec<TargetFit>> {
    let mut out: Vec<TargetFit> = Vec::with_capacity(opts.k_max);
    for k in 1..=opts.k_max {
        let obj = TargetObjective::new(features, v, k);
        let start: Vec<f64> = match out.last() {
            None => w1.to_vec(),
            Some(prev) => {
                // zero-pad the new basis function of every source slot
                let mut s = vec![0.0; (features.d + 1) * k];
                for u in 0..=features.d {
                    s[u * k..u * k + k - 1].copy_from_slice(&prev.x[u * (k - 1)..(u + 1) * (k - 1)]);
                }
                s
            }
        };
        let mut best = newton_argmax(&obj, &start, &opts.newton)?;
        let mut nonneg = false;
        if opts.nonneg_warm_start {
            let plus = nonneg_ascent(&obj, &uniform_start(&obj));
            if obj.value(&plus).is_finite() {
                let alt = newton_argmax(&obj, &plus, &opts.newton)?;
                if alt.value > best.value {
                    best = alt;
                    nonneg = true;
                }
            }
        }
        out.push(TargetFit {
            min_gain: min_gain(&best),
            iterations: best.iterations,
            grad_norm: best.grad_norm,
            pseudo_inverse: best.pseudo_inverse,
            value: best.value,
            x: best.x,
            nonneg,
        });
    }
    Ok(out)
}

fn check_start(features: &FeatureSet, start: &ExpSumModel) -> Result<()> {
    if start.d() != features.d || start.k() != 1 {
        return Err(Error::InvalidConfig(format!(
            "starting point must have d = {} and K = 1 (got d = {}, K = {})",
            features.d,
            start.d(),
            start.k()
        )));
    }
    for v in 0..features.d {
        if let Some((row, rate)) = first_infeasible_event(features, v, 1, start.target_block(v)) {
            let (h, i) = features.targets[v].origins[row];
            return Err(Error::InfeasibleStart {
                realization: features.realization_ids[h].clone(),
                event: i,
                kind: v + 1,
                rate,
            });
        }
    }
    Ok(())
}

/// Run MEMIP on prebuilt features (basis size `features.k >= opts.k_max`).
pub fn memip_fit_features(features: &FeatureSet, opts: &FitOptions) -> Result<MemipFit> {
    if opts.k_max == 0 || opts.k_max > features.k {
        return Err(Error::InvalidConfig(format!(
            "K_max = {} must lie in 1..={}",
            opts.k_max, features.k
        )));
    }
    if features.alpha != opts.alpha {
        return Err(Error::InvalidConfig("features were built with a different alpha".into()));
    }
    opts.newton.validate()?;
    let start = opts.start.clone().unwrap_or_else(|| default_start(features));
    check_start(features, &start)?;

    let clock = Instant::now();
    let per_target: Vec<Vec<TargetFit>> = (0..features.d)
        .into_par_iter()
        .map(|v| fit_target(features, v, start.target_block(v), opts))
        .collect::<Result<_>>()?;
    let newton_s = clock.elapsed().as_secs_f64();

    let d = features.d;
    let mut models = Vec::with_capacity(opts.k_max);
    let mut per_k = Vec::with_capacity(opts.k_max);
    for k in 1..=opts.k_max {
        let fits: Vec<&TargetFit> = per_target.iter().map(|t| &t[k - 1]).collect();
        let blocks = fits.iter().map(|f| f.x.clone()).collect();
        models.push(ExpSumModel::from_blocks(d, k, opts.alpha, blocks)?);
        per_k.push(KReport {
            k,
            objective: fits.iter().map(|f| f.value).sum(),
            iterations: fits.iter().map(|f| f.iterations).sum(),
            grad_norm: fits.iter().map(|f| f.grad_norm).fold(0.0, f64::max),
            min_step_gain: fits.iter().filter_map(|f| f.min_gain).reduce(f64::min),
            pseudo_inverse: fits.iter().any(|f| f.pseudo_inverse),
            nonneg_selected: fits.iter().filter(|f| f.nonneg).count(),
            exact_objective: None,
        });
    }
    Ok(MemipFit {
        models,
        report: FitReport {
            alpha: opts.alpha,
            k_max: opts.k_max,
            events: features.total_events(),
            per_k,
            selected_k: None,
            validation: Vec::new(),
            timing: Timing {
                newton_s,
                ..Timing::default()
            },
        },
    })
}

/// Fit MEMIP models for `k = 1..=K_max` on `dataset`.
pub fn memip_fit(dataset: &Dataset, opts: &FitOptions) -> Result<MemipFit> {
    let clock = Instant::now();
    let features = build_event_features(dataset, opts.k_max, opts.alpha)?;
    let features_s = clock.elapsed().as_secs_f64();
    let mut fit = memip_fit_features(&features, opts)?;
    fit.report.timing.features_s = features_s;
    if let Some(refine) = opts.exact_refine {
        let clock = Instant::now();
        let grid = build_grid_features(dataset, opts.k_max, opts.alpha, refine.dt)?;
        for (model, report) in fit.models.iter_mut().zip(fit.report.per_k.iter_mut()) {
            let k = model.k();
            let blocks: Vec<Vec<f64>> = (0..dataset.d())
                .into_par_iter()
                .map(|v| {
                    let obj = ExactTargetObjective::new(&grid, &features, v, k);
                    exact_subgradient_refine(&obj, model.target_block(v), refine.iterations)
                })
                .collect();
            *model = ExpSumModel::from_blocks(dataset.d(), k, opts.alpha, blocks)?;
            report.exact_objective = Some(crate::likelihood::exact_loglik(model, &grid, &features));
        }
        fit.report.timing.refine_s = clock.elapsed().as_secs_f64();
    }
    Ok(fit)
}

/// Supergradient ascent on the exact objective with normalized steps of
/// length `eta0 / sqrt(iter)`; returns the best iterate seen.
pub fn exact_subgradient_refine(obj: &ExactTargetObjective<'_>, x0: &[f64], iterations: usize) -> Vec<f64> {
    let mut best = x0.to_vec();
    let mut best_value = obj.value(x0);
    if !best_value.is_finite() {
        return best;
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let eta0 = 0.01 * norm(x0).max(1e-3);
    let mut x = x0.to_vec();
    for it in 1..=iterations {
        let Some(g) = obj.supergradient(&x) else { break };
        let gn = norm(&g);
        if gn == 0.0 {
            break;
        }
        let eta = eta0 / (it as f64).sqrt();
        let candidate: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + eta * gi / gn).collect();
        let value = obj.value(&candidate);
        if !value.is_finite() {
            continue;
        }
        x = candidate;
        if value > best_value {
            best_value = value;
            best.clone_from(&x);
        }
    }
    best
}

/// Validation fit of one candidate. When it predicts a positive rate at
/// every validation event this is the relaxed log-likelihood; otherwise the
/// count of events it rules out and the clipped log-likelihood of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub infeasible: usize,
    pub loglik: f64,
}

impl ValidationScore {
    pub fn of(model: &ExpSumModel, features: &FeatureSet, validation: &Dataset) -> Self {
        let relaxed = relaxed_loglik(model, features);
        if relaxed.is_finite() {
            return Self { infeasible: 0, loglik: relaxed };
        }
        let parts: Vec<(f64, usize)> = validation.realizations().par_iter().map(|r| clipped_loglik(model, r)).collect();
        Self {
            infeasible: parts.iter().map(|p| p.1).sum(),
            loglik: parts.iter().map(|p| p.0).sum(),
        }
    }

    /// Fewer infeasible events first, then higher log-likelihood.
    pub fn better_than(&self, other: &Self) -> bool {
        self.infeasible < other.infeasible || (self.infeasible == other.infeasible && self.loglik > other.loglik)
    }
}

/// Basis size `k` (1-based) maximizing the relaxed log-likelihood on the
/// validation set; ties go to the smallest `k`. When every candidate
/// predicts a non-positive rate at some validation event, candidates are
/// ranked by their count of such events, then by the clipped
/// log-likelihood. Also returns every score.
pub fn select_k(models: &[ExpSumModel], validation: &Dataset) -> Result<(usize, Vec<ValidationScore>)> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("no candidate models".into()))?;
    if validation.total_events() == 0 {
        return Err(Error::InvalidData("validation set has no events".into()));
    }
    let k_max = models.iter().map(ExpSumModel::k).max().unwrap_or(1);
    let features = build_event_features(validation, k_max, first.alpha())?;
    let scores: Vec<ValidationScore> = models.iter().map(|m| ValidationScore::of(m, &features, validation)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.better_than(&scores[best]) {
            best = i;
        }
    }
    Ok((models[best].k(), scores))
}

/// Fit on the leading part of `dataset` and select `k` on the trailing
/// `holdout` fraction of realizations.
pub fn memip_fit_select(dataset: &Dataset, opts: &FitOptions, holdout: f64) -> Result<MemipFit> {
    if holdout == 0.0 {
        let mut fit = memip_fit(dataset, opts)?;
        fit.report.selected_k = Some(opts.k_max);
        return Ok(fit);
    }
    let (train, validation) = dataset.split_holdout(holdout)?;
    let mut fit = memip_fit(&train, opts)?;
    let clock = Instant::now();
    let (k, scores) = select_k(&fit.models, &validation)?;
    fit.report.selected_k = Some(k);
    fit.report.validation = scores;
    fit.report.timing.selection_s = clock.elapsed().as_secs_f64();
    Ok(fit)
}

/// The single-exponential baseline: MEMIP with one basis function.
pub fn fit_exp_baseline(dataset: &Dataset, alpha: f64, newton: NewtonParams) -> Result<ExpSumModel> {
    let opts = FitOptions {
        newton,
        ..FitOptions::new(alpha, 1)
    };
    Ok(memip_fit(dataset, &opts)?.models.remove(0))
}
