//! Sufficient statistics of the log-likelihood over the exponential basis.
//!
//! For an event `i` of target type `v`, the feature row `A_i` has layout
//! `[u][j]` over source slots `u in 0..=d` and basis indices `j in 0..K`:
//!
//! ```text
//! A_i[0][j]     = exp(-j alpha t_i)
//! A_i[s + 1][j] = sum_{l : t_l < t_i, type s} exp(-(j + 1) alpha (t_i - t_l))
//! ```
//!
//! so that `A_i . X_v` is the unclipped intensity of `v` at `t_i`. `B_hat`
//! integrates the same basis over every observation window and is shared by
//! all targets. Times are measured from the global origin.
//!
//! The kernel entries are maintained by a decay-and-jump recursion, giving a
//! single `O(N K d)` pass. [`bruteforce_event_features`] recomputes
//! everything by the quadratic double loop and numerical quadrature.

use rayon::prelude::*;

use crate::data::{Dataset, Realization};
use crate::error::{Error, Result};
use crate::model::flush;
use crate::quadrature;

/// Feature rows of all events of one target type.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetFeatures {
    /// Row-major `n x (d + 1) K`.
    pub rows: Vec<f64>,
    /// `(realization index, event index)` of each row.
    pub origins: Vec<(usize, usize)>,
}

impl TargetFeatures {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Per-event vectors `A` grouped by target, and the integrated vector `B_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub targets: Vec<TargetFeatures>,
    /// `(d + 1) K`, identical for every target.
    pub bhat: Vec<f64>,
    pub realization_ids: Vec<String>,
}

impl FeatureSet {
    pub fn block_len(&self) -> usize {
        (self.d + 1) * self.k
    }

    pub fn total_events(&self) -> usize {
        self.targets.iter().map(TargetFeatures::len).sum()
    }

    /// Row of the `row`-th event of target `v`.
    pub fn row(&self, v: usize, row: usize) -> &[f64] {
        let n = self.block_len();
        &self.targets[v].rows[row * n..(row + 1) * n]
    }

    /// `B_hat[v][u][j]`. Independent of `v`.
    pub fn bhat_entry(&self, _v: usize, u: usize, j: usize) -> f64 {
        self.bhat[u * self.k + j]
    }

    /// Column indices of the leading `k` basis functions, in `[u][j]` order.
    pub fn sub_block_indices(&self, k: usize) -> Vec<usize> {
        assert!(k >= 1 && k <= self.k, "sub-block size {k} outside 1..={}", self.k);
        (0..=self.d)
            .flat_map(|u| (0..k).map(move |j| u * self.k + j))
            .collect()
    }
}

fn check_params(k: usize, alpha: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("basis size K must be at least 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must be positive")));
    }
    Ok(())
}

/// `(1 - exp(-rate * len)) / rate`, accurate for small `rate * len`.
#[inline]
fn decayed_length(rate: f64, len: f64) -> f64 {
    -(-rate * len).exp_m1() / rate
}

/// Closed-form window integral of the background basis `exp(-j alpha s)`.
fn background_integral(j: usize, alpha: f64, t_minus: f64, t_plus: f64) -> f64 {
    if j == 0 {
        t_plus - t_minus
    } else {
        let rate = j as f64 * alpha;
        flush((-rate * t_minus).exp() * decayed_length(rate, t_plus - t_minus))
    }
}

struct RealizationFeatures {
    /// per target: rows and event indices
    rows: Vec<Vec<f64>>,
    events: Vec<Vec<usize>>,
    bhat: Vec<f64>,
}

fn realization_features(r: &Realization, d: usize, k: usize, alpha: f64) -> RealizationFeatures {
    let n = (d + 1) * k;
    let mut rows = vec![Vec::new(); d];
    let mut events = vec![Vec::new(); d];
    let mut bhat = vec![0.0; n];
    for (j, b) in bhat.iter_mut().take(k).enumerate() {
        *b = background_integral(j, alpha, r.t_minus, r.t_plus);
    }

    // state[s][j] = sum over past type-s events of exp(-(j + 1) alpha (t - t_l))
    let mut state = vec![0.0; d * k];
    let mut pending: Vec<usize> = Vec::new();
    let mut now = r.t_minus;
    for (i, e) in r.events.iter().enumerate() {
        if e.time > now {
            for &s in &pending {
                for x in &mut state[s * k..(s + 1) * k] {
                    *x += 1.0;
                }
            }
            pending.clear();
            let base = (-alpha * (e.time - now)).exp();
            for block in state.chunks_mut(k) {
                let mut f = base;
                for x in block.iter_mut() {
                    *x = flush(*x * f);
                    f *= base;
                }
            }
            now = e.time;
        }
        let out = &mut rows[e.kind];
        let bg_base = (-alpha * e.time).exp();
        let mut bg = 1.0;
        for _ in 0..k {
            out.push(flush(bg));
            bg *= bg_base;
        }
        out.extend_from_slice(&state);
        events[e.kind].push(i);
        pending.push(e.kind);

        let tail = r.t_plus - e.time;
        let slot = (e.kind + 1) * k;
        for j in 0..k {
            bhat[slot + j] += decayed_length((j + 1) as f64 * alpha, tail);
        }
    }
    RealizationFeatures { rows, events, bhat }
}

fn assemble(dataset: &Dataset, k: usize, alpha: f64, parts: Vec<RealizationFeatures>) -> FeatureSet {
    let d = dataset.d();
    let n = (d + 1) * k;
    let mut targets: Vec<TargetFeatures> = (0..d)
        .map(|_| TargetFeatures {
            rows: Vec::new(),
            origins: Vec::new(),
        })
        .collect();
    let mut bhat = vec![0.0; n];
    for (h, part) in parts.into_iter().enumerate() {
        for (b, x) in bhat.iter_mut().zip(&part.bhat) {
            *b += x;
        }
        for (v, (rows, evs)) in part.rows.into_iter().zip(part.events).enumerate() {
            targets[v].rows.extend(rows);
            targets[v].origins.extend(evs.into_iter().map(|i| (h, i)));
        }
    }
    FeatureSet {
        d,
        k,
        alpha,
        targets,
        bhat,
        realization_ids: dataset.realizations().iter().map(|r| r.id.clone()).collect(),
    }
}

/// Single-pass construction of all event features and `B_hat`.
/// Realizations are processed in parallel and reduced in input order.
pub fn build_event_features(dataset: &Dataset, k: usize, alpha: f64) -> Result<FeatureSet> {
    check_params(k, alpha)?;
    for r in dataset.realizations() {
        r.validate()?;
    }
    let d = dataset.d();
    let parts: Vec<RealizationFeatures> = dataset
        .realizations()
        .par_iter()
        .map(|r| realization_features(r, d, k, alpha))
        .collect();
    Ok(assemble(dataset, k, alpha, parts))
}

/// Reference implementation: `O(sum_h n_h^2)` double loop for `A` and
/// adaptive quadrature for `B_hat`.
pub fn bruteforce_event_features(dataset: &Dataset, k: usize, alpha: f64) -> Result<FeatureSet> {
    check_params(k, alpha)?;
    let d = dataset.d();
    let n = (d + 1) * k;
    let mut parts = Vec::with_capacity(dataset.realizations().len());
    for r in dataset.realizations() {
        r.validate()?;
        let mut rows = vec![Vec::new(); d];
        let mut events = vec![Vec::new(); d];
        let mut bhat = vec![0.0; n];
        for (j, b) in bhat.iter_mut().take(k).enumerate() {
            let rate = j as f64 * alpha;
            *b = quadrature::integrate(|s| (-rate * s).exp(), r.t_minus, r.t_plus, 1e-14, 1e-14)?;
        }
        for (i, e) in r.events.iter().enumerate() {
            let mut row = vec![0.0; n];
            for (j, x) in row.iter_mut().take(k).enumerate() {
                *x = (-(j as f64) * alpha * e.time).exp();
            }
            for past in r.events.iter().filter(|p| p.time < e.time) {
                for j in 0..k {
                    row[(past.kind + 1) * k + j] += (-((j + 1) as f64) * alpha * (e.time - past.time)).exp();
                }
            }
            rows[e.kind].extend(row);
            events[e.kind].push(i);
            for j in 0..k {
                let rate = (j + 1) as f64 * alpha;
                bhat[(e.kind + 1) * k + j] +=
                    quadrature::integrate(|s| (-rate * (s - e.time)).exp(), e.time, r.t_plus, 1e-14, 1e-14)?;
            }
        }
        parts.push(RealizationFeatures { rows, events, bhat });
    }
    Ok(assemble(dataset, k, alpha, parts))
}

/// Grid-discretized features of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRealization {
    /// Grid `s_0 = t_minus < ... < s_{M-1} = t_plus`, containing every event time.
    pub times: Vec<f64>,
    /// `B(s_m)` at every grid time, strict past only; row-major `M x (d + 1) K`.
    pub values: Vec<f64>,
    /// Exact integral of `B` over each cell `[s_m, s_{m+1}]`, including the
    /// jumps of events at `s_m`; row-major `(M - 1) x (d + 1) K`.
    pub cells: Vec<f64>,
}

/// Time-discretized `B` vectors for the exact positive-part objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFeatures {
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub dt: f64,
    pub realizations: Vec<GridRealization>,
}

impl GridFeatures {
    pub fn block_len(&self) -> usize {
        (self.d + 1) * self.k
    }

    pub fn total_points(&self) -> usize {
        self.realizations.iter().map(|g| g.times.len()).sum()
    }
}

fn grid_realization(r: &Realization, d: usize, k: usize, alpha: f64, dt: f64) -> GridRealization {
    let n = (d + 1) * k;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut cells = Vec::new();
    let mut state = vec![0.0; d * k];
    let mut next_event = 0;
    let mut t = r.t_minus;
    loop {
        // B at s = t from the strict past.
        times.push(t);
        let bg_base = (-alpha * t).exp();
        let mut bg = 1.0;
        for _ in 0..k {
            values.push(flush(bg));
            bg *= bg_base;
        }
        values.extend_from_slice(&state);

        while next_event < r.events.len() && r.events[next_event].time <= t {
            let s = r.events[next_event].kind;
            for x in &mut state[s * k..(s + 1) * k] {
                *x += 1.0;
            }
            next_event += 1;
        }
        if t >= r.t_plus {
            break;
        }
        let mut next = (t + dt).min(r.t_plus);
        if next_event < r.events.len() {
            next = next.min(r.events[next_event].time);
        }
        let h = next - t;
        for j in 0..k {
            cells.push(background_integral(j, alpha, t, next));
        }
        for block in state.chunks(k) {
            for (j, x) in block.iter().enumerate() {
                cells.push(x * decayed_length((j + 1) as f64 * alpha, h));
            }
        }
        let base = (-alpha * h).exp();
        for block in state.chunks_mut(k) {
            let mut f = base;
            for x in block.iter_mut() {
                *x = flush(*x * f);
                f *= base;
            }
        }
        t = next;
    }
    debug_assert_eq!(values.len(), times.len() * n);
    debug_assert_eq!(cells.len(), (times.len() - 1) * n);
    GridRealization { times, values, cells }
}

/// Build `B(s)` on a grid of step at most `dt` that contains all event times,
/// in `O(N + M)`.
pub fn build_grid_features(dataset: &Dataset, k: usize, alpha: f64, dt: f64) -> Result<GridFeatures> {
    check_params(k, alpha)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("grid step dt = {dt} must be positive")));
    }
    for r in dataset.realizations() {
        r.validate()?;
    }
    let d = dataset.d();
    let realizations = dataset
        .realizations()
        .par_iter()
        .map(|r| grid_realization(r, d, k, alpha, dt))
        .collect();
    Ok(GridFeatures {
        d,
        k,
        alpha,
        dt,
        realizations,
    })
}
