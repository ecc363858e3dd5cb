//! Damped Newton maximization with backtracking line search.
//!
//! The negated relaxed log-likelihood is self-concordant (a sum of `-ln` of
//! affine functions plus a linear term), so damped Newton with Armijo
//! backtracking converges globally from any feasible start.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A concave objective that may be undefined outside its domain.
pub trait ConcaveObjective {
    fn dim(&self) -> usize;
    /// Objective value, `NEG_INFINITY` outside the domain.
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient and Hessian, `None` outside the domain.
    fn gradient_hessian(&self, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>;
}

/// Line-search and stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonParams {
    /// Armijo slope `c1` in `(0, 0.5)`.
    pub armijo: f64,
    /// Backtracking factor `beta` in `(0, 1)`.
    pub backtrack: f64,
    pub grad_tol: f64,
    /// Stop when half the squared Newton decrement falls below this.
    pub decrement_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        Self {
            armijo: 0.25,
            backtrack: 0.5,
            grad_tol: 1e-8,
            decrement_tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl NewtonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(Error::InvalidConfig(format!("armijo slope {} outside (0, 0.5)", self.armijo)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig(format!("backtrack factor {} outside (0, 1)", self.backtrack)));
        }
        if !(self.grad_tol >= 0.0 && self.decrement_tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("tolerances must be non-negative and max_iter positive".into()));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientNorm,
    Decrement,
    /// No step size passed the Armijo test: the iterate is optimal to
    /// working precision.
    LineSearch,
    MaxIterations,
    /// Gradient or Hessian stopped being usable at the current iterate
    /// (rates underflow near the feasibility boundary).
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Number of accepted Newton steps.
    pub iterations: usize,
    /// Some Hessian was singular or ill conditioned and the step was taken
    /// with its pseudo-inverse.
    pub pseudo_inverse: bool,
    /// Norm of the gradient restricted to coordinates the data informs.
    pub grad_norm: f64,
    pub stop: StopReason,
    /// Objective value after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

const MAX_BACKTRACKS: usize = 60;

/// Relative eigenvalue cutoff below which a Hessian direction counts as flat.
const RANGE_CUTOFF: f64 = 1e-10;

/// Newton step restricted to the range of the Hessian.
///
/// Coordinates with an exactly zero Hessian diagonal carry no information
/// from the data and are left unchanged. The remaining system is solved by
/// Cholesky when it is well conditioned and by an eigen-decomposition
/// pseudo-inverse otherwise. Returns the step, the gradient restricted to the
/// active coordinates, and whether the pseudo-inverse was needed.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<(DVector<f64>, DVector<f64>, bool)> {
    let p = grad.len();
    let active: Vec<usize> = (0..p).filter(|&i| hess[(i, i)] < 0.0).collect();
    let mut full = DVector::zeros(p);
    let mut g_active = DVector::zeros(p);
    if active.is_empty() {
        return Some((full, g_active, false));
    }
    let m = active.len();
    // rescaling leaves the step unchanged and keeps huge curvatures in range
    let scale = active.iter().map(|&i| -hess[(i, i)]).fold(0.0f64, f64::max);
    let neg = DMatrix::from_fn(m, m, |i, j| -hess[(active[i], active[j])] / scale);
    let g = DVector::from_fn(m, |i, _| grad[active[i]]);
    let gs = &g / scale;

    let mut pseudo = false;
    let step = match neg.clone().cholesky() {
        Some(ch)
            if {
                let diag = ch.l_dirty().diagonal();
                let (lo, hi) = diag
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x * x), hi.max(x * x)));
                lo > RANGE_CUTOFF * hi
            } =>
        {
            ch.solve(&gs)
        }
        _ => {
            pseudo = true;
            let eig = neg.symmetric_eigen();
            let top = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(*x));
            if !(top > 0.0 && top.is_finite()) {
                return None;
            }
            let proj = eig.eigenvectors.transpose() * &gs;
            let scaled = DVector::from_fn(m, |i, _| {
                let l = eig.eigenvalues[i];
                if l > RANGE_CUTOFF * top {
                    proj[i] / l
                } else {
                    0.0
                }
            });
            &eig.eigenvectors * scaled
        }
    };
    for (i, &a) in active.iter().enumerate() {
        full[a] = step[i];
        g_active[a] = g[i];
    }
    Some((full, g_active, pseudo))
}

/// Maximize `f` from the feasible point `x0`.
pub fn newton_argmax<F: ConcaveObjective + ?Sized>(f: &F, x0: &[f64], params: &NewtonParams) -> Result<NewtonResult> {
    params.validate()?;
    if x0.len() != f.dim() {
        return Err(Error::InvalidConfig(format!(
            "starting point has length {}, objective dimension is {}",
            x0.len(),
            f.dim()
        )));
    }
    let mut x = x0.to_vec();
    let mut value = f.value(&x);
    if value == f64::NEG_INFINITY {
        return Err(Error::Infeasible);
    }
    let mut trace = vec![value];
    let mut pseudo_inverse = false;
    let mut grad_norm;
    let mut iterations = 0;
    let stop = loop {
        let (grad, hess) = f.gradient_hessian(&x).ok_or(Error::Infeasible)?;
        if !(grad.iter().all(|g| g.is_finite()) && hess.iter().all(|h| h.is_finite())) {
            grad_norm = f64::NAN;
            break StopReason::Degenerate;
        }
        let Some((delta, g_active, used_pinv)) = newton_direction(&grad, &hess) else {
            grad_norm = f64::NAN;
            break StopReason::Degenerate;
        };
        grad_norm = g_active.norm();
        if grad_norm <= params.grad_tol {
            break StopReason::GradientNorm;
        }
        if iterations >= params.max_iter {
            break StopReason::MaxIterations;
        }
        pseudo_inverse |= used_pinv;
        let decrement2 = grad.dot(&delta);
        if !(decrement2 > 0.0) {
            break StopReason::LineSearch;
        }
        if decrement2 / 2.0 <= params.decrement_tol {
            break StopReason::Decrement;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = x.iter().zip(delta.iter()).map(|(xi, di)| xi + step * di).collect();
            let v = f.value(&candidate);
            if v.is_finite() && v > value && v >= value + params.armijo * step * decrement2 {
                accepted = Some((candidate, v));
                break;
            }
            step *= params.backtrack;
        }
        match accepted {
            Some((candidate, v)) => {
                x = candidate;
                value = v;
                iterations += 1;
                trace.push(v);
            }
            None => break StopReason::LineSearch,
        }
    };
    Ok(NewtonResult {
        x,
        value,
        iterations,
        grad_norm,
        pseudo_inverse,
        stop,
        trace,
    })
}
