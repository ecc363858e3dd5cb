//! Exponential-sum reconstruction and polynomial approximation after the
//! change of variable `y = exp(-alpha t)`.
//!
//! A polynomial `sum_m c_m y^m` on `y in [exp(-alpha T), 1]` is an exponential
//! sum `sum_m c_m exp(-m alpha t)` on `t in [0, T]`, so any polynomial
//! approximation scheme in `y` yields an exponential-sum approximation in `t`.

use crate::error::{Error, Result};
use crate::model::ExpSumModel;

/// Largest supported approximation order; monomial expansion loses too many
/// digits beyond this.
pub const MAX_ORDER: usize = 30;

/// Evaluate source slot `u` (0 = background) of target `v` at lag/time `t`.
pub fn reconstruct(model: &ExpSumModel, v: usize, u: usize, t: f64) -> f64 {
    let shift = if u == 0 { 0 } else { 1 };
    let alpha = model.alpha();
    (0..model.k())
        .map(|j| model.get(v, u, j) * (-((j + shift) as f64) * alpha * t).exp())
        .sum()
}

/// Evaluate `sum_m coeffs[m] * exp(-m alpha t)`.
pub fn eval_exp_sum(coeffs: &[f64], alpha: f64, t: f64) -> f64 {
    let y = (-alpha * t).exp();
    coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
}

/// How the order-`K` polynomial in `y` is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApproxScheme {
    /// Interpolation at Chebyshev nodes: near-best uniform approximation,
    /// attaining the `O(K^-r)` and geometric rates of best approximation.
    #[default]
    Chebyshev,
    /// The classical Bernstein operator `sum_j f(j/K) b_{j,K}(z)`; converges
    /// for every continuous `f` but saturates at `O(1/K)`.
    BernsteinOperator,
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expand `sum_m p[m] z^m` with `z = scale * y + offset` into monomials of `y`.
fn affine_substitute(p: &[f64], scale: f64, offset: f64) -> Vec<f64> {
    let n = p.len();
    let mut out: Vec<Kahan> = (0..n).map(|_| Kahan::default()).collect();
    for (m, &pm) in p.iter().enumerate() {
        for (l, acc) in out.iter_mut().enumerate().take(m + 1) {
            acc.add(pm * binomial(m, l) * scale.powi(l as i32) * offset.powi((m - l) as i32));
        }
    }
    out.into_iter().map(|k| k.sum).collect()
}

/// Monomial coefficients `c_0..c_K` (in `y = exp(-alpha t)`) of an order-`K`
/// polynomial approximation of `f` on `t in [0, t_max]`.
pub fn bernstein_coefficients<F: Fn(f64) -> f64>(
    f: F,
    k: usize,
    alpha: f64,
    t_max: f64,
    scheme: ApproxScheme,
) -> Result<Vec<f64>> {
    if k == 0 || k > MAX_ORDER {
        return Err(Error::InvalidConfig(format!("order K = {k} must lie in 1..={MAX_ORDER}")));
    }
    if !(alpha > 0.0 && alpha.is_finite() && t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {alpha} and t_max = {t_max} must be positive and finite"
        )));
    }
    let lo = (-alpha * t_max).exp();
    let width = 1.0 - lo;
    let at = |y: f64| -> Result<f64> {
        let v = f(-y.ln() / alpha);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("function is not finite at t = {}", -y.ln() / alpha)))
        }
    };
    match scheme {
        ApproxScheme::BernsteinOperator => {
            // sum_j f_j C(K,j) z^j (1-z)^(K-j), z = (y - lo) / width
            let values = (0..=k)
                .map(|j| at(lo + width * j as f64 / k as f64))
                .collect::<Result<Vec<_>>>()?;
            let mut in_z = Vec::with_capacity(k + 1);
            for m in 0..=k {
                let mut acc = Kahan::default();
                for (j, fj) in values.iter().enumerate().take(m + 1) {
                    let sign = if (m - j) % 2 == 0 { 1.0 } else { -1.0 };
                    acc.add(sign * fj * binomial(k, j) * binomial(k - j, m - j));
                }
                in_z.push(acc.sum);
            }
            Ok(affine_substitute(&in_z, 1.0 / width, -lo / width))
        }
        ApproxScheme::Chebyshev => {
            let n = k + 1;
            let nodes: Vec<f64> = (0..n)
                .map(|i| (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .collect();
            let values = nodes
                .iter()
                .map(|x| at(lo + 0.5 * width * (x + 1.0)))
                .collect::<Result<Vec<_>>>()?;
            // Chebyshev series coefficients by the discrete cosine transform.
            let cheb: Vec<f64> = (0..n)
                .map(|m| {
                    let s: f64 = (0..n)
                        .map(|i| {
                            values[i] * (std::f64::consts::PI * (m * (2 * i + 1)) as f64 / (2 * n) as f64).cos()
                        })
                        .sum();
                    let c = 2.0 * s / n as f64;
                    if m == 0 {
                        0.5 * c
                    } else {
                        c
                    }
                })
                .collect();
            // T_m as monomials in x, accumulated into the series.
            let mut in_x: Vec<Kahan> = (0..n).map(|_| Kahan::default()).collect();
            let mut prev = vec![0.0; n];
            let mut cur = vec![0.0; n];
            prev[0] = 1.0;
            if n > 1 {
                cur[1] = 1.0;
            }
            for (m, cm) in cheb.iter().enumerate() {
                let tm = if m == 0 { &prev } else { &cur };
                for (acc, t) in in_x.iter_mut().zip(tm) {
                    acc.add(cm * t);
                }
                if m >= 1 && m + 1 < n {
                    let mut next = vec![0.0; n];
                    for i in 0..n - 1 {
                        next[i + 1] += 2.0 * cur[i];
                    }
                    for i in 0..n {
                        next[i] -= prev[i];
                    }
                    prev = std::mem::replace(&mut cur, next);
                }
            }
            let in_x: Vec<f64> = in_x.into_iter().map(|k| k.sum).collect();
            // x = (2y - (1 + lo)) / width
            Ok(affine_substitute(&in_x, 2.0 / width, -(1.0 + lo) / width))
        }
    }
}

/// Uniform-grid sup-norm distance between `f` and the exponential sum with
/// `coeffs` over `[0, t_max]`.
pub fn sup_norm_error<F: Fn(f64) -> f64>(f: F, coeffs: &[f64], alpha: f64, t_max: f64, points: usize) -> f64 {
    (0..points)
        .map(|i| {
            let t = t_max * i as f64 / (points - 1) as f64;
            (f(t) - eval_exp_sum(coeffs, alpha, t)).abs()
        })
        .fold(0.0, f64::max)
}
