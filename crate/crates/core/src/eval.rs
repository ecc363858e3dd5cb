//! Kernel recovery (Diff) and type prediction (Pred) metrics.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{event_intensities, ExpSumModel, GroundTruthModel, IntensityModel};
use crate::quadrature::trapezoid;

/// Pairs whose squared norms are both below this contribute nothing.
const NEGLIGIBLE: f64 = 1e-15;

fn normalized_l2<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(f: F, g: G, t_max: f64, points: usize) -> f64 {
    let n = points;
    let num = trapezoid(|t| (f(t) - g(t)).powi(2), 0.0, t_max, n);
    let ff = trapezoid(|t| f(t).powi(2), 0.0, t_max, n);
    let gg = trapezoid(|t| g(t).powi(2), 0.0, t_max, n);
    if ff < NEGLIGIBLE && gg < NEGLIGIBLE {
        0.0
    } else {
        num / (ff + gg)
    }
}

fn check_diff_args(d_true: usize, d_fit: usize, t_max: f64, points: usize) -> Result<()> {
    if d_true != d_fit {
        return Err(Error::InvalidConfig(format!("dimension mismatch: {d_true} vs {d_fit}")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) || points < 2 {
        return Err(Error::InvalidConfig("Diff needs t_max > 0 and at least 2 points".into()));
    }
    Ok(())
}

/// Mean over all `d^2` kernel pairs of
/// `int (g_hat - g)^2 / (int g_hat^2 + int g^2)` on `[0, t_max]`, by the
/// trapezoid rule on `points` equispaced nodes.
pub fn diff_score(truth: &GroundTruthModel, fitted: &ExpSumModel, t_max: f64, points: usize) -> Result<f64> {
    let d = truth.d;
    check_diff_args(d, fitted.d(), t_max, points)?;
    let total: f64 = (0..d * d)
        .into_par_iter()
        .map(|i| {
            let (v, u) = (i / d, i % d);
            normalized_l2(|t| truth.kernels[v][u].value(t), |t| fitted.kernel(v, u, t), t_max, points)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / (d * d) as f64)
}

/// The same normalized distance between `mu_v` and `mu_hat_v`, averaged over `v`.
pub fn background_diff(truth: &GroundTruthModel, fitted: &ExpSumModel, t_max: f64, points: usize) -> Result<f64> {
    let d = truth.d;
    check_diff_args(d, fitted.d(), t_max, points)?;
    let total: f64 = (0..d)
        .map(|v| normalized_l2(|t| truth.backgrounds[v].value(t), |t| fitted.background(v, t), t_max, points))
        .sum();
    Ok(total / d as f64)
}

/// Area under the ROC curve, `P(s+ > s-) + P(s+ = s-) / 2`, from mid-ranks.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidData("labels and scores differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidData("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidData("AUC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Per-event type probabilities `lambda_u / sum_v lambda_v` under `model`
/// given the observed past, flattened `N x d` in dataset order, and the
/// number of events where every rate was zero (set to uniform).
pub fn type_probabilities<M: IntensityModel + ?Sized>(model: &M, test: &Dataset) -> (Vec<f64>, usize) {
    let d = model.dim();
    let parts: Vec<(Vec<f64>, usize)> = test
        .realizations()
        .par_iter()
        .map(|r| {
            let mut rates = event_intensities(model, r);
            let mut uniform = 0;
            for row in rates.chunks_mut(d) {
                let total: f64 = row.iter().sum();
                if total > 0.0 && total.is_finite() {
                    row.iter_mut().for_each(|x| *x /= total);
                } else {
                    row.iter_mut().for_each(|x| *x = 1.0 / d as f64);
                    uniform += 1;
                }
            }
            (rates, uniform)
        })
        .collect();
    let uniform = parts.iter().map(|p| p.1).sum();
    (parts.into_iter().flat_map(|p| p.0).collect(), uniform)
}

fn per_dimension_auc(labels: &[usize], probs: &[f64], d: usize) -> Vec<Option<f64>> {
    (0..d)
        .into_par_iter()
        .map(|u| {
            let l: Vec<bool> = labels.iter().map(|&k| k == u).collect();
            let s: Vec<f64> = probs.chunks(d).map(|row| row[u]).collect();
            auc(&l, &s).ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredResult {
    /// Excess-AUC ratio against the truth, or the mean AUC without one.
    pub score: f64,
    /// Per-dimension AUC of the scored model; `None` where undefined.
    pub auc: Vec<Option<f64>>,
    pub true_auc: Option<Vec<Option<f64>>>,
    /// Test events at which the scored model predicted no activity.
    pub uniform_events: usize,
}

/// Type-prediction score of `model` on `test`. With a ground truth the
/// score is `sum_u (AUC_u - 1/2) / sum_u (AUC_u^true - 1/2)`; without one
/// it is the mean AUC. Dimensions without positives or negatives are dropped.
pub fn pred_score<M: IntensityModel + ?Sized>(model: &M, test: &Dataset, truth: Option<&GroundTruthModel>) -> Result<PredResult> {
    let d = test.d();
    if model.dim() != d {
        return Err(Error::InvalidConfig(format!(
            "model has d = {}, test data has d = {d}",
            model.dim()
        )));
    }
    let labels: Vec<usize> = test.realizations().iter().flat_map(|r| r.events.iter().map(|e| e.kind)).collect();
    let (probs, uniform_events) = type_probabilities(model, test);
    let aucs = per_dimension_auc(&labels, &probs, d);
    if aucs.iter().all(Option::is_none) {
        return Err(Error::InvalidData("no dimension has both positive and negative test events".into()));
    }
    match truth {
        None => {
            let kept: Vec<f64> = aucs.iter().flatten().copied().collect();
            Ok(PredResult {
                score: kept.iter().sum::<f64>() / kept.len() as f64,
                auc: aucs,
                true_auc: None,
                uniform_events,
            })
        }
        Some(truth) => {
            if truth.d != d {
                return Err(Error::InvalidConfig("truth dimension differs from test data".into()));
            }
            let (true_probs, _) = type_probabilities(truth, test);
            let true_aucs = per_dimension_auc(&labels, &true_probs, d);
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, b) in aucs.iter().zip(&true_aucs) {
                if let (Some(a), Some(b)) = (a, b) {
                    num += a - 0.5;
                    den += b - 0.5;
                }
            }
            Ok(PredResult {
                score: num / den,
                auc: aucs,
                true_auc: Some(true_aucs),
                uniform_events,
            })
        }
    }
}

/// Summary over repeated seeds with the best and worst run removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Trimmed {
    pub mean: f64,
    /// Smallest and largest retained values.
    pub low: f64,
    pub high: f64,
    pub kept: usize,
}

/// Drop the minimum and maximum (when at least three values are finite),
/// then summarize the rest. Non-finite values are ignored.
pub fn trimmed(values: &[f64]) -> Option<Trimmed> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let kept = if v.len() >= 3 { &v[1..v.len() - 1] } else { &v[..] };
    Some(Trimmed {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        low: kept[0],
        high: kept[kept.len() - 1],
        kept: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Background, Kernel};

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[true, false, true, false], &[0.9, 0.8, 0.4, 0.1]).unwrap(), 0.75);
        assert_eq!(auc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[true, false, false], &[0.3, 0.3, 0.3]).unwrap(), 0.5);
        assert!(auc(&[true, true], &[0.1, 0.2]).is_err());
    }

    fn in_class() -> (GroundTruthModel, ExpSumModel) {
        let m = ExpSumModel::from_coeffs(1, 2, 1.0, vec![1.0, 0.5, 0.4, -0.2]).unwrap();
        (GroundTruthModel::from_expsum(&m), m)
    }

    #[test]
    fn diff_examples() {
        let (truth, fitted) = in_class();
        assert!(diff_score(&truth, &fitted, 10.0, 1000).unwrap() < 1e-15);
        let zero = ExpSumModel::zeros(1, 2, 1.0).unwrap();
        assert!((diff_score(&truth, &zero, 10.0, 1000).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = fitted.coeffs().iter().map(|c| -c).collect();
        let neg = ExpSumModel::from_coeffs(1, 2, 1.0, neg).unwrap();
        assert!((diff_score(&truth, &neg, 10.0, 1000).unwrap() - 2.0).abs() < 1e-12);
        let zero_truth = GroundTruthModel::new(vec![Background::Constant { rate: 1.0 }], vec![vec![Kernel::Zero]]).unwrap();
        assert_eq!(diff_score(&zero_truth, &zero, 10.0, 1000).unwrap(), 0.0);
        assert!(diff_score(&truth, &ExpSumModel::zeros(2, 1, 1.0).unwrap(), 10.0, 1000).is_err());
    }

    #[test]
    fn trimmed_drops_extremes() {
        let t = trimmed(&[5.0, 1.0, 2.0, 3.0, 100.0]).unwrap();
        assert_eq!(t.mean, 10.0 / 3.0);
        assert_eq!((t.low, t.high, t.kept), (2.0, 5.0, 3));
        assert_eq!(trimmed(&[1.0, 2.0]).unwrap().kept, 2);
        assert!(trimmed(&[f64::NAN]).is_none());
    }
}
