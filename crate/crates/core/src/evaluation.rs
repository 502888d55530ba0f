//! Regression metrics, k-fold splitting, and cross-validation.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{Predictor, Regressor};
use crate::{rng, stats};

/// z-value of the two-sided 95% normal interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when some target is zero.
    pub mape_percent: Option<f64>,
    pub explained_variance: f64,
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: yhat.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::InvalidArgument("metrics need at least two observations".into()));
    }
    Ok(())
}

/// 1 − SS_res / SS_tot. A constant target scores 1 on an exact fit, else 0.
pub fn r2_score(y: &[f64], yhat: &[f64]) -> f64 {
    let m = stats::mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    one_minus_ratio(ss_res, ss_tot)
}

fn one_minus_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - num / den
    }
}

pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroTarget(i));
    }
    Ok(100.0 * y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / y.len() as f64)
}

pub fn compute_metrics(y: &[f64], yhat: &[f64]) -> Result<MetricsBundle> {
    check_lengths(y, yhat)?;
    let n = y.len() as f64;
    let res: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| a - b).collect();
    let mse = res.iter().map(|r| r * r).sum::<f64>() / n;
    let mae = res.iter().map(|r| r.abs()).sum::<f64>() / n;
    Ok(MetricsBundle {
        r2: r2_score(y, yhat),
        rmse: mse.sqrt(),
        mae,
        mape_percent: mape(y, yhat).ok(),
        explained_variance: one_minus_ratio(stats::variance(&res), stats::variance(y)),
    })
}

/// Shuffled partition of `0..n` into `k` validation folds whose sizes
/// differ by at most one (the first `n % k` folds are larger).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Training rows for a fold: everything not in `validation`, in parent order.
pub fn complement(n: usize, validation: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in validation {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the fold scores.
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl CvResult {
    pub fn from_scores(fold_scores: Vec<f64>) -> Result<Self> {
        if fold_scores.len() < 2 {
            return Err(Error::InvalidArgument("a CV summary needs at least two folds".into()));
        }
        let mean = stats::mean(&fold_scores);
        let std = stats::std_dev(&fold_scores);
        Ok(CvResult {
            ci_low: mean - CI_Z * std,
            ci_high: mean + CI_Z * std,
            fold_scores,
            mean,
            std,
        })
    }
}

/// Fits `regressor` on each fold's training part and scores R² on its
/// validation part. Folds run in parallel; scores come back in fold order.
pub fn cross_validate<R: Regressor>(regressor: &R, ds: &Dataset, k: usize, seed: u64) -> Result<CvResult> {
    Ok(cross_validate_with_models(regressor, ds, k, seed)?.0)
}

/// [`cross_validate`] that also returns each fold's fitted predictor.
pub fn cross_validate_with_models<R: Regressor>(
    regressor: &R,
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<(CvResult, Vec<R::Fitted>)> {
    let folds = kfold_indices(ds.n_rows(), k, seed)?;
    let outcomes: Vec<Result<(f64, R::Fitted)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, val)| {
            score_fold(regressor, ds, val, f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect();
    let mut scores = Vec::with_capacity(k);
    let mut fitted = Vec::with_capacity(k);
    for o in outcomes {
        let (s, m) = o?;
        scores.push(s);
        fitted.push(m);
    }
    Ok((CvResult::from_scores(scores)?, fitted))
}

fn score_fold<R: Regressor>(regressor: &R, ds: &Dataset, val: &[usize], f: usize) -> Result<(f64, R::Fitted)> {
    let train_rows = complement(ds.n_rows(), val);
    let train = ds.select_rows(&train_rows, &format!("fold{f}:train"));
    let valid = ds.select_rows(val, &format!("fold{f}:valid"));
    let model = regressor.fit(&train)?;
    let pred: Array1<f64> = model.predict(&valid)?;
    let y = valid.y().to_vec();
    Ok((r2_score(&y, &pred.to_vec()), model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_mean_predictions() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.r2, m.rmse, m.mae, m.mape_percent), (1.0, 0.0, 0.0, Some(0.0)));
        let mean = [3.5; 4];
        assert_eq!(compute_metrics(&y, &mean).unwrap().r2, 0.0);
    }

    #[test]
    fn hand_computed_metrics() {
        // SS_res = 1, SS_tot = 2
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.r2, 0.5);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - 1.0 / 3.0f64.sqrt()).abs() < 1e-15);
        assert!(m.rmse >= m.mae);
        let m = compute_metrics(&[1.0, 2.0], &[1.1, 1.8]).unwrap();
        assert!((m.mape_percent.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_target_only_drops_mape() {
        let m = compute_metrics(&[0.0, 2.0], &[0.5, 2.0]).unwrap();
        assert_eq!(m.mape_percent, None);
        assert!(m.rmse > 0.0);
        assert!(matches!(mape(&[0.0, 2.0], &[0.5, 2.0]), Err(Error::ZeroTarget(0))));
    }

    #[test]
    fn explained_variance_identity() {
        // r2 = ev − n·mean(res)²/SS_tot
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let yhat = [1.5, 2.5, 2.5, 4.0, 3.0];
        let m = compute_metrics(&y, &yhat).unwrap();
        let res: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
        let mr = stats::mean(&res);
        let ss_tot: f64 = y.iter().map(|v| (v - 3.0) * (v - 3.0)).sum();
        assert!((m.r2 - (m.explained_variance - 5.0 * mr * mr / ss_tot)).abs() < 1e-12);
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_indices(3000, 10, 42).unwrap();
        assert!(folds.iter().all(|f| f.len() == 300));
        let folds = kfold_indices(10, 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));
        let folds = kfold_indices(23, 5, 7).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert_eq!(kfold_indices(23, 5, 7).unwrap(), folds);
        assert!(matches!(kfold_indices(3, 4, 0), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn reference_fold_scores_summary() {
        let scores = vec![0.719, 0.699, 0.730, 0.678, 0.612, 0.737, 0.677, 0.732, 0.737, 0.707];
        let cv = CvResult::from_scores(scores).unwrap();
        let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
        assert_eq!(r3(cv.mean), 0.703);
        assert_eq!(r3(cv.std), 0.037);
        assert_eq!((r3(cv.ci_low), r3(cv.ci_high)), (0.630, 0.775));
    }

    #[test]
    fn identical_folds_have_zero_width() {
        let cv = CvResult::from_scores(vec![0.5; 4]).unwrap();
        assert_eq!((cv.mean, cv.std, cv.ci_low, cv.ci_high), (0.5, 0.0, 0.5, 0.5));
    }
}
