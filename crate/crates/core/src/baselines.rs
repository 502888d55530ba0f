//! Linear least squares, ridge, and k-nearest-neighbour baselines.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Estimator, Model};

/// Relative threshold on the diagonal of R below which a column is treated
/// as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                found: x.ncols(),
            });
        }
        Ok(x.dot(&Array1::from(self.coefficients.clone())) + self.intercept)
    }
}

fn check_xy(x: &Array2<f64>, y: &Array1<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("baseline training data"));
    }
    Ok(())
}

pub fn ols_fit(x: &Array2<f64>, y: &Array1<f64>) -> Result<LinearModel> {
    check_xy(x, y)?;
    if x.nrows() <= x.ncols() {
        return Err(Error::SingularSystem);
    }
    solve_least_squares(x, y, 0.0)
}

/// Minimizes ‖y − Xw − b‖² + λ‖w‖² with the intercept unpenalized.
pub fn ridge_fit(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<LinearModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    solve_least_squares(x, y, lambda)
}

/// Centres the data, then solves the augmented system [Xc; √λ I] w = [yc; 0]
/// by Householder QR.
fn solve_least_squares(x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<LinearModel> {
    let (n, d) = x.dim();
    let x_mean = x.mean_axis(Axis(0)).expect("non-empty");
    let y_mean = y.mean().expect("non-empty");
    let rows = n + if lambda > 0.0 { d } else { 0 };
    if rows < d {
        return Err(Error::SingularSystem);
    }
    let sl = lambda.sqrt();
    let a = DMatrix::from_fn(rows, d, |i, j| {
        if i < n {
            x[[i, j]] - x_mean[j]
        } else if i - n == j {
            sl
        } else {
            0.0
        }
    });
    let b = DVector::from_fn(rows, |i, _| if i < n { y[i] - y_mean } else { 0.0 });
    let qr = a.qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if rmax == 0.0 || r.diagonal().iter().any(|v| v.abs() <= RANK_TOL * rmax) {
        return Err(Error::SingularSystem);
    }
    let qtb = qr.q().transpose() * b;
    let w = r.solve_upper_triangular(&qtb).ok_or(Error::SingularSystem)?;
    let coefficients: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - coefficients.iter().zip(x_mean.iter()).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        coefficients,
        intercept,
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub k: usize,
}

pub fn knn_fit(x: &Array2<f64>, y: &Array1<f64>, k: usize) -> Result<KnnModel> {
    check_xy(x, y)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > x.nrows() {
        return Err(Error::KTooLarge { k, n: x.nrows() });
    }
    Ok(KnnModel {
        x: x.clone(),
        y: y.clone(),
        k,
    })
}

/// Mean target of the `k` nearest training rows by Euclidean distance;
/// equal distances prefer the lower training index.
pub fn knn_predict(m: &KnnModel, x: &Array2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != m.x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.x.ncols(),
            found: x.ncols(),
        });
    }
    let preds: Vec<f64> = (0..x.nrows())
        .into_par_iter()
        .map(|qi| {
            let q = x.row(qi);
            let mut dist: Vec<(f64, usize)> = m
                .x
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if m.k < dist.len() {
                dist.select_nth_unstable_by(m.k - 1, cmp);
            }
            dist[..m.k].iter().map(|&(_, i)| m.y[i]).sum::<f64>() / m.k as f64
        })
        .collect();
    Ok(Array1::from(preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ols;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub lambda: f64,
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
}

impl Default for Knn {
    fn default() -> Self {
        Knn { k: 5 }
    }
}

impl Model for LinearModel {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        LinearModel::predict(self, x)
    }
}

impl Model for KnnModel {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        knn_predict(self, x)
    }
}

impl Estimator for Ols {
    type Model = LinearModel;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<LinearModel> {
        ols_fit(x, y)
    }
}

impl Estimator for Ridge {
    type Model = LinearModel;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<LinearModel> {
        ridge_fit(x, y, self.lambda)
    }
}

impl Estimator for Knn {
    type Model = KnnModel;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<KnnModel> {
        knn_fit(x, y, self.k)
    }
}
