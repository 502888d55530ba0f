//! ε-support vector regression trained by sequential minimal optimization.
//!
//! The dual is solved in the usual 2n-variable form: for each training row i
//! there is a pair (α_i, α_i*) with 0 ≤ α, α* ≤ C, and the fitted function is
//! f(x) = Σ β_i K(x_i, x) + b with β_i = α_i − α_i*. Variables s < n carry
//! sign +1 (α_i), variables s ≥ n carry sign −1 (α*_{s−n}), so the problem is
//!
//! ```text
//! min ½ aᵀQa + pᵀa   s.t.  Σ sign_s a_s = 0,  0 ≤ a_s ≤ C
//! Q_st = sign_s sign_t K(x_{s mod n}, x_{t mod n})
//! p_s  = ε − y_i (s < n),   ε + y_i (s ≥ n)
//! ```
//!
//! Each iteration updates the maximal-violating variable together with the
//! partner giving the largest second-order decrease of the objective.
//! Bound-pinned variables that cannot re-enter the working set are shrunk
//! periodically; the full gradient is rebuilt before convergence is declared.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelCache, KernelSpec, ResolvedKernel};

/// Hard cap on pair updates when `max_iter` is unset.
pub const SAFETY_MAX_ITER: u64 = 10_000_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    /// Stopping threshold on the maximal violating-pair gap.
    pub tol: f64,
    /// `None` means the safety cap [`SAFETY_MAX_ITER`].
    pub max_iter: Option<u64>,
    pub shrinking: bool,
    pub cache_mb: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 1.0,
            epsilon: 0.1,
            kernel: KernelSpec::rbf(crate::kernel::Gamma::Scale),
            tol: 1e-3,
            max_iter: None,
            shrinking: true,
            cache_mb: 500,
        }
    }
}

impl SvrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::ConfigInvalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::ConfigInvalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::ConfigInvalid(format!("tol must be positive, got {}", self.tol)));
        }
        self.kernel.validate()
    }

    fn iteration_cap(&self) -> u64 {
        self.max_iter.unwrap_or(SAFETY_MAX_ITER).min(SAFETY_MAX_ITER)
    }
}

/// Fitted dual solution. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub params: SvrParams,
    pub kernel: ResolvedKernel,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    pub support_rows: Array2<f64>,
    /// β_i = α_i − α_i* of each support vector, all nonzero and within [−C, C].
    pub beta: Vec<f64>,
    pub bias: f64,
    pub dual_objective: f64,
    pub n_iterations: u64,
    /// False when the iteration cap stopped the solver before the gap fell below tol.
    pub converged: bool,
}

impl SvrModel {
    pub fn n_features(&self) -> usize {
        self.support_rows.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.beta.len()
    }

    /// β over all `n` training rows (zeros for non-support rows).
    pub fn full_beta(&self, n: usize) -> Vec<f64> {
        let mut b = vec![0.0; n];
        for (&i, &v) in self.support_indices.iter().zip(&self.beta) {
            b[i] = v;
        }
        b
    }

    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.support_rows
            .rows()
            .into_iter()
            .zip(&self.beta)
            .map(|(sv, &b)| b * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        svr_predict(self, x)
    }
}

/// f(x) = Σ β_i K(x_i, x) + b for every row of `x`.
pub fn svr_predict(model: &SvrModel, x: &Array2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            found: x.ncols(),
        });
    }
    Ok(x.rows().into_iter().map(|r| model.predict_row(r)).collect())
}

pub fn svr_fit(x: &Array2<f64>, y: &Array1<f64>, params: &SvrParams) -> Result<SvrModel> {
    Ok(fit_impl(x, y, params, false)?.0)
}

/// Like [`svr_fit`], also returning the dual objective after every pair update.
pub fn svr_fit_traced(x: &Array2<f64>, y: &Array1<f64>, params: &SvrParams) -> Result<(SvrModel, Vec<f64>)> {
    fit_impl(x, y, params, true)
}

fn fit_impl(x: &Array2<f64>, y: &Array1<f64>, params: &SvrParams, trace: bool) -> Result<(SvrModel, Vec<f64>)> {
    params.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("feature matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("target"));
    }
    let kernel = params.kernel.resolve(x)?;
    let mut smo = Smo::new(x, y, &kernel, params);
    smo.trace = trace.then(Vec::new);
    let converged = smo.solve();
    if !converged {
        log::warn!(
            "SMO stopped after {} iterations with gap {:.3e} (tol {:.1e})",
            smo.iterations,
            smo.gap(),
            params.tol
        );
    }
    let bias = smo.bias();
    let objective = smo.objective();
    let n = smo.n;
    let beta_full: Vec<f64> = (0..n).map(|i| smo.alpha[i] - smo.alpha[i + n]).collect();
    let support_indices: Vec<usize> = (0..n).filter(|&i| beta_full[i] != 0.0).collect();
    let beta = support_indices.iter().map(|&i| beta_full[i]).collect();
    let trace = smo.trace.take().unwrap_or_default();
    Ok((
        SvrModel {
            params: *params,
            kernel,
            support_rows: x.select(Axis(0), &support_indices),
            support_indices,
            beta,
            bias,
            dual_objective: objective,
            n_iterations: smo.iterations,
            converged,
        },
        trace,
    ))
}

/// ½ βᵀKβ + ε Σ(α_i + α_i*) − yᵀβ, with α = max(β, 0), α* = max(−β, 0).
pub fn dual_objective(beta: &[f64], k: &Array2<f64>, y: &[f64], epsilon: f64) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        if beta[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += beta[i] * k[[i, j]] * beta[j];
        }
    }
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let lin: f64 = beta.iter().zip(y).map(|(b, y)| b * y).sum();
    0.5 * quad + epsilon * l1 - lin
}

/// Optimality audit of a fitted model against its training data: the
/// maximal violating-pair gap, or the largest box / equality violation of
/// β if that is larger.
pub fn kkt_violation(model: &SvrModel, x: &Array2<f64>, y: &Array1<f64>, params: &SvrParams) -> f64 {
    let n = x.nrows();
    let beta = model.full_beta(n);
    let c = params.c;
    // f_i − b
    let kb: Vec<f64> = (0..n)
        .map(|i| {
            model
                .support_indices
                .iter()
                .zip(&model.beta)
                .map(|(&j, &b)| b * model.kernel.eval_unchecked(x.row(j), x.row(i)))
                .sum()
        })
        .collect();
    let mut up = f64::NEG_INFINITY; // max of −sign·G over I_up
    let mut low = f64::NEG_INFINITY; // max of sign·G over I_low
    for i in 0..n {
        let a = beta[i].max(0.0);
        let a_star = (-beta[i]).max(0.0);
        let g_pos = kb[i] + params.epsilon - y[i]; // sign +1
        let g_neg = -kb[i] + params.epsilon + y[i]; // sign −1
        if a < c {
            up = up.max(-g_pos);
        }
        if a > 0.0 {
            low = low.max(g_pos);
        }
        if a_star > 0.0 {
            up = up.max(g_neg);
        }
        if a_star < c {
            low = low.max(-g_neg);
        }
    }
    let gap = if up.is_finite() && low.is_finite() { up + low } else { 0.0 };
    let box_violation = beta.iter().map(|b| (b.abs() - c).max(0.0)).fold(0.0, f64::max);
    let sum_violation = beta.iter().sum::<f64>().abs();
    gap.max(box_violation).max(sum_violation)
}

struct Smo<'a> {
    n: usize,
    x: &'a Array2<f64>,
    kernel: &'a ResolvedKernel,
    c: f64,
    tol: f64,
    shrinking: bool,
    max_iter: u64,
    cache: KernelCache,
    /// K(x_i, x_i)
    diag: Vec<f64>,
    p: Vec<f64>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    active: Vec<bool>,
    active_list: Vec<usize>,
    unshrink: bool,
    iterations: u64,
    objective_running: f64,
    trace: Option<Vec<f64>>,
}

impl<'a> Smo<'a> {
    fn new(x: &'a Array2<f64>, y: &Array1<f64>, kernel: &'a ResolvedKernel, params: &SvrParams) -> Self {
        let n = x.nrows();
        let diag = x.rows().into_iter().map(|r| kernel.eval_unchecked(r, r)).collect();
        let mut p = Vec::with_capacity(2 * n);
        p.extend(y.iter().map(|&v| params.epsilon - v));
        p.extend(y.iter().map(|&v| params.epsilon + v));
        Smo {
            n,
            x,
            kernel,
            c: params.c,
            tol: params.tol,
            shrinking: params.shrinking,
            max_iter: params.iteration_cap(),
            cache: KernelCache::with_megabytes(n, params.cache_mb),
            diag,
            grad: p.clone(),
            p,
            alpha: vec![0.0; 2 * n],
            active: vec![true; 2 * n],
            active_list: (0..2 * n).collect(),
            unshrink: false,
            iterations: 0,
            objective_running: 0.0,
            trace: None,
        }
    }

    #[inline]
    fn sign(&self, s: usize) -> f64 {
        if s < self.n {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    fn row_of(&self, s: usize) -> usize {
        if s < self.n {
            s
        } else {
            s - self.n
        }
    }

    #[inline]
    fn at_upper(&self, s: usize) -> bool {
        self.alpha[s] >= self.c
    }

    #[inline]
    fn at_lower(&self, s: usize) -> bool {
        self.alpha[s] <= 0.0
    }

    /// In the "up" set: sign·a can still increase.
    #[inline]
    fn in_up(&self, s: usize) -> bool {
        if s < self.n {
            !self.at_upper(s)
        } else {
            !self.at_lower(s)
        }
    }

    #[inline]
    fn in_low(&self, s: usize) -> bool {
        if s < self.n {
            !self.at_lower(s)
        } else {
            !self.at_upper(s)
        }
    }

    fn krow(&mut self, i: usize) -> Rc<[f64]> {
        self.cache.get_row(i, self.x, self.kernel)
    }

    /// Returns true on convergence, false when the iteration cap was hit.
    fn solve(&mut self) -> bool {
        let l = 2 * self.n;
        let shrink_every = l.min(1000).max(1);
        let mut counter = shrink_every;
        loop {
            if self.iterations >= self.max_iter {
                if self.active_list.len() < l {
                    self.reconstruct_gradient();
                }
                return false;
            }
            counter -= 1;
            if counter == 0 {
                counter = shrink_every;
                if self.shrinking {
                    self.shrink();
                }
            }
            let pair = match self.select_working_set() {
                Some(pair) => pair,
                None => {
                    if self.active_list.len() == l {
                        return true;
                    }
                    self.reconstruct_gradient();
                    match self.select_working_set() {
                        Some(pair) => {
                            counter = 1;
                            pair
                        }
                        None => return true,
                    }
                }
            };
            self.iterations += 1;
            self.update_pair(pair.0, pair.1);
        }
    }

    /// Maximal violating variable plus second-order partner, or `None` when
    /// the gap over the active set is below tol.
    fn select_working_set(&mut self) -> Option<(usize, usize)> {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for &t in &self.active_list {
            if self.in_up(t) {
                let v = -self.sign(t) * self.grad[t];
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let i = i_sel?;
        let ki = self.krow(self.row_of(i));
        let ri = self.row_of(i);

        let mut gmax2 = f64::NEG_INFINITY;
        let mut best_obj = f64::INFINITY;
        let mut j_sel = None;
        for &t in &self.active_list {
            if !self.in_low(t) {
                continue;
            }
            let st = self.sign(t);
            let v = st * self.grad[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let rt = self.row_of(t);
                let mut quad = self.diag[ri] + self.diag[rt] - 2.0 * ki[rt];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < self.tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update_pair(&mut self, i: usize, j: usize) {
        let (ri, rj) = (self.row_of(i), self.row_of(j));
        let (si, sj) = (self.sign(i), self.sign(j));
        let ki = self.krow(ri);
        let kj = self.krow(rj);
        let c = self.c;
        let q_ij = si * sj * ki[rj];
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (gi, gj) = (self.grad[i], self.grad[j]);

        if si != sj {
            let mut quad = self.diag[ri] + self.diag[rj] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = old_i - old_j;
            let (mut ai, mut aj) = (old_i + delta, old_j + delta);
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        } else {
            let mut quad = self.diag[ri] + self.diag[rj] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = old_i + old_j;
            let (mut ai, mut aj) = (old_i - delta, old_j + delta);
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
            self.alpha[i] = ai;
            self.alpha[j] = aj;
        }

        let di = self.alpha[i] - old_i;
        let dj = self.alpha[j] - old_j;
        let q_ii = self.diag[ri];
        let q_jj = self.diag[rj];
        self.objective_running +=
            gi * di + gj * dj + 0.5 * (q_ii * di * di + q_jj * dj * dj) + q_ij * di * dj;
        if let Some(t) = self.trace.as_mut() {
            t.push(self.objective_running);
        }

        let n = self.n;
        let (ci, cj) = (si * di, sj * dj);
        for &t in &self.active_list {
            let (rt, st) = if t < n { (t, 1.0) } else { (t - n, -1.0) };
            self.grad[t] += st * (ci * ki[rt] + cj * kj[rt]);
        }
    }

    fn gap_bounds(&self, all: bool) -> (f64, f64) {
        let mut up = f64::NEG_INFINITY;
        let mut low = f64::NEG_INFINITY;
        let mut visit = |t: usize| {
            let sg = self.sign(t) * self.grad[t];
            if self.in_up(t) {
                up = up.max(-sg);
            }
            if self.in_low(t) {
                low = low.max(sg);
            }
        };
        if all {
            (0..2 * self.n).for_each(&mut visit);
        } else {
            self.active_list.iter().copied().for_each(&mut visit);
        }
        (up, low)
    }

    fn gap(&self) -> f64 {
        let (up, low) = self.gap_bounds(true);
        up + low
    }

    fn shrink(&mut self) {
        let (gmax1, gmax2) = self.gap_bounds(false);
        if !self.unshrink && gmax1 + gmax2 <= self.tol * 10.0 {
            self.unshrink = true;
            self.reconstruct_gradient();
        }
        let mut kept = Vec::with_capacity(self.active_list.len());
        for idx in 0..self.active_list.len() {
            let t = self.active_list[idx];
            let sg = self.sign(t) * self.grad[t];
            // a variable pinned at a bound that moves it out of I_up (or I_low)
            // and whose violation is dominated by the current extremes
            let shrink = if !self.in_up(t) {
                -sg > gmax1
            } else if !self.in_low(t) {
                sg > gmax2
            } else {
                false
            };
            if shrink {
                self.active[t] = false;
            } else {
                kept.push(t);
            }
        }
        self.active_list = kept;
    }

    /// Recomputes the gradient of inactive variables from scratch and
    /// reactivates everything.
    fn reconstruct_gradient(&mut self) {
        let l = 2 * self.n;
        if self.active_list.len() < l {
            let inactive: Vec<usize> = (0..l).filter(|&t| !self.active[t]).collect();
            for &t in &inactive {
                self.grad[t] = self.p[t];
            }
            let n = self.n;
            let rows_with_weight: Vec<(usize, f64)> = (0..n)
                .map(|i| (i, self.alpha[i] - self.alpha[i + n]))
                .filter(|&(_, b)| b != 0.0)
                .collect();
            for (r, b) in rows_with_weight {
                let kr = self.krow(r);
                for &t in &inactive {
                    let (rt, st) = if t < n { (t, 1.0) } else { (t - n, -1.0) };
                    self.grad[t] += st * b * kr[rt];
                }
            }
        }
        self.active.iter_mut().for_each(|a| *a = true);
        self.active_list = (0..l).collect();
    }

    fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut free_sum = 0.0;
        let mut n_free = 0usize;
        for t in 0..2 * self.n {
            let yg = self.sign(t) * self.grad[t];
            let positive = t < self.n;
            if self.at_upper(t) {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.at_lower(t) {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                free_sum += yg;
            }
        }
        let rho = if n_free > 0 {
            free_sum / n_free as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }

    fn objective(&self) -> f64 {
        0.5 * self
            .alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
    }
}

impl crate::pipeline::Model for SvrModel {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        SvrModel::predict(self, x)
    }
}

impl crate::pipeline::Estimator for SvrParams {
    type Model = SvrModel;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<SvrModel> {
        svr_fit(x, y, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Gamma, KernelKind};
    use ndarray::array;

    fn params(c: f64, eps: f64, kernel: KernelSpec) -> SvrParams {
        SvrParams {
            c,
            epsilon: eps,
            kernel,
            ..SvrParams::default()
        }
    }

    #[test]
    fn single_point_fits_bias_only() {
        let x = array![[0.3, -1.0]];
        let y = array![2.5];
        for kernel in [KernelSpec::linear(), KernelSpec::rbf(Gamma::Fixed(1.0))] {
            let m = svr_fit(&x, &y, &params(5.0, 0.1, kernel)).unwrap();
            assert_eq!(m.n_support(), 0);
            assert!((m.bias - 2.5).abs() < 1e-12);
            assert!((m.predict(&x).unwrap()[0] - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_points_linear_interpolation() {
        let x = array![[0.0], [1.0]];
        let y = array![0.0, 1.0];
        let m = svr_fit(&x, &y, &params(1e6, 0.0, KernelSpec::linear())).unwrap();
        let f = m.predict(&array![[0.5]]).unwrap()[0];
        assert!((f - 0.5).abs() < 1e-3, "f(0.5) = {f}");
        assert!(m.converged);
    }

    #[test]
    fn empty_model_predicts_bias() {
        let m = SvrModel {
            params: SvrParams::default(),
            kernel: ResolvedKernel {
                kind: KernelKind::Rbf,
                gamma: 1.0,
                coef0: 0.0,
                degree: 3,
            },
            support_indices: vec![],
            support_rows: Array2::zeros((0, 2)),
            beta: vec![],
            bias: 1.75,
            dual_objective: 0.0,
            n_iterations: 0,
            converged: true,
        };
        let p = m.predict(&array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(p.to_vec(), vec![1.75, 1.75]);
        let one_sv = SvrModel {
            support_indices: vec![0],
            support_rows: array![[1.0, 2.0]],
            beta: vec![1.0],
            ..m.clone()
        };
        assert_eq!(one_sv.predict(&array![[1.0, 2.0]]).unwrap()[0], 2.75);
        assert!(matches!(m.predict(&array![[1.0]]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_alpha_objective_is_zero() {
        let k = Array2::eye(3);
        assert_eq!(dual_objective(&[0.0; 3], &k, &[1.0, 2.0, 3.0], 0.1), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let x = array![[f64::NAN]];
        assert!(matches!(svr_fit(&x, &array![1.0], &SvrParams::default()), Err(Error::NonFiniteInput(_))));
        let p = SvrParams {
            c: 0.0,
            ..SvrParams::default()
        };
        assert!(svr_fit(&array![[1.0]], &array![1.0], &p).is_err());
    }

    fn wavy(n: usize) -> (Array2<f64>, Array1<f64>) {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 + 0.01 * i as f64);
        let y = x.rows().into_iter().map(|r| (r[0] * 1.3).sin() + 0.5 * r[1]).collect();
        (x, y)
    }

    #[test]
    fn gradient_stays_consistent_with_alphas() {
        let (x, y) = wavy(40);
        let p = params(3.0, 0.05, KernelSpec::rbf(Gamma::Fixed(0.7)));
        let kernel = p.kernel.resolve(&x).unwrap();
        let mut smo = Smo::new(&x, &y, &kernel, &p);
        assert!(smo.solve());
        let k = kernel.matrix(&x);
        let n = x.nrows();
        for s in 0..2 * n {
            let (rs, ss) = (smo.row_of(s), smo.sign(s));
            let fresh: f64 = smo.p[s]
                + (0..n)
                    .map(|t| ss * k[[rs, t]] * (smo.alpha[t] - smo.alpha[t + n]))
                    .sum::<f64>();
            assert!((fresh - smo.grad[s]).abs() < 1e-9, "s={s}: {fresh} vs {}", smo.grad[s]);
        }
    }

    #[test]
    fn shrinking_does_not_change_the_solution() {
        let (x, y) = wavy(120);
        let mut p = params(10.0, 0.1, KernelSpec::rbf(Gamma::Fixed(0.5)));
        let a = svr_fit(&x, &y, &p).unwrap();
        p.shrinking = false;
        let b = svr_fit(&x, &y, &p).unwrap();
        assert!((a.dual_objective - b.dual_objective).abs() < 1e-3 * a.dual_objective.abs().max(1.0));
        let pa = a.predict(&x).unwrap();
        let pb = b.predict(&x).unwrap();
        for (u, v) in pa.iter().zip(pb.iter()) {
            assert!((u - v).abs() < 1e-2);
        }
    }

    #[test]
    fn running_objective_matches_final() {
        let (x, y) = wavy(60);
        let p = params(2.0, 0.1, KernelSpec::rbf(Gamma::Fixed(1.0)));
        let (m, trace) = svr_fit_traced(&x, &y, &p).unwrap();
        let last = *trace.last().unwrap();
        assert!((last - m.dual_objective).abs() < 1e-8 * m.dual_objective.abs().max(1.0));
        let k = m.kernel.matrix(&x);
        let direct = dual_objective(&m.full_beta(x.nrows()), &k, y.as_slice().unwrap(), p.epsilon);
        assert!((direct - m.dual_objective).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let (x, y) = wavy(60);
        let p = SvrParams {
            max_iter: Some(1),
            ..params(10.0, 0.01, KernelSpec::rbf(Gamma::Fixed(1.0)))
        };
        let m = svr_fit(&x, &y, &p).unwrap();
        assert!(!m.converged);
        assert_eq!(m.n_iterations, 1);
        assert!(kkt_violation(&m, &x, &y, &p) >= p.tol);
    }

    #[test]
    fn box_violation_is_reported() {
        let x = array![[0.0], [1.0]];
        let y = array![0.0, 1.0];
        let p = params(1.0, 0.1, KernelSpec::linear());
        let m = SvrModel {
            params: p,
            kernel: p.kernel.resolve(&x).unwrap(),
            support_indices: vec![0, 1],
            support_rows: x.clone(),
            beta: vec![-1.1, 1.1],
            bias: 0.0,
            dual_objective: 0.0,
            n_iterations: 0,
            converged: true,
        };
        assert!(kkt_violation(&m, &x, &y, &p) >= 0.1 - 1e-12);
    }
}
