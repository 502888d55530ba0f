//! Independent reference solvers shared by the integration suites. Nothing
//! here calls into the solver under test except for building the problem.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tuberegress::kernel::{Gamma, KernelKind, KernelSpec};
use tuberegress::svr::SvrParams;

pub struct Problem {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub params: SvrParams,
    pub k: Array2<f64>,
}

/// Gram matrix computed from the textbook kernel formulas.
pub fn gram(x: &Array2<f64>, spec: &KernelSpec, gamma: f64) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (a, b) = (x.row(i), x.row(j));
        let dot = a.dot(&b);
        match spec.kind {
            KernelKind::Linear => dot,
            KernelKind::Rbf => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                (-gamma * d2).exp()
            }
            KernelKind::Poly => (gamma * dot + spec.coef0).powi(spec.degree as i32),
        }
    })
}

pub fn random_problem(seed: u64, max_n: usize, max_d: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let d = rng.random_range(1..=max_d);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
    let c = [0.1, 0.5, 1.0, 3.0, 10.0][rng.random_range(0..5)];
    let epsilon = [0.0, 0.05, 0.2, 0.5][rng.random_range(0..4)];
    let gamma = rng.random_range(0.1..2.0);
    let kernel = match rng.random_range(0..3) {
        0 => KernelSpec::rbf(Gamma::Fixed(gamma)),
        1 => KernelSpec::linear(),
        _ => KernelSpec::poly(Gamma::Fixed(gamma), rng.random_range(0.0..1.0), rng.random_range(2..=3)),
    };
    let params = SvrParams {
        c,
        epsilon,
        kernel,
        tol: 1e-7,
        ..SvrParams::default()
    };
    let k = gram(&x, &kernel, gamma);
    Problem { x, y, params, k }
}

/// ½βᵀKβ + εΣ|β| − yᵀβ
pub fn dual_value(k: &Array2<f64>, y: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * k[[i, j]] * beta[j];
        }
    }
    0.5 * quad + eps * beta.iter().map(|b| b.abs()).sum::<f64>() - y.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
}

/// Smallest primal objective reachable with w = Σβφ(x), over every bias.
/// The objective is piecewise linear in b, so checking the breakpoints is
/// exact.
pub fn best_primal(k: &Array2<f64>, y: &[f64], eps: f64, c: f64, beta: &[f64]) -> f64 {
    let n = beta.len();
    let u: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[[i, j]] * beta[j]).sum()).collect();
    let quad: f64 = beta.iter().zip(&u).map(|(b, u)| b * u).sum();
    let loss = |b: f64| -> f64 { (0..n).map(|i| ((y[i] - u[i] - b).abs() - eps).max(0.0)).sum() };
    (0..n)
        .flat_map(|i| [y[i] - u[i] - eps, y[i] - u[i] + eps])
        .map(|b| 0.5 * quad + c * loss(b))
        .fold(f64::INFINITY, f64::min)
}

/// Duality gap of a feasible β: zero exactly at the optimum.
pub fn duality_gap(k: &Array2<f64>, y: &[f64], eps: f64, c: f64, beta: &[f64]) -> f64 {
    dual_value(k, y, eps, beta) + best_primal(k, y, eps, c, beta)
}

/// Projection onto {z ∈ [0, C]^2n : Σz[..n] − Σz[n..] = 0} by bisection on
/// the multiplier of the equality.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let n = v.len() / 2;
    let sign = |i: usize| if i < n { 1.0 } else { -1.0 };
    let at = |lam: f64| -> (Vec<f64>, f64) {
        let z: Vec<f64> = (0..2 * n).map(|i| (v[i] - lam * sign(i)).clamp(0.0, c)).collect();
        let s = (0..2 * n).map(|i| sign(i) * z[i]).sum();
        (z, s)
    };
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Accelerated projected gradient on the (α, α*) form with adaptive
/// restart. Returns β = α − α*.
pub fn qp_oracle(k: &Array2<f64>, y: &[f64], eps: f64, c: f64) -> Vec<f64> {
    let n = y.len();
    let lip = 2.0
        * (0..n)
            .map(|i| (0..n).map(|j| k[[i, j]].abs()).sum::<f64>())
            .fold(0.0, f64::max)
        + 1e-12;
    let beta_of = |z: &[f64]| -> Vec<f64> { (0..n).map(|i| z[i] - z[n + i]).collect() };
    let grad = |z: &[f64]| -> Vec<f64> {
        let b = beta_of(z);
        let kb: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[[i, j]] * b[j]).sum()).collect();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = kb[i] + eps - y[i];
            g[n + i] = -kb[i] + eps + y[i];
        }
        g
    };
    let mut z = vec![0.0; 2 * n];
    let mut w = z.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let g = grad(&w);
        let step: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
        let z_new = project(&step, c);
        let restart: f64 = (0..2 * n).map(|i| (w[i] - z_new[i]) * (z_new[i] - z[i])).sum();
        if restart > 0.0 {
            t = 1.0;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_new;
        w = (0..2 * n).map(|i| z_new[i] + mom * (z_new[i] - z[i])).collect();
        let moved: f64 = (0..2 * n).map(|i| (z_new[i] - z[i]).abs()).fold(0.0, f64::max);
        z = z_new;
        t = t_new;
        if moved < 1e-15 {
            break;
        }
    }
    beta_of(&z)
}

/// Two-point problem: β = (t, −t), minimised over a fine grid of t and then
/// refined by ternary search on the bracketing cell.
pub fn grid_oracle_2(k: &Array2<f64>, y: &[f64], eps: f64, c: f64) -> f64 {
    let f = |t: f64| dual_value(k, y, eps, &[t, -t]);
    let m = 100_000;
    let h = 2.0 * c / m as f64;
    let best = (0..=m).min_by(|&a, &b| f(-c + a as f64 * h).total_cmp(&f(-c + b as f64 * h))).unwrap();
    let (mut lo, mut hi) = ((-c + (best as f64 - 1.0) * h).max(-c), (-c + (best as f64 + 1.0) * h).min(c));
    for _ in 0..200 {
        let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if f(a) <= f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    f(0.5 * (lo + hi)).min(f(best as f64 * h - c))
}
