//! Ensemble feature importance: k-NN mutual information, absolute Pearson
//! correlation and forest impurity importance, pooled after min-max scaling.

use std::io::Write;

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::trees::{forest_fit, impurity_importance, ForestParams};
use crate::{rng, stats};

/// Neighbour count of the mutual-information estimator.
pub const MI_NEIGHBOURS: usize = 3;
const JITTER: f64 = 1e-10;
const DEFAULT_JITTER_SEED: u64 = 0;

/// k-NN mutual information estimate in nats with the default jitter seed.
pub fn mutual_information(x: &[f64], y: &[f64], k: usize) -> Result<f64> {
    mutual_information_seeded(x, y, k, DEFAULT_JITTER_SEED)
}

/// Both variables are scaled to unit standard deviation and perturbed by
/// seeded noise of relative size 1e-10 before the neighbour search. The
/// same noise stream is used for every call with a given seed, so identical
/// inputs give identical estimates.
pub fn mutual_information_seeded(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("mutual information needs k >= 1".into()));
    }
    if n <= k {
        return Err(Error::KTooLarge { k, n });
    }
    let xs = jittered(x, rng::derive_seed(seed, 0));
    let ys = jittered(y, rng::derive_seed(seed, 1));
    let eps = kth_neighbour_radius(&xs, &ys, k);
    let nx = strict_counts(&xs, &eps);
    let ny = strict_counts(&ys, &eps);
    let mean_psi = |c: &[usize]| c.iter().map(|&v| digamma(v as f64 + 1.0)).sum::<f64>() / n as f64;
    let mi = digamma(n as f64) + digamma(k as f64) - mean_psi(&nx) - mean_psi(&ny);
    Ok(mi.max(0.0))
}

fn jittered(v: &[f64], seed: u64) -> Vec<f64> {
    let sd = stats::std_dev(v);
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let scaled: Vec<f64> = v.iter().map(|a| a / scale).collect();
    let amp = JITTER * (scaled.iter().map(|a| a.abs()).sum::<f64>() / v.len() as f64).max(1.0);
    let mut r = rng::seeded(seed);
    scaled
        .into_iter()
        .map(|a| {
            let z: f64 = StandardNormal.sample(&mut r);
            a + amp * z
        })
        .collect()
}

/// Chebyshev distance from each point to its k-th nearest other point in
/// the joint (x, y) plane.
fn kth_neighbour_radius(x: &[f64], y: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let sx: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let sy: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut out = vec![0.0; n];
    (0..n)
        .into_par_iter()
        .map(|p| {
            // k smallest distances, kept sorted ascending
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let (mut lo, mut hi) = (p, p + 1);
            loop {
                let dl = if lo > 0 { sx[p] - sx[lo - 1] } else { f64::INFINITY };
                let dr = if hi < n { sx[hi] - sx[p] } else { f64::INFINITY };
                let (dx, q) = if dl <= dr {
                    if lo == 0 {
                        break;
                    }
                    lo -= 1;
                    (dl, lo)
                } else {
                    hi += 1;
                    (dr, hi - 1)
                };
                if best.len() == k && dx >= best[k - 1] {
                    break;
                }
                let d = dx.max((sy[p] - sy[q]).abs());
                if best.len() < k || d < best[k - 1] {
                    let at = best.partition_point(|&b| b <= d);
                    best.insert(at, d);
                    best.truncate(k);
                }
            }
            best[k - 1]
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .zip(&order)
        .for_each(|(e, &i)| out[i] = e);
    out
}

/// For each i, the number of j ≠ i with |v_j − v_i| < radius_i.
fn strict_counts(v: &[f64], radius: &[f64]) -> Vec<usize> {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    v.iter()
        .zip(radius)
        .map(|(&a, &r)| {
            let lo = sorted.partition_point(|&s| s <= a - r);
            let hi = sorted.partition_point(|&s| s < a + r);
            hi - lo - 1
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub mi: f64,
    pub pearson: f64,
    pub rf: f64,
}

impl Default for EnsembleWeights {
    fn default() -> Self {
        EnsembleWeights {
            mi: 0.4,
            pearson: 0.3,
            rf: 0.3,
        }
    }
}

impl EnsembleWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.mi, self.pearson, self.rf];
        if w.iter().any(|v| !(*v >= 0.0)) || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ensemble weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceConfig {
    pub weights: EnsembleWeights,
    pub mi_neighbours: usize,
    pub forest: ForestParams,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            weights: EnsembleWeights::default(),
            mi_neighbours: MI_NEIGHBOURS,
            forest: ForestParams::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub mi: f64,
    pub pearson_abs: f64,
    pub rf: f64,
    pub mi_norm: f64,
    pub pearson_norm: f64,
    pub rf_norm: f64,
    pub ensemble: f64,
    pub rank: usize,
}

/// Features are stored in column order; `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub weights: EnsembleWeights,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<&FeatureImportance> = self.features.iter().collect();
        v.sort_by_key(|f| f.rank);
        v
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("importance.csv", e);
        writeln!(w, "feature,mi,pearson,rf,ensemble,rank").map_err(io)?;
        for f in self.ranked() {
            writeln!(w, "{},{:?},{:?},{:?},{:?},{}", f.name, f.mi_norm, f.pearson_norm, f.rf_norm, f.ensemble, f.rank)
                .map_err(io)?;
        }
        Ok(())
    }
}

/// Maps the largest value to 1 and the smallest to 0; a constant vector maps
/// to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|a| (a - lo) / (hi - lo)).collect()
}

/// Pools raw per-scorer scores into a ranked report. Ties in the ensemble
/// score keep column order.
pub fn assemble_report(
    names: &[String],
    mi: &[f64],
    pearson_abs: &[f64],
    rf: &[f64],
    weights: EnsembleWeights,
) -> Result<ImportanceReport> {
    weights.validate()?;
    let d = names.len();
    for len in [mi.len(), pearson_abs.len(), rf.len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, found: len });
        }
    }
    let (mn, pn, rn) = (min_max_normalize(mi), min_max_normalize(pearson_abs), min_max_normalize(rf));
    let ensemble: Vec<f64> = (0..d)
        .map(|j| weights.mi * mn[j] + weights.pearson * pn[j] + weights.rf * rn[j])
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| ensemble[b].total_cmp(&ensemble[a]).then(a.cmp(&b)));
    let mut rank = vec![0; d];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r + 1;
    }
    let features = (0..d)
        .map(|j| FeatureImportance {
            name: names[j].clone(),
            mi: mi[j],
            pearson_abs: pearson_abs[j],
            rf: rf[j],
            mi_norm: mn[j],
            pearson_norm: pn[j],
            rf_norm: rn[j],
            ensemble: ensemble[j],
            rank: rank[j],
        })
        .collect();
    Ok(ImportanceReport { weights, features })
}

/// Runs the three scorers in parallel on `ds` (meant to be the training
/// split) and pools them.
pub fn ensemble_scores(ds: &Dataset, cfg: &ImportanceConfig) -> Result<ImportanceReport> {
    cfg.weights.validate()?;
    let y = ds.y().to_vec();
    let cols: Vec<Vec<f64>> = (0..ds.n_cols()).map(|j| ds.x().column(j).to_vec()).collect();
    let forest_params = ForestParams {
        seed: cfg.seed,
        ..cfg.forest
    };
    let (mi, (pearson, rf)) = rayon::join(
        || -> Result<Vec<f64>> {
            cols.par_iter()
                .map(|c| mutual_information_seeded(c, &y, cfg.mi_neighbours, cfg.seed))
                .collect()
        },
        || {
            rayon::join(
                || cols.iter().map(|c| stats::pearson(c, &y).abs()).collect::<Vec<f64>>(),
                || -> Result<Vec<f64>> {
                    let yv = Array1::from(y.clone());
                    Ok(impurity_importance(&forest_fit(ds.x(), &yv, &forest_params)?))
                },
            )
        },
    );
    assemble_report(ds.columns(), &mi?, &pearson, &rf?, cfg.weights)
}

/// The `k` best features in rank order.
pub fn top_k(report: &ImportanceReport, k: usize) -> Result<FeatureSet> {
    let d = report.features.len();
    if k > d {
        return Err(Error::KTooLarge { k, n: d });
    }
    FeatureSet::new(report.ranked().into_iter().take(k).map(|f| f.name.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn normalization_extremes() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[7.0, 7.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn weights_and_ranks() {
        let r = assemble_report(
            &names(3),
            &[0.1, 0.5, 0.3],
            &[0.9, 0.2, 0.4],
            &[0.2, 0.3, 0.5],
            EnsembleWeights::default(),
        )
        .unwrap();
        for f in &r.features {
            let e = 0.4 * f.mi_norm + 0.3 * f.pearson_norm + 0.3 * f.rf_norm;
            assert!((f.ensemble - e).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&f.ensemble));
        }
        let mut ranks: Vec<usize> = r.features.iter().map(|f| f.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn ties_keep_column_order() {
        let r = assemble_report(&names(3), &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], EnsembleWeights::default())
            .unwrap();
        assert_eq!(r.features[0].rank, 1);
        assert_eq!(r.features[1].rank, 2);
        assert_eq!(top_k(&r, 2).unwrap().names(), &["f0".to_string(), "f1".to_string()]);
        assert!(matches!(top_k(&r, 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn bad_weights_rejected() {
        let w = EnsembleWeights { mi: 0.5, pearson: 0.5, rf: 0.5 };
        assert!(assemble_report(&names(1), &[1.0], &[1.0], &[1.0], w).is_err());
    }

    #[test]
    fn identical_inputs_identical_estimates() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 31) % 97) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v / 10.0).sin()).collect();
        assert_eq!(mutual_information(&x, &y, 3).unwrap(), mutual_information(&x.clone(), &y, 3).unwrap());
    }

    #[test]
    fn brute_force_radius_agrees() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 23) as f64 * 0.7 + (i as f64) * 1e-3).collect();
        let y: Vec<f64> = (0..60).map(|i| ((i * 11) % 17) as f64).collect();
        let eps = kth_neighbour_radius(&x, &y, 3);
        for i in 0..60 {
            let mut d: Vec<f64> = (0..60)
                .filter(|&j| j != i)
                .map(|j| (x[i] - x[j]).abs().max((y[i] - y[j]).abs()))
                .collect();
            d.sort_by(f64::total_cmp);
            assert_eq!(eps[i], d[2]);
        }
    }
}
