//! Randomized hyperparameter search over a finite SVR grid with inner k-fold
//! cross-validation.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::cross_validate;
use crate::kernel::{Gamma, KernelKind, KernelSpec};
use crate::pipeline::{FittedPipeline, Pipeline, Regressor};
use crate::preprocess::ColumnPartition;
use crate::rng;
use crate::svr::{SvrModel, SvrParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub c_choices: Vec<f64>,
    pub epsilon_choices: Vec<f64>,
    pub gamma_choices: Vec<Gamma>,
    /// Kernel family, coef0 and degree; its gamma field is ignored.
    pub kernel: KernelSpec,
}

impl Default for ParamSpace {
    fn default() -> Self {
        ParamSpace::rbf()
    }
}

impl ParamSpace {
    fn standard(kernel: KernelSpec) -> Self {
        ParamSpace {
            c_choices: vec![0.1, 1.0, 10.0, 100.0],
            epsilon_choices: vec![0.01, 0.1, 0.5, 1.0],
            gamma_choices: vec![Gamma::Scale, Gamma::Auto, Gamma::Fixed(0.1), Gamma::Fixed(1.0)],
            kernel,
        }
    }

    pub fn rbf() -> Self {
        Self::standard(KernelSpec::rbf(Gamma::Scale))
    }

    /// Same grid; gamma has no effect on a linear kernel but is kept so the
    /// grid size and sampling match the RBF run.
    pub fn linear() -> Self {
        Self::standard(KernelSpec::linear())
    }

    pub fn poly(degree: u32, coef0: f64) -> Self {
        Self::standard(KernelSpec::poly(Gamma::Scale, coef0, degree))
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_choices.is_empty() || self.epsilon_choices.is_empty() || self.gamma_choices.is_empty() {
            return Err(Error::ConfigInvalid("parameter space has an empty choice list".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.c_choices.len() * self.epsilon_choices.len() * self.gamma_choices.len()
    }

    /// Cell `i` of the Cartesian grid, C varying slowest and gamma fastest.
    pub fn cell(&self, i: usize) -> Candidate {
        let ng = self.gamma_choices.len();
        let ne = self.epsilon_choices.len();
        Candidate {
            c: self.c_choices[i / (ne * ng)],
            epsilon: self.epsilon_choices[(i / ng) % ne],
            gamma: self.gamma_choices[i % ng],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: Gamma,
}

impl Candidate {
    pub fn apply(&self, base: &SvrParams, kernel: &KernelSpec) -> SvrParams {
        let kernel = match kernel.kind {
            KernelKind::Linear => *kernel,
            _ => KernelSpec {
                gamma: self.gamma,
                ..*kernel
            },
        };
        SvrParams {
            c: self.c,
            epsilon: self.epsilon,
            kernel,
            ..*base
        }
    }

    /// Lower C, then lower ε, then gamma order (scale, auto, numeric).
    pub fn tie_order(&self, other: &Candidate) -> Ordering {
        let (ga, gb) = (self.gamma.order_key(), other.gamma.order_key());
        self.c
            .total_cmp(&other.c)
            .then(self.epsilon.total_cmp(&other.epsilon))
            .then(ga.0.cmp(&gb.0))
            .then(ga.1.total_cmp(&gb.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub grid_cell: usize,
    pub seed: u64,
    pub params: Candidate,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub n_iter: usize,
    pub cv: usize,
    pub seed: u64,
    /// Wall times make the search log differ between runs, so they are off
    /// unless asked for.
    pub record_timings: bool,
    /// Solver settings shared by every candidate.
    pub base: SvrParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_iter: 20,
            cv: 3,
            seed: 18942018,
            record_timings: false,
            base: SvrParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub kernel: KernelSpec,
    pub trials: Vec<Trial>,
    pub best_index: usize,
    pub best_params: Candidate,
    pub best_mean_score: f64,
    pub total_fits: usize,
    pub grid_size: usize,
    /// Row ids of every row any fit or score touched, sorted.
    pub accessed_rows: Vec<usize>,
}

impl SearchResult {
    pub fn best_svr_params(&self, base: &SvrParams) -> SvrParams {
        self.best_params.apply(base, &self.kernel)
    }
}

pub struct SearchOutcome {
    pub result: SearchResult,
    /// Best configuration refitted on all of the search data.
    pub refit: FittedPipeline<SvrModel>,
}

/// Highest mean score; ties go to [`Candidate::tie_order`].
pub fn tie_break(trials: &[Trial]) -> Option<&Trial> {
    trials.iter().reduce(|best, t| {
        match t.mean_score.total_cmp(&best.mean_score) {
            Ordering::Greater => t,
            Ordering::Less => best,
            Ordering::Equal => {
                if t.params.tie_order(&best.params) == Ordering::Less {
                    t
                } else {
                    best
                }
            }
        }
    })
}

/// Draws `n_iter` distinct grid cells, scores each by mean R² over `cv`
/// folds of the full scaling pipeline, and refits the winner on `ds`.
/// Trial `i` draws its folds from `derive_seed(seed, i)`.
pub fn randomized_search(
    ds: &Dataset,
    space: &ParamSpace,
    partition: &ColumnPartition,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    space.validate()?;
    cfg.base.validate()?;
    let grid = space.size();
    if cfg.n_iter == 0 || cfg.n_iter > grid {
        return Err(Error::GridTooSmall { n_iter: cfg.n_iter, grid });
    }
    if cfg.cv < 2 {
        return Err(Error::InvalidArgument(format!("cv must be >= 2, got {}", cfg.cv)));
    }
    let cells = index::sample(&mut rng::seeded(cfg.seed), grid, cfg.n_iter).into_vec();
    let trials: Vec<Trial> = cells
        .par_iter()
        .enumerate()
        .map(|(i, &cell)| {
            let params = space.cell(cell);
            let seed = rng::derive_seed(cfg.seed, i as u64);
            let pipe = Pipeline::new(partition.clone(), params.apply(&cfg.base, &space.kernel));
            let start = Instant::now();
            let cv = cross_validate(&pipe, ds, cfg.cv, seed)?;
            Ok(Trial {
                index: i,
                grid_cell: cell,
                seed,
                params,
                fold_scores: cv.fold_scores,
                mean_score: cv.mean,
                wall_time_s: cfg.record_timings.then(|| start.elapsed().as_secs_f64()),
            })
        })
        .collect::<Result<_>>()?;
    let best = tie_break(&trials).expect("n_iter >= 1").clone();
    let pipe = Pipeline::new(partition.clone(), best.params.apply(&cfg.base, &space.kernel));
    let refit = pipe.fit(ds)?;
    let accessed: BTreeSet<usize> = ds.row_ids().iter().copied().collect();
    Ok(SearchOutcome {
        result: SearchResult {
            kernel: space.kernel,
            total_fits: trials.iter().map(|t| t.fold_scores.len()).sum(),
            best_index: best.index,
            best_params: best.params,
            best_mean_score: best.mean_score,
            trials,
            grid_size: grid,
            accessed_rows: accessed.into_iter().collect(),
        },
        refit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(i: usize, c: f64, e: f64, g: Gamma, m: f64) -> Trial {
        Trial {
            index: i,
            grid_cell: i,
            seed: 0,
            params: Candidate { c, epsilon: e, gamma: g },
            fold_scores: vec![m],
            mean_score: m,
            wall_time_s: None,
        }
    }

    #[test]
    fn lower_c_wins_ties() {
        let t = [trial(0, 10.0, 0.1, Gamma::Scale, 0.5), trial(1, 1.0, 0.1, Gamma::Scale, 0.5)];
        assert_eq!(tie_break(&t).unwrap().index, 1);
        assert_eq!(tie_break(&t[..1]).unwrap().index, 0);
    }

    #[test]
    fn three_way_tie_follows_key() {
        let t = [
            trial(0, 1.0, 0.1, Gamma::Fixed(0.1), 0.7),
            trial(1, 1.0, 0.1, Gamma::Auto, 0.7),
            trial(2, 1.0, 0.5, Gamma::Scale, 0.7),
            trial(3, 100.0, 0.01, Gamma::Scale, 0.6),
        ];
        // same C; ε 0.1 beats 0.5; then auto precedes 0.1
        assert_eq!(tie_break(&t).unwrap().index, 1);
    }

    #[test]
    fn grid_layout() {
        let s = ParamSpace::rbf();
        assert_eq!(s.size(), 64);
        let mut seen = std::collections::HashSet::new();
        for i in 0..64 {
            let c = s.cell(i);
            seen.insert((c.c.to_bits(), c.epsilon.to_bits(), c.gamma.to_string()));
        }
        assert_eq!(seen.len(), 64);
        assert_eq!(s.cell(0), Candidate { c: 0.1, epsilon: 0.01, gamma: Gamma::Scale });
    }

    #[test]
    fn linear_candidates_ignore_gamma() {
        let p = Candidate { c: 1.0, epsilon: 0.1, gamma: Gamma::Fixed(1.0) }.apply(&SvrParams::default(), &KernelSpec::linear());
        assert_eq!(p.kernel, KernelSpec::linear());
    }
}
