//! Four cumulative stages separating the contributions of scaling, derived
//! features, and tuned hyperparameters.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rows_digest, sample_subset, Dataset};
use crate::error::{Error, Result};
use crate::evaluation::r2_score;
use crate::features::{select_features, FeatureSet};
use crate::kernel::{Gamma, KernelSpec};
use crate::pipeline::{Pipeline, Predictor, Regressor};
use crate::preprocess::ColumnPartition;
use crate::svr::SvrParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageId {
    A,
    B,
    C,
    D,
}

impl StageId {
    pub const ALL: [StageId; 4] = [StageId::A, StageId::B, StageId::C, StageId::D];

    pub fn letter(self) -> char {
        match self {
            StageId::A => 'A',
            StageId::B => 'B',
            StageId::C => 'C',
            StageId::D => 'D',
        }
    }

    pub fn stage(self) -> AblationStage {
        use FeatureChoice::*;
        use ParamChoice::*;
        use Scaling::*;
        let (scaling, features, params) = match self {
            StageId::A => (Unscaled, Raw, Default),
            StageId::B => (Partitioned, Raw, Default),
            StageId::C => (Partitioned, Engineered, Default),
            StageId::D => (Partitioned, Engineered, Tuned),
        };
        AblationStage {
            id: self,
            scaling,
            features,
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Unscaled,
    Partitioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    Raw,
    Engineered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamChoice {
    Default,
    Tuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationStage {
    pub id: StageId,
    pub scaling: Scaling,
    pub features: FeatureChoice,
    pub params: ParamChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub raw_features: FeatureSet,
    pub engineered_features: FeatureSet,
    pub partition: ColumnPartition,
    pub default_params: SvrParams,
    pub tuned_params: SvrParams,
    /// Draw this many training rows (with `subset_seed`) before fitting;
    /// `None` trains on `train` as given.
    pub subset_n: Option<usize>,
    pub subset_seed: u64,
}

impl AblationConfig {
    /// Tuned stage fixed at C=10, ε=0.5, γ=scale.
    pub fn new(engineered_features: FeatureSet, partition: ColumnPartition) -> Self {
        let default_params = SvrParams::default();
        AblationConfig {
            raw_features: FeatureSet::raw(),
            engineered_features,
            partition,
            tuned_params: SvrParams {
                c: 10.0,
                epsilon: 0.5,
                kernel: KernelSpec::rbf(Gamma::Scale),
                ..default_params
            },
            default_params,
            subset_n: Some(3000),
            subset_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: AblationStage,
    pub r2: f64,
    pub n_features: usize,
    /// SHA-256 of the ordered training / test row ids.
    pub train_rows_digest: String,
    pub test_rows_digest: String,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub b_minus_a: f64,
    pub c_minus_b: f64,
    pub d_minus_c: f64,
    pub d_minus_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub stages: Vec<StageResult>,
    pub deltas: Deltas,
}

impl AblationResult {
    pub fn r2(&self, id: StageId) -> f64 {
        self.stages[id as usize].r2
    }
}

/// Runs the four stages on a shared training subset. `train` and `test`
/// must carry every column named by either feature set.
pub fn run_ablation(train: &Dataset, test: &Dataset, cfg: &AblationConfig) -> Result<AblationResult> {
    let subset = match cfg.subset_n {
        Some(n) => sample_subset(train, n.min(train.n_rows()), cfg.subset_seed)?,
        None => train.clone(),
    };
    let stages: Vec<StageResult> = StageId::ALL
        .par_iter()
        .map(|&id| {
            run_stage(id, &subset, test, cfg).map_err(|e| Error::Stage {
                stage: id.letter(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let r = |i: usize| stages[i].r2;
    let deltas = Deltas {
        b_minus_a: r(1) - r(0),
        c_minus_b: r(2) - r(1),
        d_minus_c: r(3) - r(2),
        d_minus_a: r(3) - r(0),
    };
    Ok(AblationResult { stages, deltas })
}

fn run_stage(id: StageId, train: &Dataset, test: &Dataset, cfg: &AblationConfig) -> Result<StageResult> {
    let stage = id.stage();
    let fs = match stage.features {
        FeatureChoice::Raw => &cfg.raw_features,
        FeatureChoice::Engineered => &cfg.engineered_features,
    };
    let params = match stage.params {
        ParamChoice::Default => cfg.default_params,
        ParamChoice::Tuned => cfg.tuned_params,
    };
    let partition = match stage.scaling {
        Scaling::Unscaled => ColumnPartition::empty(),
        Scaling::Partitioned => cfg.partition.clone(),
    };
    let tr = select_features(train, fs)?;
    let te = select_features(test, fs)?;
    let fitted = Pipeline::new(partition, params).fit(&tr)?;
    let pred = fitted.predict(&te)?;
    Ok(StageResult {
        stage,
        r2: r2_score(te.y().as_slice().expect("contiguous"), pred.as_slice().expect("contiguous")),
        n_features: fs.len(),
        train_rows_digest: rows_digest(tr.row_ids()),
        test_rows_digest: rows_digest(te.row_ids()),
        converged: fitted.model.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub scaling: Option<f64>,
    pub features: Option<f64>,
    pub tuning: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportStage {
    pub id: StageId,
    pub r2: f64,
    pub delta_from_previous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub stages: Vec<ReportStage>,
    pub deltas: Deltas,
    /// Percent of the total A→D change attributable to each step; `None`
    /// when the total change is zero.
    pub share_percent: Shares,
}

impl AblationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("ablation.csv", e);
        writeln!(w, "stage,r2,delta").map_err(io)?;
        for s in &self.stages {
            let d = s.delta_from_previous.map(|v| format!("{v:?}")).unwrap_or_default();
            writeln!(w, "{},{:?},{}", s.id.letter(), s.r2, d).map_err(io)?;
        }
        Ok(())
    }
}

pub fn ablation_report(r: &AblationResult) -> AblationReport {
    let d = r.deltas;
    let share = |v: f64| (d.d_minus_a != 0.0).then(|| 100.0 * v / d.d_minus_a);
    AblationReport {
        stages: r
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| ReportStage {
                id: s.stage.id,
                r2: s.r2,
                delta_from_previous: (i > 0).then(|| s.r2 - r.stages[i - 1].r2),
            })
            .collect(),
        deltas: d,
        share_percent: Shares {
            scaling: share(d.b_minus_a),
            features: share(d.c_minus_b),
            tuning: share(d.d_minus_c),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(r2: [f64; 4]) -> AblationResult {
        let stages = StageId::ALL
            .iter()
            .zip(r2)
            .map(|(&id, r2)| StageResult {
                stage: id.stage(),
                r2,
                n_features: 8,
                train_rows_digest: String::new(),
                test_rows_digest: String::new(),
                converged: true,
            })
            .collect();
        AblationResult {
            stages,
            deltas: Deltas {
                b_minus_a: r2[1] - r2[0],
                c_minus_b: r2[2] - r2[1],
                d_minus_c: r2[3] - r2[2],
                d_minus_a: r2[3] - r2[0],
            },
        }
    }

    #[test]
    fn reference_scaling_share() {
        let rep = ablation_report(&result([-0.054, 0.690, 0.716, 0.723]));
        let s = rep.share_percent.scaling.unwrap();
        assert!((s - 95.7).abs() <= 0.5, "{s}");
    }

    #[test]
    fn zero_total_has_no_shares() {
        let rep = ablation_report(&result([0.5; 4]));
        assert_eq!(rep.share_percent, Shares { scaling: None, features: None, tuning: None });
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"scaling\":null"));
    }

    #[test]
    fn monotone_shares_sum_to_100() {
        let rep = ablation_report(&result([0.1, 0.4, 0.45, 0.6]));
        let s = rep.share_percent;
        let total = s.scaling.unwrap() + s.features.unwrap() + s.tuning.unwrap();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn stages_are_cumulative() {
        let s: Vec<AblationStage> = StageId::ALL.iter().map(|i| i.stage()).collect();
        assert_eq!(s[0].scaling, Scaling::Unscaled);
        assert_eq!((s[1].scaling, s[1].features), (Scaling::Partitioned, FeatureChoice::Raw));
        assert_eq!((s[2].features, s[2].params), (FeatureChoice::Engineered, ParamChoice::Default));
        assert_eq!(s[3].params, ParamChoice::Tuned);
    }
}
