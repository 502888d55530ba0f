//! Experiment configuration, versioned JSON artifacts, and the staged
//! commands behind the command-line front end.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::{ablation_report, run_ablation, AblationConfig, AblationReport, AblationResult};
use crate::baselines::{Knn, Ols, Ridge};
use crate::dataset::{
    correlation_labels, correlation_matrix, read_csv, stratified_split, sample_subset, summary_stats, ColumnSummary,
    Dataset, CANONICAL_TARGET,
};
use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, cross_validate, CvResult, MetricsBundle};
use crate::features::{derive_features, select_features, FeatureSet};
use crate::importance::{ensemble_scores, top_k, EnsembleWeights, ImportanceConfig, ImportanceReport, MI_NEIGHBOURS};
use crate::kernel::{Gamma, KernelSpec};
use crate::model_selection::{randomized_search, Candidate, ParamSpace, SearchConfig, SearchResult};
use crate::pipeline::{Estimator, Pipeline, Predictor, Regressor};
use crate::preprocess::{default_partition, ColumnPartition, ScalerKind};
use crate::stats;
use crate::svr::SvrParams;
use crate::trees::{ForestParams, TreeParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bundled 200-row synthetic dataset with the canonical schema.
pub const FIXTURE_CSV: &str = include_str!("../fixtures/synthetic_housing.csv");

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub target: String,
    /// Use the bundled synthetic dataset instead of `path`.
    pub fixture: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: PathBuf::from("data/california_housing.csv"),
            target: CANONICAL_TARGET.to_owned(),
            fixture: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub subset: u64,
    pub forest: u64,
    pub cv: u64,
    pub search: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 42,
            subset: 42,
            forest: 42,
            cv: 42,
            search: 18942018,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub n_bins: usize,
    pub subset_n: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.3,
            n_bins: 10,
            subset_n: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub k: usize,
    /// Explicit modelling columns; empty means the top `k` by importance.
    pub select: Vec<String>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection { k: 12, select: Vec::new() }
    }
}

/// Per-column overrides applied on top of the default partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalerSection {
    pub standard: Vec<String>,
    pub minmax: Vec<String>,
    pub robust: Vec<String>,
    pub passthrough: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceSection {
    pub weights: EnsembleWeights,
    pub mi_neighbours: usize,
    pub forest_trees: usize,
}

impl Default for ImportanceSection {
    fn default() -> Self {
        ImportanceSection {
            weights: EnsembleWeights::default(),
            mi_neighbours: MI_NEIGHBOURS,
            forest_trees: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub n_iter: usize,
    pub cv: usize,
    pub c: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: Vec<Gamma>,
    pub record_timings: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = ParamSpace::rbf();
        SearchSection {
            n_iter: 20,
            cv: 3,
            c: s.c_choices,
            epsilon: s.epsilon_choices,
            gamma: s.gamma_choices,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub cache_mb: usize,
    pub shrinking: bool,
    pub max_iter: Option<u64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = SvrParams::default();
        SolverSection {
            tol: p.tol,
            cache_mb: p.cache_mb,
            shrinking: p.shrinking,
            max_iter: p.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub folds: usize,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        CrossvalSection { folds: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub tuned_c: f64,
    pub tuned_epsilon: f64,
    pub tuned_gamma: Gamma,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            tuned_c: 10.0,
            tuned_epsilon: 0.5,
            tuned_gamma: Gamma::Scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub ridge_lambda: f64,
    pub knn_k: usize,
    pub forest_trees: usize,
    pub linear_n_iter: usize,
    /// JSON rows for models this tool does not train.
    pub external_scores: Option<PathBuf>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            ridge_lambda: 1.0,
            knn_k: 5,
            forest_trees: 100,
            linear_n_iter: 20,
            external_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub seeds: Seeds,
    pub split: SplitSection,
    pub features: FeatureSection,
    pub scaler: ScalerSection,
    pub importance: ImportanceSection,
    pub search: SearchSection,
    pub svr: SolverSection,
    pub crossval: CrossvalSection,
    pub ablation: AblationSection,
    pub compare: CompareSection,
    pub output: OutputSection,
}

/// Command-line overrides, applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub subset: Option<usize>,
    pub test_fraction: Option<f64>,
    pub out: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Small settings for the bundled synthetic dataset.
    pub fn fixture() -> Self {
        let mut c = ExperimentConfig::default();
        c.data.fixture = true;
        c.split.subset_n = 100;
        c.search.n_iter = 6;
        c.crossval.folds = 5;
        c.importance.forest_trees = 20;
        c.compare.forest_trees = 20;
        c.compare.linear_n_iter = 4;
        c.output.dir = PathBuf::from("out/fixture");
        c
    }

    /// Layers a TOML document over `base`; keys absent from the document
    /// keep their `base` values.
    pub fn from_toml_over(base: &ExperimentConfig, text: &str) -> Result<Self> {
        let invalid = |e: &dyn std::fmt::Display| Error::ConfigInvalid(e.to_string());
        let user: toml::Table = toml::from_str(text).map_err(|e| invalid(&e))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| invalid(&e))?;
        merge_tables(&mut merged, user);
        toml::Value::Table(merged).try_into().map_err(|e| invalid(&e))
    }

    pub fn load(path: &Path, base: &ExperimentConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_over(base, &text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds.split = s;
            self.seeds.subset = s;
            self.seeds.forest = s;
            self.seeds.cv = s;
        }
        if let Some(n) = o.subset {
            self.split.subset_n = n;
        }
        if let Some(f) = o.test_fraction {
            self.split.test_fraction = f;
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(p) = &o.external_scores {
            self.compare.external_scores = Some(p.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !self.data.fixture && !self.data.path.is_file() {
            return bad(format!("dataset {} does not exist", self.data.path.display()));
        }
        if let Some(p) = &self.compare.external_scores {
            if !p.is_file() {
                return bad(format!("external scores file {} does not exist", p.display()));
            }
        }
        let f = self.split.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {f}"));
        }
        if self.split.n_bins < 2 {
            return bad("n_bins must be >= 2".into());
        }
        if self.split.subset_n == 0 {
            return bad("subset_n must be positive".into());
        }
        if self.features.k == 0 && self.features.select.is_empty() {
            return bad("features.k must be positive".into());
        }
        if self.search.cv < 2 || self.crossval.folds < 2 {
            return bad("cross-validation needs at least 2 folds".into());
        }
        if self.importance.forest_trees == 0 || self.compare.forest_trees == 0 {
            return bad("forest_trees must be positive".into());
        }
        self.importance.weights.validate().map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.rbf_space().validate()?;
        self.base_svr().validate()?;
        self.partition()?;
        Ok(())
    }

    pub fn base_svr(&self) -> SvrParams {
        SvrParams {
            tol: self.svr.tol,
            cache_mb: self.svr.cache_mb,
            shrinking: self.svr.shrinking,
            max_iter: self.svr.max_iter,
            ..SvrParams::default()
        }
    }

    pub fn rbf_space(&self) -> ParamSpace {
        ParamSpace {
            c_choices: self.search.c.clone(),
            epsilon_choices: self.search.epsilon.clone(),
            gamma_choices: self.search.gamma.clone(),
            kernel: KernelSpec::rbf(Gamma::Scale),
        }
    }

    pub fn partition(&self) -> Result<ColumnPartition> {
        let mut p = default_partition();
        let mut seen = std::collections::BTreeSet::new();
        let groups = [
            (Some(ScalerKind::Standard), &self.scaler.standard),
            (Some(ScalerKind::MinMax), &self.scaler.minmax),
            (Some(ScalerKind::Robust), &self.scaler.robust),
            (None, &self.scaler.passthrough),
        ];
        for (kind, cols) in groups {
            for c in cols {
                if !seen.insert(c.as_str()) {
                    return Err(Error::ConfigInvalid(format!("column `{c}` appears in two scaler groups")));
                }
                p.set(c, kind);
            }
        }
        Ok(p)
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

// ------------------------------------------------------------- artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub tool_version: String,
    pub stage: String,
    pub config_hash: String,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaPayload {
    pub n_rows: usize,
    pub columns: Vec<ColumnSummary>,
    pub correlation_labels: Vec<String>,
    pub correlations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPayload {
    pub dataset_sha256: String,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_subset: usize,
    pub test_fraction: f64,
    pub n_bins: usize,
    pub train_mean: f64,
    pub test_mean: f64,
    pub train_std: f64,
    pub test_std: f64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub subset_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportancePayload {
    pub report: ImportanceReport,
    pub selected: FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPayload {
    pub result: SearchResult,
    pub tuned: SvrParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPayload {
    pub params: SvrParams,
    pub features: FeatureSet,
    pub n_train: usize,
    pub n_support: usize,
    pub n_iterations: u64,
    pub converged: bool,
    pub train: MetricsBundle,
    pub test: MetricsBundle,
    pub r2_gap: f64,
    pub test_rows: Vec<usize>,
    pub test_predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalPayload {
    pub folds: usize,
    pub seed: u64,
    pub n_rows: usize,
    pub params: SvrParams,
    pub result: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPayload {
    pub result: AblationResult,
    pub report: AblationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub rank: usize,
    pub model: String,
    pub r2: f64,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub notes: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparePayload {
    pub rows: Vec<CompareRow>,
    pub linear_search_best: Candidate,
    pub linear_search_score: f64,
    pub external_sha256: Option<String>,
}

/// Row of an external scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalScore {
    pub model: String,
    pub r2: f64,
    #[serde(default)]
    pub rmse: Option<f64>,
    #[serde(default)]
    pub mae: Option<f64>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExternalFile {
    Rows(Vec<ExternalScore>),
    Wrapped { rows: Vec<ExternalScore> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_sha256: String,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_subset: usize,
    pub train_mean: f64,
    pub test_mean: f64,
    pub columns: Vec<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub params: SvrParams,
    pub train: MetricsBundle,
    pub test: MetricsBundle,
    pub r2_gap: f64,
    pub n_support: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub importance: ImportanceReport,
    pub selected_features: FeatureSet,
    pub search: SearchResult,
    pub final_metrics: FinalMetrics,
    pub crossval: CvResult,
    pub ablation: AblationReport,
    pub comparison: Vec<CompareRow>,
}

// -------------------------------------------------------------- commands

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eda,
    Split,
    Importance,
    Tune,
    Train,
    Crossval,
    Ablate,
    Compare,
    Report,
}

impl Command {
    pub const PIPELINE: [Command; 9] = [
        Command::Eda,
        Command::Split,
        Command::Importance,
        Command::Tune,
        Command::Train,
        Command::Crossval,
        Command::Ablate,
        Command::Compare,
        Command::Report,
    ];

    pub fn stage(self) -> &'static str {
        match self {
            Command::Eda => "eda",
            Command::Split => "split",
            Command::Importance => "importance",
            Command::Tune => "search",
            Command::Train => "train",
            Command::Crossval => "crossval",
            Command::Ablate => "ablation",
            Command::Compare => "compare",
            Command::Report => "report",
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A validated configuration bound to its dataset and output directory.
pub struct Experiment {
    cfg: ExperimentConfig,
    config_hash: String,
    data_sha256: String,
    raw: Dataset,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (bytes, source) = if cfg.data.fixture {
            (FIXTURE_CSV.as_bytes().to_vec(), "fixture:synthetic_housing.csv".to_owned())
        } else {
            let p = &cfg.data.path;
            (fs::read(p).map_err(|e| Error::io(p, e))?, p.display().to_string())
        };
        let data_sha256 = sha256_hex(&bytes);
        let raw = read_csv(&bytes[..], &cfg.data.target, &source)?;
        let config_hash = Self::hash(&cfg, &data_sha256)?;
        Ok(Experiment {
            cfg,
            config_hash,
            data_sha256,
            raw,
        })
    }

    /// Hash of every setting except the output location, plus the dataset
    /// bytes. Artifacts from a different hash are treated as stale.
    fn hash(cfg: &ExperimentConfig, data_sha256: &str) -> Result<String> {
        let mut c = cfg.clone();
        c.output = OutputSection::default();
        let mut bytes = serde_json::to_vec(&c)?;
        bytes.extend_from_slice(data_sha256.as_bytes());
        Ok(sha256_hex(&bytes))
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    pub fn artifact_path(&self, stage: &str) -> PathBuf {
        self.out_dir().join(format!("{stage}.json"))
    }

    pub fn execute(&self, cmd: Command) -> Result<()> {
        log::info!("running {}", cmd.stage());
        match cmd {
            Command::Eda => self.eda().map(drop),
            Command::Split => self.split().map(drop),
            Command::Importance => self.importance().map(drop),
            Command::Tune => self.tune().map(drop),
            Command::Train => self.train().map(drop),
            Command::Crossval => self.crossval().map(drop),
            Command::Ablate => self.ablate().map(drop),
            Command::Compare => self.compare().map(drop),
            Command::Report => self.report().map(drop),
        }
    }

    pub fn run_all(&self) -> Result<RunReport> {
        for cmd in &Command::PIPELINE[..Command::PIPELINE.len() - 1] {
            self.execute(*cmd)?;
        }
        self.report()
    }

    fn write_file(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.out_dir();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn write_csv_with(&self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let dir = self.out_dir().join("plots");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.write_file(&format!("plots/{name}"), &buf)
    }

    fn write_artifact<T: Serialize>(&self, stage: &str, payload: &T) -> Result<()> {
        let a = Artifact {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_owned(),
            stage: stage.to_owned(),
            config_hash: self.config_hash.clone(),
            payload,
        };
        let mut text = serde_json::to_string_pretty(&a)?;
        text.push('\n');
        self.write_file(&format!("{stage}.json"), text.as_bytes())
    }

    /// Loads an upstream artifact, refusing missing, foreign, or stale ones.
    pub fn read_artifact<T: DeserializeOwned>(&self, stage: &str) -> Result<T> {
        let path = self.artifact_path(stage);
        let missing = |reason: String| Error::MissingArtifact {
            stage: stage.to_owned(),
            reason,
        };
        let text = fs::read_to_string(&path)
            .map_err(|_| missing(format!("{} not found; run the `{stage}` step first", path.display())))?;
        let a: Artifact<serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| missing(format!("unreadable artifact: {e}")))?;
        if a.stage != stage || a.schema_version != SCHEMA_VERSION {
            return Err(missing(format!(
                "artifact is stage `{}` schema {}, expected `{stage}` schema {SCHEMA_VERSION}",
                a.stage, a.schema_version
            )));
        }
        if a.config_hash != self.config_hash {
            return Err(missing(format!(
                "stale: built with config hash {}, current is {}",
                a.config_hash, self.config_hash
            )));
        }
        serde_json::from_value(a.payload).map_err(|e| missing(format!("payload does not match schema: {e}")))
    }

    fn engineered(&self) -> Result<Dataset> {
        derive_features(&self.raw)
    }

    /// Train, test, and SVR-subset datasets rebuilt from the split artifact.
    fn split_sets(&self, sp: &SplitPayload) -> Result<(Dataset, Dataset, Dataset)> {
        let ds = self.engineered()?;
        let n = ds.n_rows();
        let stale = || Error::MissingArtifact {
            stage: "split".into(),
            reason: "row ids out of range for the current dataset".into(),
        };
        for ids in [&sp.train_rows, &sp.test_rows, &sp.subset_rows] {
            if ids.iter().any(|&i| i >= n) {
                return Err(stale());
            }
        }
        Ok((
            ds.select_rows(&sp.train_rows, "split:train"),
            ds.select_rows(&sp.test_rows, "split:test"),
            ds.select_rows(&sp.subset_rows, "split:subset"),
        ))
    }

    pub fn eda(&self) -> Result<EdaPayload> {
        let corr = correlation_matrix(&self.raw, true);
        let p = EdaPayload {
            n_rows: self.raw.n_rows(),
            columns: summary_stats(&self.raw),
            correlation_labels: correlation_labels(&self.raw, true),
            correlations: corr.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        self.write_artifact("eda", &p)?;
        self.write_csv_with("summary.csv", |b| write_summary_csv(&p.columns, b))?;
        self.write_csv_with("correlations.csv", |b| write_matrix_csv(&p.correlation_labels, &p.correlations, b))?;
        Ok(p)
    }

    pub fn split(&self) -> Result<SplitPayload> {
        let c = &self.cfg;
        let sp = stratified_split(&self.raw, c.split.test_fraction, c.split.n_bins, c.seeds.split)?;
        let subset = sample_subset(&sp.train, c.split.subset_n, c.seeds.subset)?;
        let (ytr, yte) = (sp.train.y().to_vec(), sp.test.y().to_vec());
        let p = SplitPayload {
            dataset_sha256: self.data_sha256.clone(),
            n_rows: self.raw.n_rows(),
            n_train: sp.train.n_rows(),
            n_test: sp.test.n_rows(),
            n_subset: subset.n_rows(),
            test_fraction: sp.test_fraction,
            n_bins: sp.n_bins,
            train_mean: stats::mean(&ytr),
            test_mean: stats::mean(&yte),
            train_std: stats::std_dev(&ytr),
            test_std: stats::std_dev(&yte),
            train_rows: sp.train.row_ids().to_vec(),
            test_rows: sp.test.row_ids().to_vec(),
            subset_rows: subset.row_ids().to_vec(),
        };
        self.write_artifact("split", &p)?;
        Ok(p)
    }

    pub fn importance(&self) -> Result<ImportancePayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let (train, _, _) = self.split_sets(&sp)?;
        let c = &self.cfg;
        let icfg = ImportanceConfig {
            weights: c.importance.weights,
            mi_neighbours: c.importance.mi_neighbours,
            forest: ForestParams {
                n_estimators: c.importance.forest_trees,
                ..ForestParams::default()
            },
            seed: c.seeds.forest,
        };
        let report = ensemble_scores(&train, &icfg)?;
        let selected = if c.features.select.is_empty() {
            top_k(&report, c.features.k)?
        } else {
            let fs = FeatureSet::new(c.features.select.clone())?;
            select_features(&train, &fs)?;
            fs
        };
        let p = ImportancePayload { report, selected };
        self.write_artifact("importance", &p)?;
        self.write_csv_with("importance.csv", |b| p.report.write_csv(b))?;
        Ok(p)
    }

    pub fn tune(&self) -> Result<SearchPayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let (_, _, subset) = self.split_sets(&sp)?;
        let data = select_features(&subset, &imp.selected)?;
        let scfg = self.search_config(self.cfg.search.n_iter);
        let out = randomized_search(&data, &self.cfg.rbf_space(), &self.cfg.partition()?, &scfg)?;
        audit_disjoint(&out.result.accessed_rows, &sp.test_rows)?;
        let p = SearchPayload {
            tuned: out.result.best_svr_params(&scfg.base),
            result: out.result,
        };
        self.write_artifact("search", &p)?;
        self.write_csv_with("search_trials.csv", |b| write_trials_csv(&p.result, b))?;
        Ok(p)
    }

    fn search_config(&self, n_iter: usize) -> SearchConfig {
        SearchConfig {
            n_iter,
            cv: self.cfg.search.cv,
            seed: self.cfg.seeds.search,
            record_timings: self.cfg.search.record_timings,
            base: self.cfg.base_svr(),
        }
    }

    pub fn train(&self) -> Result<TrainPayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let search: SearchPayload = self.read_artifact("search")?;
        let (_, test, subset) = self.split_sets(&sp)?;
        let tr = select_features(&subset, &imp.selected)?;
        let te = select_features(&test, &imp.selected)?;
        let fitted = Pipeline::new(self.cfg.partition()?, search.tuned).fit(&tr)?;
        if !fitted.model.converged {
            log::warn!("final SVR stopped at the iteration cap before meeting tol");
        }
        let ptr = fitted.predict(&tr)?;
        let pte = fitted.predict(&te)?;
        let train = compute_metrics(&tr.y().to_vec(), &ptr.to_vec())?;
        let testm = compute_metrics(&te.y().to_vec(), &pte.to_vec())?;
        let p = TrainPayload {
            params: search.tuned,
            features: imp.selected,
            n_train: tr.n_rows(),
            n_support: fitted.model.n_support(),
            n_iterations: fitted.model.n_iterations,
            converged: fitted.model.converged,
            r2_gap: train.r2 - testm.r2,
            train,
            test: testm,
            test_rows: te.row_ids().to_vec(),
            test_predictions: pte.to_vec(),
        };
        self.write_artifact("train", &p)?;
        self.write_csv_with("predictions.csv", |b| write_predictions_csv(&p, te.y().as_slice().unwrap_or(&[]), b))?;
        Ok(p)
    }

    pub fn crossval(&self) -> Result<CrossvalPayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let search: SearchPayload = self.read_artifact("search")?;
        let (_, _, subset) = self.split_sets(&sp)?;
        let data = select_features(&subset, &imp.selected)?;
        let pipe = Pipeline::new(self.cfg.partition()?, search.tuned);
        let result = cross_validate(&pipe, &data, self.cfg.crossval.folds, self.cfg.seeds.cv)?;
        let p = CrossvalPayload {
            folds: self.cfg.crossval.folds,
            seed: self.cfg.seeds.cv,
            n_rows: data.n_rows(),
            params: search.tuned,
            result,
        };
        self.write_artifact("crossval", &p)?;
        self.write_csv_with("cv_folds.csv", |b| write_folds_csv(&p.result, b))?;
        Ok(p)
    }

    pub fn ablate(&self) -> Result<AblationPayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let (_, test, subset) = self.split_sets(&sp)?;
        let base = self.cfg.base_svr();
        let a = &self.cfg.ablation;
        let acfg = AblationConfig {
            default_params: base,
            tuned_params: SvrParams {
                c: a.tuned_c,
                epsilon: a.tuned_epsilon,
                kernel: KernelSpec::rbf(a.tuned_gamma),
                ..base
            },
            subset_n: None,
            ..AblationConfig::new(imp.selected, self.cfg.partition()?)
        };
        let result = run_ablation(&subset, &test, &acfg)?;
        let p = AblationPayload {
            report: ablation_report(&result),
            result,
        };
        self.write_artifact("ablation", &p)?;
        self.write_csv_with("ablation.csv", |b| p.report.write_csv(b))?;
        Ok(p)
    }

    pub fn compare(&self) -> Result<ComparePayload> {
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let trained: TrainPayload = self.read_artifact("train")?;
        let (train, test, subset) = self.split_sets(&sp)?;
        let tr = select_features(&train, &imp.selected)?;
        let te = select_features(&test, &imp.selected)?;
        let part = self.cfg.partition()?;
        let c = &self.cfg;
        let yte = te.y().to_vec();
        let score = |pred: Vec<f64>| compute_metrics(&yte, &pred);
        fn fit_predict<E: Estimator>(part: &ColumnPartition, e: E, tr: &Dataset, te: &Dataset) -> Result<Vec<f64>> {
            Ok(Pipeline::new(part.clone(), e).fit(tr)?.predict(te)?.to_vec())
        }
        let forest = ForestParams {
            n_estimators: c.compare.forest_trees,
            seed: c.seeds.forest,
            ..ForestParams::default()
        };
        let tree = TreeParams {
            seed: c.seeds.forest,
            ..TreeParams::default()
        };
        let internal: Vec<(&str, &str, MetricsBundle)> = vec![
            ("Random Forest", "Ensemble", score(fit_predict(&part, forest, &tr, &te)?)?),
            ("K-Nearest Neighbours", "Distance-based", score(fit_predict(&part, Knn { k: c.compare.knn_k }, &tr, &te)?)?),
            ("Ridge Regression", "Regularised OLS", score(fit_predict(&part, Ridge { lambda: c.compare.ridge_lambda }, &tr, &te)?)?),
            ("Linear Regression", "Parametric baseline", score(fit_predict(&part, Ols, &tr, &te)?)?),
            ("Decision Tree", "Single tree", score(fit_predict(&part, tree, &tr, &te)?)?),
        ];
        let lin_data = select_features(&subset, &imp.selected)?;
        let lin_space = ParamSpace {
            kernel: KernelSpec::linear(),
            ..c.rbf_space()
        };
        let lin = randomized_search(&lin_data, &lin_space, &part, &self.search_config(c.compare.linear_n_iter))?;
        audit_disjoint(&lin.result.accessed_rows, &sp.test_rows)?;
        let lin_metrics = score(lin.refit.predict(&te)?.to_vec())?;

        let mut rows: Vec<CompareRow> = internal
            .into_iter()
            .map(|(m, n, b)| internal_row(m, n, &b))
            .collect();
        rows.push(internal_row("SVR-RBF (Tuned)", "This work", &trained.test));
        rows.push(internal_row("SVR-Linear Kernel", "Subset training", &lin_metrics));
        let mut external_sha256 = None;
        if let Some(path) = &c.compare.external_scores {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            external_sha256 = Some(sha256_hex(&bytes));
            let ext: ExternalFile = serde_json::from_slice(&bytes)
                .map_err(|e| Error::ConfigInvalid(format!("external scores {}: {e}", path.display())))?;
            let ext = match ext {
                ExternalFile::Rows(r) | ExternalFile::Wrapped { rows: r } => r,
            };
            for e in ext {
                if rows.iter().any(|r| r.model == e.model) {
                    return Err(Error::ConfigInvalid(format!("external model `{}` duplicates a computed row", e.model)));
                }
                if !e.r2.is_finite() {
                    return Err(Error::ConfigInvalid(format!("external model `{}` has a non-finite score", e.model)));
                }
                rows.push(CompareRow {
                    rank: 0,
                    model: e.model,
                    r2: e.r2,
                    rmse: e.rmse,
                    mae: e.mae,
                    notes: e.notes,
                    source: "external".into(),
                });
            }
        }
        rank_rows(&mut rows);
        let p = ComparePayload {
            rows,
            linear_search_best: lin.result.best_params,
            linear_search_score: lin.result.best_mean_score,
            external_sha256,
        };
        self.write_artifact("compare", &p)?;
        self.write_csv_with("comparison.csv", |b| write_compare_csv(&p.rows, b))?;
        Ok(p)
    }

    /// Merges every stage artifact; any missing or stale one is an error.
    pub fn report(&self) -> Result<RunReport> {
        let eda: EdaPayload = self.read_artifact("eda")?;
        let sp: SplitPayload = self.read_artifact("split")?;
        let imp: ImportancePayload = self.read_artifact("importance")?;
        let search: SearchPayload = self.read_artifact("search")?;
        let trained: TrainPayload = self.read_artifact("train")?;
        let cv: CrossvalPayload = self.read_artifact("crossval")?;
        let abl: AblationPayload = self.read_artifact("ablation")?;
        let cmp: ComparePayload = self.read_artifact("compare")?;
        let r = RunReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_owned(),
            config_hash: self.config_hash.clone(),
            config: self.cfg.clone(),
            dataset: DatasetSummary {
                dataset_sha256: sp.dataset_sha256.clone(),
                n_rows: sp.n_rows,
                n_train: sp.n_train,
                n_test: sp.n_test,
                n_subset: sp.n_subset,
                train_mean: sp.train_mean,
                test_mean: sp.test_mean,
                columns: eda.columns.clone(),
            },
            importance: imp.report.clone(),
            selected_features: imp.selected.clone(),
            search: search.result.clone(),
            final_metrics: FinalMetrics {
                params: trained.params,
                train: trained.train,
                test: trained.test,
                r2_gap: trained.r2_gap,
                n_support: trained.n_support,
                converged: trained.converged,
            },
            crossval: cv.result.clone(),
            ablation: abl.report.clone(),
            comparison: cmp.rows.clone(),
        };
        let mut text = serde_json::to_string_pretty(&r)?;
        text.push('\n');
        self.write_file("report.json", text.as_bytes())?;
        let (_, test, _) = self.split_sets(&sp)?;
        self.write_csv_with("summary.csv", |b| write_summary_csv(&eda.columns, b))?;
        self.write_csv_with("correlations.csv", |b| write_matrix_csv(&eda.correlation_labels, &eda.correlations, b))?;
        self.write_csv_with("importance.csv", |b| imp.report.write_csv(b))?;
        self.write_csv_with("search_trials.csv", |b| write_trials_csv(&search.result, b))?;
        self.write_csv_with("predictions.csv", |b| write_predictions_csv(&trained, test.y().as_slice().unwrap_or(&[]), b))?;
        self.write_csv_with("cv_folds.csv", |b| write_folds_csv(&cv.result, b))?;
        self.write_csv_with("ablation.csv", |b| abl.report.write_csv(b))?;
        self.write_csv_with("comparison.csv", |b| write_compare_csv(&cmp.rows, b))?;
        Ok(r)
    }
}

fn audit_disjoint(accessed: &[usize], test_rows: &[usize]) -> Result<()> {
    let test: std::collections::HashSet<usize> = test_rows.iter().copied().collect();
    if let Some(r) = accessed.iter().find(|r| test.contains(r)) {
        return Err(Error::InvalidArgument(format!("search touched held-out row {r}")));
    }
    Ok(())
}

fn internal_row(model: &str, notes: &str, m: &MetricsBundle) -> CompareRow {
    CompareRow {
        rank: 0,
        model: model.to_owned(),
        r2: m.r2,
        rmse: Some(m.rmse),
        mae: Some(m.mae),
        notes: notes.to_owned(),
        source: "internal".into(),
    }
}

/// Descending R²; equal scores order by model name.
pub fn rank_rows(rows: &mut [CompareRow]) {
    rows.sort_by(|a, b| b.r2.total_cmp(&a.r2).then_with(|| a.model.cmp(&b.model)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

type Buf = Vec<u8>;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<csv buffer>", e)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn write_summary_csv(cols: &[ColumnSummary], b: &mut Buf) -> Result<()> {
    writeln!(b, "column,mean,median,std,min,max,q1,q3").map_err(io_err)?;
    for c in cols {
        writeln!(
            b,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            c.name, c.mean, c.median, c.std, c.min, c.max, c.q1, c.q3
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn write_matrix_csv(labels: &[String], m: &[Vec<f64>], b: &mut Buf) -> Result<()> {
    writeln!(b, "column,{}", labels.join(",")).map_err(io_err)?;
    for (l, row) in labels.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(b, "{l},{}", cells.join(",")).map_err(io_err)?;
    }
    Ok(())
}

fn write_trials_csv(r: &SearchResult, b: &mut Buf) -> Result<()> {
    writeln!(b, "trial,c,epsilon,gamma,mean_r2,fold_r2").map_err(io_err)?;
    for t in &r.trials {
        let folds: Vec<String> = t.fold_scores.iter().map(|v| format!("{v:?}")).collect();
        writeln!(
            b,
            "{},{:?},{:?},{},{:?},{}",
            t.index,
            t.params.c,
            t.params.epsilon,
            t.params.gamma,
            t.mean_score,
            folds.join(";")
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn write_predictions_csv(p: &TrainPayload, actual: &[f64], b: &mut Buf) -> Result<()> {
    writeln!(b, "row_id,actual,predicted,residual").map_err(io_err)?;
    for ((id, y), yhat) in p.test_rows.iter().zip(actual).zip(&p.test_predictions) {
        writeln!(b, "{id},{y:?},{yhat:?},{:?}", y - yhat).map_err(io_err)?;
    }
    Ok(())
}

fn write_folds_csv(cv: &CvResult, b: &mut Buf) -> Result<()> {
    writeln!(b, "fold,r2,mean,ci_low,ci_high").map_err(io_err)?;
    for (i, s) in cv.fold_scores.iter().enumerate() {
        writeln!(b, "{},{s:?},{:?},{:?},{:?}", i + 1, cv.mean, cv.ci_low, cv.ci_high).map_err(io_err)?;
    }
    Ok(())
}

fn write_compare_csv(rows: &[CompareRow], b: &mut Buf) -> Result<()> {
    writeln!(b, "rank,model,r2,rmse,mae,source").map_err(io_err)?;
    for r in rows {
        writeln!(b, "{},{},{:?},{},{},{}", r.rank, r.model, r.r2, opt(r.rmse), opt(r.mae), r.source).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_layers_over_base() {
        let base = ExperimentConfig::fixture();
        let c = ExperimentConfig::from_toml_over(&base, "[search]\nn_iter = 3\ngamma = [\"scale\", 0.5]\n").unwrap();
        assert_eq!(c.search.n_iter, 3);
        assert_eq!(c.search.gamma, vec![Gamma::Scale, Gamma::Fixed(0.5)]);
        assert_eq!(c.split.subset_n, 100);
        assert!(c.data.fixture);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = ExperimentConfig::from_toml_over(&ExperimentConfig::default(), "[split]\ntest_frac = 0.2\n");
        assert!(matches!(e, Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn scaler_overrides() {
        let mut c = ExperimentConfig::fixture();
        c.scaler.robust = vec!["MedInc".into()];
        c.scaler.passthrough = vec!["Latitude".into()];
        let p = c.partition().unwrap();
        assert_eq!(p.get("MedInc"), Some(ScalerKind::Robust));
        assert_eq!(p.get("Latitude"), None);
        c.scaler.minmax = vec!["MedInc".into()];
        assert!(c.partition().is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = ExperimentConfig::fixture();
        c.split.test_fraction = 1.0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        let mut c = ExperimentConfig::default();
        c.data.path = PathBuf::from("/nonexistent/file.csv");
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn reference_table_ranks_svr_fourth() {
        let mut rows: Vec<CompareRow> = [
            ("Random Forest", 0.814),
            ("XGBoost", 0.832),
            ("Gradient Boosting", 0.783),
            ("SVR-RBF (Tuned)", 0.723),
            ("K-Nearest Neighbours", 0.668),
            ("Ridge Regression", 0.651),
            ("Linear Regression", 0.650),
            ("Lasso Regression", 0.650),
            ("Decision Tree", 0.608),
            ("SVR-Linear Kernel", 0.511),
        ]
        .iter()
        .map(|&(m, r2)| CompareRow {
            rank: 0,
            model: m.into(),
            r2,
            rmse: None,
            mae: None,
            notes: String::new(),
            source: "external".into(),
        })
        .collect();
        rank_rows(&mut rows);
        let svr = rows.iter().find(|r| r.model == "SVR-RBF (Tuned)").unwrap();
        assert_eq!((svr.rank, rows.len()), (4, 10));
    }

    #[test]
    fn ranking_is_descending_then_by_name() {
        let row = |m: &str, r2: f64| CompareRow {
            rank: 0,
            model: m.into(),
            r2,
            rmse: None,
            mae: None,
            notes: String::new(),
            source: "internal".into(),
        };
        let mut rows = vec![row("b", 0.5), row("a", 0.5), row("c", 0.9)];
        rank_rows(&mut rows);
        let order: Vec<(&str, usize)> = rows.iter().map(|r| (r.model.as_str(), r.rank)).collect();
        assert_eq!(order, vec![("c", 1), ("a", 2), ("b", 3)]);
    }
}
