//! Column-partitioned scaling with statistics frozen on training rows.
//!
//! A [`FittedPreprocessor`] can only be produced by [`fit_preprocessor`] and
//! has no way to refit itself, so callers that fit on a fold's training part
//! and then transform its validation part cannot leak validation statistics.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    /// (x − mean) / population std
    Standard,
    /// (x − min) / (max − min)
    MinMax,
    /// (x − median) / (Q3 − Q1)
    Robust,
}

/// Column name → scaler. Columns not in the map pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnPartition(BTreeMap<String, ScalerKind>);

impl ColumnPartition {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a partition from scaler groups; a column listed twice is an error.
    pub fn from_groups<I, S>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ScalerKind, Vec<S>)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (kind, cols) in groups {
            for c in cols {
                let c = c.into();
                if map.insert(c.clone(), kind).is_some() {
                    return Err(Error::DuplicateColumn(c));
                }
            }
        }
        Ok(ColumnPartition(map))
    }

    /// Maps `column` to `kind`, or unmaps it when `kind` is `None`.
    pub fn set(&mut self, column: &str, kind: Option<ScalerKind>) {
        match kind {
            Some(k) => {
                self.0.insert(column.to_owned(), k);
            }
            None => {
                self.0.remove(column);
            }
        }
    }

    pub fn get(&self, column: &str) -> Option<ScalerKind> {
        self.0.get(column).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ScalerKind)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Keeps only the mappings for columns in `columns`.
    pub fn restricted_to(&self, columns: &[String]) -> Self {
        ColumnPartition(
            self.0
                .iter()
                .filter(|(k, _)| columns.contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        )
    }

    /// Columns grouped by scaler, for config files and reports.
    pub fn groups(&self) -> BTreeMap<ScalerKind, Vec<String>> {
        let mut out: BTreeMap<ScalerKind, Vec<String>> = BTreeMap::new();
        for (k, v) in &self.0 {
            out.entry(*v).or_default().push(k.clone());
        }
        out
    }
}

/// Feature-specific scaling for the 18 engineered housing columns: robust
/// scaling for heavy-tailed counts and ratios, min-max for bounded
/// coordinates and age, standardization for the rest.
pub fn default_partition() -> ColumnPartition {
    ColumnPartition::from_groups([
        (
            ScalerKind::Robust,
            vec![
                "AveRooms",
                "AveBedrms",
                "Population",
                "AveOccup",
                "Room_Value_Score",
                "Population_Density",
                "Income_Density",
            ],
        ),
        (
            ScalerKind::MinMax,
            vec!["Latitude", "Longitude", "HouseAge", "Location_Score", "Coastal_Proximity"],
        ),
        (
            ScalerKind::Standard,
            vec![
                "MedInc",
                "Income_per_Room",
                "Age_Income_Interaction",
                "Modernization_Score",
                "Rooms_per_Person",
                "Bedroom_Ratio",
            ],
        ),
    ])
    .expect("default partition has no repeated columns")
}

/// Frozen statistics for one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnScaler {
    Standard { mean: f64, std: f64 },
    MinMax { min: f64, max: f64 },
    Robust { median: f64, iqr: f64 },
}

impl ColumnScaler {
    pub fn fit(kind: ScalerKind, values: &[f64]) -> Self {
        match kind {
            ScalerKind::Standard => ColumnScaler::Standard {
                mean: stats::mean(values),
                std: stats::std_dev(values),
            },
            ScalerKind::MinMax => {
                let (min, max) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                ColumnScaler::MinMax { min, max }
            }
            ScalerKind::Robust => {
                let sorted = stats::sorted_copy(values);
                let q1 = stats::quantile_sorted(&sorted, 0.25);
                let q3 = stats::quantile_sorted(&sorted, 0.75);
                ColumnScaler::Robust {
                    median: stats::quantile_sorted(&sorted, 0.5),
                    iqr: q3 - q1,
                }
            }
        }
    }

    pub fn kind(&self) -> ScalerKind {
        match self {
            ColumnScaler::Standard { .. } => ScalerKind::Standard,
            ColumnScaler::MinMax { .. } => ScalerKind::MinMax,
            ColumnScaler::Robust { .. } => ScalerKind::Robust,
        }
    }

    fn center_scale(&self) -> (f64, f64) {
        match *self {
            ColumnScaler::Standard { mean, std } => (mean, std),
            ColumnScaler::MinMax { min, max } => (min, max - min),
            ColumnScaler::Robust { median, iqr } => (median, iqr),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.center_scale().1 == 0.0
    }

    /// Degenerate statistics map every value to zero.
    pub fn transform(&self, v: f64) -> f64 {
        let (c, s) = self.center_scale();
        if s == 0.0 {
            0.0
        } else {
            (v - c) / s
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        let (c, s) = self.center_scale();
        z * s + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocessor {
    columns: Vec<String>,
    scalers: Vec<Option<ColumnScaler>>,
    fitted_on: usize,
}

impl FittedPreprocessor {
    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }

    pub fn scaler(&self, column: &str) -> Option<&ColumnScaler> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.scalers[j].as_ref()
    }

    fn check_schema(&self, ds: &Dataset) -> Result<()> {
        if ds.columns() != self.columns.as_slice() {
            return Err(Error::SchemaMismatch {
                expected: self.columns.clone(),
                found: ds.columns().to_vec(),
            });
        }
        Ok(())
    }

    fn map(&self, ds: &Dataset, f: impl Fn(&ColumnScaler, f64) -> f64, note: &str) -> Result<Dataset> {
        self.check_schema(ds)?;
        let mut x: Array2<f64> = ds.x().clone();
        for (j, sc) in self.scalers.iter().enumerate() {
            if let Some(sc) = sc {
                x.column_mut(j).mapv_inplace(|v| f(sc, v));
            }
        }
        ds.with_features(self.columns.clone(), x, note)
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.map(ds, |sc, v| sc.transform(v), "scaled")
    }

    pub fn inverse_transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check_schema(ds)?;
        for (c, sc) in self.columns.iter().zip(&self.scalers) {
            if sc.is_some_and(|s| s.is_degenerate()) {
                return Err(Error::DegenerateColumn(c.clone()));
            }
        }
        self.map(ds, |sc, z| sc.inverse(z), "unscaled")
    }
}

/// Freezes per-column statistics from `train`. Every mapped column must
/// exist in `train`.
pub fn fit_preprocessor(train: &Dataset, partition: &ColumnPartition) -> Result<FittedPreprocessor> {
    for (c, _) in partition.iter() {
        if train.column_index(c).is_none() {
            return Err(Error::UnknownColumn(c.to_owned()));
        }
    }
    if train.n_rows() < 2 {
        return Err(Error::InvalidArgument("preprocessor needs at least two rows".into()));
    }
    let scalers = train
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            partition
                .get(c)
                .map(|kind| ColumnScaler::fit(kind, &train.x().column(j).to_vec()))
        })
        .collect();
    Ok(FittedPreprocessor {
        columns: train.columns().to_vec(),
        scalers,
        fitted_on: train.n_rows(),
    })
}
