//! Derived housing features and named feature subsets.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// The eight raw census columns the derived features are built from.
pub const RAW_FEATURES: [&str; 8] = [
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
];

/// Reference latitude for the coastal-distance feature.
pub const COASTAL_REFERENCE_LATITUDE: f64 = 34.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    IncomePerRoom,
    RoomValueScore,
    LocationScore,
    CoastalProximity,
    BedroomRatio,
    PopulationDensity,
    AgeIncomeInteraction,
    ModernizationScore,
    RoomsPerPerson,
    IncomeDensity,
}

impl Formula {
    pub const ALL: [Formula; 10] = [
        Formula::IncomePerRoom,
        Formula::RoomValueScore,
        Formula::LocationScore,
        Formula::CoastalProximity,
        Formula::BedroomRatio,
        Formula::PopulationDensity,
        Formula::AgeIncomeInteraction,
        Formula::ModernizationScore,
        Formula::RoomsPerPerson,
        Formula::IncomeDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Formula::IncomePerRoom => "Income_per_Room",
            Formula::RoomValueScore => "Room_Value_Score",
            Formula::LocationScore => "Location_Score",
            Formula::CoastalProximity => "Coastal_Proximity",
            Formula::BedroomRatio => "Bedroom_Ratio",
            Formula::PopulationDensity => "Population_Density",
            Formula::AgeIncomeInteraction => "Age_Income_Interaction",
            Formula::ModernizationScore => "Modernization_Score",
            Formula::RoomsPerPerson => "Rooms_per_Person",
            Formula::IncomeDensity => "Income_Density",
        }
    }

    /// Source columns, in argument order of [`Formula::apply`].
    pub fn inputs(self) -> (&'static str, &'static str) {
        match self {
            Formula::IncomePerRoom => ("MedInc", "AveRooms"),
            Formula::RoomValueScore => ("MedInc", "AveRooms"),
            Formula::LocationScore => ("Latitude", "Longitude"),
            Formula::CoastalProximity => ("Latitude", "Latitude"),
            Formula::BedroomRatio => ("AveBedrms", "AveRooms"),
            Formula::PopulationDensity => ("Population", "AveOccup"),
            Formula::AgeIncomeInteraction => ("HouseAge", "MedInc"),
            Formula::ModernizationScore => ("MedInc", "HouseAge"),
            Formula::RoomsPerPerson => ("AveRooms", "AveOccup"),
            Formula::IncomeDensity => ("MedInc", "Population"),
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Formula::IncomePerRoom => a / (b + 1.0),
            Formula::RoomValueScore => a * b,
            Formula::LocationScore => (a * b) / 1000.0,
            Formula::CoastalProximity => (a - COASTAL_REFERENCE_LATITUDE).abs(),
            Formula::BedroomRatio => a / (b + 1.0),
            Formula::PopulationDensity => a / (b + 1.0),
            Formula::AgeIncomeInteraction => a * b,
            Formula::ModernizationScore => a / (b + 1.0),
            Formula::RoomsPerPerson => a / (b + 1.0),
            Formula::IncomeDensity => (a * b) / 1000.0,
        }
    }

    /// The `+ 1` guarded denominator input, if this formula has one.
    fn guarded_input(self) -> Option<&'static str> {
        match self {
            Formula::IncomePerRoom
            | Formula::BedroomRatio
            | Formula::PopulationDensity
            | Formula::ModernizationScore
            | Formula::RoomsPerPerson => Some(self.inputs().1),
            _ => None,
        }
    }
}

/// A derived column: output name, source columns, formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub name: String,
    pub inputs: Vec<String>,
    pub formula: Formula,
}

impl From<Formula> for FeatureRecipe {
    fn from(f: Formula) -> Self {
        let (a, b) = f.inputs();
        let mut inputs = vec![a.to_owned()];
        if b != a {
            inputs.push(b.to_owned());
        }
        FeatureRecipe {
            name: f.name().to_owned(),
            inputs,
            formula: f,
        }
    }
}

pub fn default_recipes() -> Vec<FeatureRecipe> {
    Formula::ALL.into_iter().map(FeatureRecipe::from).collect()
}

/// Names of all 18 modelling columns: raw columns then derived, in recipe order.
pub fn engineered_columns() -> Vec<String> {
    RAW_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(Formula::ALL.iter().map(|f| f.name().to_owned()))
        .collect()
}

/// Appends the ten derived columns to a dataset carrying the raw census columns.
pub fn derive_features(ds: &Dataset) -> Result<Dataset> {
    for name in RAW_FEATURES {
        if ds.column_index(name).is_none() {
            return Err(Error::MissingSourceColumn(name.to_owned()));
        }
    }
    let col = |name: &str| ds.column_index(name).expect("checked above");

    let n = ds.n_rows();
    let mut extra = Array2::<f64>::zeros((n, Formula::ALL.len()));
    let x = ds.x();
    for (k, f) in Formula::ALL.into_iter().enumerate() {
        let (a, b) = f.inputs();
        let (ja, jb) = (col(a), col(b));
        for i in 0..n {
            extra[[i, k]] = f.apply(x[[i, ja]], x[[i, jb]]);
        }
        if let Some(g) = f.guarded_input() {
            let jg = col(g);
            if let Some(i) = (0..n).find(|&i| x[[i, jg]] + 1.0 <= 0.0) {
                log::warn!("{}: denominator {g} + 1 is not positive at row {i}", f.name());
            }
        }
    }

    let mut columns = ds.columns().to_vec();
    columns.extend(Formula::ALL.iter().map(|f| f.name().to_owned()));
    let joined = ndarray::concatenate(Axis(1), &[x.view(), extra.view()])
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    ds.with_features(columns, joined, "derive_features")
}

/// Ordered list of modelling columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSet(Vec<String>);

impl FeatureSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("empty feature set".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateColumn(n.clone()));
            }
        }
        Ok(FeatureSet(names))
    }

    pub fn raw() -> Self {
        FeatureSet(RAW_FEATURES.iter().map(|s| s.to_string()).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Restricts and reorders columns to `fs`; the target is untouched.
pub fn select_features(ds: &Dataset, fs: &FeatureSet) -> Result<Dataset> {
    let idx: Vec<usize> = fs
        .names()
        .iter()
        .map(|n| ds.column_index(n).ok_or_else(|| Error::UnknownFeature(n.clone())))
        .collect::<Result<_>>()?;
    if idx.iter().copied().eq(0..ds.n_cols()) {
        return Ok(ds.clone());
    }
    let x = ds.x().select(Axis(1), &idx);
    ds.with_features(fs.names().to_vec(), x, &format!("select_features({})", fs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn one_row(values: [f64; 8]) -> Dataset {
        let x = Array2::from_shape_vec((1, 8), values.to_vec()).unwrap();
        Dataset::new(
            RAW_FEATURES.iter().map(|s| s.to_string()).collect(),
            "MedHouseVal",
            x,
            Array1::from(vec![1.0]),
            "t",
        )
        .unwrap()
    }

    fn get(ds: &Dataset, name: &str) -> f64 {
        ds.column(name).unwrap()[0]
    }

    #[test]
    fn income_per_room_and_room_value() {
        let ds = derive_features(&one_row([3.0, 10.0, 5.0, 1.0, 100.0, 2.0, 36.0, -120.0])).unwrap();
        assert_eq!(ds.n_cols(), 18);
        assert_eq!(get(&ds, "Income_per_Room"), 0.5);
        assert_eq!(get(&ds, "Room_Value_Score"), 15.0);
    }

    #[test]
    fn coastal_reference_latitude_is_zero() {
        let ds = derive_features(&one_row([3.0, 10.0, 5.0, 1.0, 100.0, 2.0, 34.05, -118.0])).unwrap();
        assert_eq!(get(&ds, "Coastal_Proximity"), 0.0);
    }

    #[test]
    fn zero_house_age_guard() {
        let ds = derive_features(&one_row([4.0, 0.0, 5.0, 1.0, 100.0, 2.0, 36.0, -120.0])).unwrap();
        assert_eq!(get(&ds, "Modernization_Score"), 4.0);
        assert_eq!(get(&ds, "Age_Income_Interaction"), 0.0);
    }

    #[test]
    fn derived_columns_follow_raw_in_recipe_order() {
        let ds = derive_features(&one_row([1.0; 8])).unwrap();
        assert_eq!(ds.columns(), engineered_columns().as_slice());
    }

    #[test]
    fn missing_source_column() {
        let x = Array2::zeros((1, 1));
        let ds = Dataset::new(vec!["MedInc".into()], "y", x, Array1::zeros(1), "t").unwrap();
        assert!(matches!(derive_features(&ds), Err(Error::MissingSourceColumn(c)) if c == "HouseAge"));
    }

    #[test]
    fn select_identity_and_unknown() {
        let ds = derive_features(&one_row([1.0; 8])).unwrap();
        let all = FeatureSet::new(ds.columns().to_vec()).unwrap();
        assert_eq!(select_features(&ds, &all).unwrap(), ds);
        let bad = FeatureSet::new(["MedInc", "Nonexistent"]).unwrap();
        assert!(matches!(select_features(&ds, &bad), Err(Error::UnknownFeature(n)) if n == "Nonexistent"));
        let pick = FeatureSet::new(["Latitude", "MedInc"]).unwrap();
        let s = select_features(&ds, &pick).unwrap();
        assert_eq!(s.columns(), pick.names());
        assert_eq!(s.x()[[0, 1]], 1.0);
        assert_eq!(s.y(), ds.y());
    }
}
