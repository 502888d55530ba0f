//! Estimator traits and the scale-then-fit pipeline shared by every model.

use ndarray::{Array1, Array2};

use crate::dataset::Dataset;
use crate::error::Result;
use crate::preprocess::{fit_preprocessor, ColumnPartition, FittedPreprocessor};

/// A fitted model over a raw feature matrix.
pub trait Model: Send + Sync {
    fn predict(&self, x: &Array2<f64>) -> Result<Array1<f64>>;
}

/// Hyperparameters of a model family; `fit` produces a [`Model`].
pub trait Estimator: Send + Sync {
    type Model: Model;

    fn fit(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<Self::Model>;
}

/// Something that can be trained on a [`Dataset`] and then predict one.
/// Cross-validation and search only see this trait.
pub trait Regressor: Send + Sync {
    type Fitted: Predictor;

    fn fit(&self, train: &Dataset) -> Result<Self::Fitted>;
}

pub trait Predictor: Send + Sync {
    fn predict(&self, ds: &Dataset) -> Result<Array1<f64>>;
}

/// Column-partitioned scaling followed by an estimator. The partition is
/// restricted to the columns present in the training data, so the same
/// pipeline serves raw and engineered feature sets.
#[derive(Debug, Clone)]
pub struct Pipeline<E> {
    pub partition: ColumnPartition,
    pub estimator: E,
}

impl<E> Pipeline<E> {
    pub fn new(partition: ColumnPartition, estimator: E) -> Self {
        Pipeline { partition, estimator }
    }

    /// No scaling at all.
    pub fn unscaled(estimator: E) -> Self {
        Pipeline {
            partition: ColumnPartition::empty(),
            estimator,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPipeline<M> {
    pub preprocessor: FittedPreprocessor,
    pub model: M,
}

impl<E: Estimator> Regressor for Pipeline<E> {
    type Fitted = FittedPipeline<E::Model>;

    fn fit(&self, train: &Dataset) -> Result<Self::Fitted> {
        let partition = self.partition.restricted_to(train.columns());
        let preprocessor = fit_preprocessor(train, &partition)?;
        let scaled = preprocessor.transform(train)?;
        let model = self.estimator.fit(scaled.x(), scaled.y())?;
        Ok(FittedPipeline { preprocessor, model })
    }
}

impl<M: Model> Predictor for FittedPipeline<M> {
    fn predict(&self, ds: &Dataset) -> Result<Array1<f64>> {
        let scaled = self.preprocessor.transform(ds)?;
        self.model.predict(scaled.x())
    }
}
