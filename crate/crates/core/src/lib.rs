//! Support vector regression toolkit and experiment harness for tabular
//! housing-price data.

pub mod ablation;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod importance;
pub mod kernel;
pub mod model_selection;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod svr;
pub mod trees;

pub use error::{Error, Result};
