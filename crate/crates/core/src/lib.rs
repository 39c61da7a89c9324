//! Covariate adjustment for paired randomized experiments.
//!
//! Each pair is left out in turn, its potential differences are imputed from
//! the remaining pairs, and the imputations are combined into an unbiased
//! estimate of the average treatment effect together with a conservative
//! plug-in variance. Imputation can ignore the pairing (fit on individual
//! units), use it (fit on pair-level differences), or blend the two with a
//! leave-one-out interpolation weight.
//!
//! Module map:
//!
//! - [`dataset`]: validated paired data, CSV ingestion, pair-level encodings
//!   and fully specified synthetic experiments.
//! - [`predictors`]: mean, least-squares and random-forest regressors behind a
//!   single fit/predict contract.
//! - [`imputation`]: the three leave-one-out imputation strategies.
//! - [`estimator`]: point and variance estimation plus comparison estimators.
//! - [`simulation`]: synthetic data-generating processes, the Monte Carlo
//!   harness and the exhaustive assignment enumerator.
//! - [`cli`]: the `ploop` command-line front end.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod imputation;
pub mod predictors;
pub mod seed;
pub mod simulation;

pub use dataset::{Encoding, PairView, PairedDataset, SyntheticExperiment, UnitRecord};
pub use error::{Error, Result};
pub use estimator::{EstimateResult, EstimationConfig, Method};
pub use imputation::ImputationResult;
pub use predictors::{Backend, BackendKind, FittedModel, ForestConfig, TrainingSet};
