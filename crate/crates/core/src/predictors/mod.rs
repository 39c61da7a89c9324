//! Regression backends used for imputation.
//!
//! All backends share one contract: [`fit`] on a [`TrainingSet`] yields a
//! [`FittedModel`] whose [`FittedModel::predict`] is deterministic. The seed
//! is only consumed by the forest.

mod forest;
pub(crate) mod ols;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{ForestConfig, RandomForest};
pub use ols::OlsModel;

/// Dense row-major design matrix with a response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Vec<f64>,
    responses: Vec<f64>,
    n_features: usize,
}

impl TrainingSet {
    pub fn new(rows: &[Vec<f64>], responses: Vec<f64>) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for row in rows {
            if row.len() != n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        Self::from_flat(features, responses, n_features)
    }

    pub fn from_flat(features: Vec<f64>, responses: Vec<f64>, n_features: usize) -> Result<Self> {
        if features.len() != responses.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: responses.len() * n_features,
                got: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features"));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training responses"));
        }
        Ok(Self {
            features,
            responses,
            n_features,
        })
    }

    /// Starts an empty set to be filled with [`TrainingSet::push`].
    pub(crate) fn with_capacity(rows: usize, n_features: usize) -> Self {
        Self {
            features: Vec::with_capacity(rows * n_features),
            responses: Vec::with_capacity(rows),
            n_features,
        }
    }

    pub(crate) fn push(&mut self, row: &[f64], response: f64) {
        debug_assert_eq!(row.len(), self.n_features);
        self.features.extend_from_slice(row);
        self.responses.push(response);
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features"));
        }
        if self.responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training responses"));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.responses.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Copy without the rows where `drop` is true.
    pub fn without(&self, drop: impl Fn(usize) -> bool) -> Self {
        let mut out = Self::with_capacity(self.n_rows(), self.n_features);
        for i in (0..self.n_rows()).filter(|&i| !drop(i)) {
            out.push(self.row(i), self.responses[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mean,
    Ols,
    Forest,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mean => "mean",
            BackendKind::Ols => "ols",
            BackendKind::Forest => "forest",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(BackendKind::Mean),
            "ols" => Ok(BackendKind::Ols),
            "forest" => Ok(BackendKind::Forest),
            other => Err(Error::InvalidConfig(format!("unknown backend '{other}'"))),
        }
    }
}

/// A backend together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Backend {
    Mean,
    #[default]
    Ols,
    Forest(ForestConfig),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Mean => BackendKind::Mean,
            Backend::Ols => BackendKind::Ols,
            Backend::Forest(_) => BackendKind::Forest,
        }
    }
}

impl From<BackendKind> for Backend {
    fn from(kind: BackendKind) -> Self {
        match kind {
            BackendKind::Mean => Backend::Mean,
            BackendKind::Ols => Backend::Ols,
            BackendKind::Forest => Backend::Forest(ForestConfig::default()),
        }
    }
}

/// Predicts the training mean regardless of features.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    mean: f64,
    n_features: usize,
}

impl MeanModel {
    pub fn fit(ts: &TrainingSet) -> Result<Self> {
        if ts.n_rows() == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let mean = ts.responses().iter().sum::<f64>() / ts.n_rows() as f64;
        Ok(Self {
            mean,
            n_features: ts.n_features(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Mean(MeanModel),
    Ols(OlsModel),
    Forest(RandomForest),
}

pub fn fit(backend: &Backend, ts: &TrainingSet, seed: u64) -> Result<FittedModel> {
    if ts.n_rows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    match backend {
        Backend::Mean => MeanModel::fit(ts).map(FittedModel::Mean),
        Backend::Ols => OlsModel::fit(ts).map(FittedModel::Ols),
        Backend::Forest(cfg) => RandomForest::fit(cfg, ts, seed).map(FittedModel::Forest),
    }
}

impl FittedModel {
    pub fn kind(&self) -> BackendKind {
        match self {
            FittedModel::Mean(_) => BackendKind::Mean,
            FittedModel::Ols(_) => BackendKind::Ols,
            FittedModel::Forest(_) => BackendKind::Forest,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Mean(m) => m.n_features,
            FittedModel::Ols(m) => m.n_features(),
            FittedModel::Forest(m) => m.n_features(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction input"));
        }
        Ok(match self {
            FittedModel::Mean(m) => m.mean,
            FittedModel::Ols(m) => m.predict_unchecked(x),
            FittedModel::Forest(m) => m.predict_unchecked(x),
        })
    }
}

/// Fits on `ts` and also predicts, for every group, its queries from a model
/// that never saw that group's rows.
///
/// `groups[r]` names the group of training row `r`; `queries[g]` lists the
/// feature vectors to predict for group `g`. Mean and least-squares backends
/// refit once per group. The forest reuses its single fit and averages only
/// the trees whose bootstrap sample excluded every row of the group. Groups
/// whose removal leaves no training rows get NaN predictions.
pub fn fit_with_holdouts(
    backend: &Backend,
    ts: &TrainingSet,
    groups: &[usize],
    queries: &[Vec<Vec<f64>>],
    seed: u64,
) -> Result<(FittedModel, Vec<Vec<f64>>)> {
    if groups.len() != ts.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: ts.n_rows(),
            got: groups.len(),
        });
    }
    let model = fit(backend, ts, seed)?;
    let held_out = match &model {
        FittedModel::Forest(forest) => queries
            .iter()
            .enumerate()
            .map(|(g, qs)| {
                let rows: Vec<usize> = (0..groups.len()).filter(|&r| groups[r] == g).collect();
                qs.iter()
                    .map(|x| forest.predict_out_of_bag(x, &rows))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
        _ => queries
            .iter()
            .enumerate()
            .map(|(g, qs)| {
                if qs.is_empty() {
                    return Ok(Vec::new());
                }
                let sub = ts.without(|r| groups[r] == g);
                if sub.n_rows() == 0 {
                    return Ok(vec![f64::NAN; qs.len()]);
                }
                let m = fit(backend, &sub, seed)?;
                qs.iter().map(|x| m.predict(x)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok((model, held_out))
}
