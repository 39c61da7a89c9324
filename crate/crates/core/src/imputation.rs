//! Leave-one-pair-out imputation of potential differences.
//!
//! For every pair `i` the two potential differences `a_i` and `b_i` are
//! imputed from models that never see pair `i`, so `d_hat_i` is independent
//! of the pair's own assignment. Three strategies are provided:
//!
//! - [`impute_outcomes_separately`] ignores the pairing and fits one model on
//!   individual units, with the treatment indicator as a feature.
//! - [`impute_differences_directly`] treats each pair as a unit and regresses
//!   the observed differences on encoded pair features.
//! - [`impute_interpolated`] blends the two with per-pair weights fitted on
//!   the other pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Encoding, PairedDataset};
use crate::error::{Error, Result};
use crate::predictors::{fit, fit_with_holdouts, Backend, BackendKind, FittedModel, TrainingSet};
use crate::seed::{self, tag};

/// Relative size below which an interpolation denominator counts as zero.
const DEGENERATE_DENOMINATOR: f64 = 1e-12;
/// Weight used when the other pairs carry no information about the blend.
pub const DEFAULT_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMethod {
    Outcomes,
    Differences,
    Interpolated,
}

/// Interpolation weights of one pair, one per potential difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub a: f64,
    pub b: f64,
}

/// Predictions of `a_k`, `b_k` from models fitted without pairs `i` and `k`,
/// indexed `[i][k]`. Diagonal entries are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutPredictions {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    pub a_hat: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// Present only for [`ImputationMethod::Interpolated`].
    pub alpha: Option<Vec<PairWeights>>,
    pub method: ImputationMethod,
    pub backend: BackendKind,
    pub encoding: Option<Encoding>,
    /// Leave-two-out predictions, kept when requested for interpolation.
    pub holdout: Option<HoldoutPredictions>,
}

impl ImputationResult {
    fn from_differences(
        a_hat: Vec<f64>,
        b_hat: Vec<f64>,
        method: ImputationMethod,
        backend: BackendKind,
        encoding: Option<Encoding>,
    ) -> Self {
        let d_hat = a_hat.iter().zip(&b_hat).map(|(a, b)| 0.5 * (a - b)).collect();
        Self {
            a_hat,
            b_hat,
            d_hat,
            alpha: None,
            method,
            backend,
            encoding,
            holdout: None,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.d_hat.len()
    }

    /// Every interpolation weight (both arms), if any.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha.iter().flatten().flat_map(|w| [w.a, w.b])
    }
}

struct PairOutput {
    a: f64,
    b: f64,
    holdout: Option<(Vec<f64>, Vec<f64>)>,
}

fn check_pairs(ds: &PairedDataset) -> Result<()> {
    if ds.n_pairs() < 2 {
        return Err(Error::TooFewPairs(ds.n_pairs()));
    }
    Ok(())
}

fn unit_features(treated: bool, z: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(z.len() + 1);
    x.push(if treated { 1.0 } else { 0.0 });
    x.extend_from_slice(z);
    x
}

/// Potential differences of one pair from a unit-level model:
/// `a = t1 - c2`, `b = t2 - c1`.
fn unit_model_differences(model: &FittedModel, z1: &[f64], z2: &[f64]) -> Result<(f64, f64)> {
    let [t1, c1, t2, c2] = unit_queries(z1, z2).map(|x| model.predict(&x));
    Ok((t1? - c2?, t2? - c1?))
}

fn unit_queries(z1: &[f64], z2: &[f64]) -> [Vec<f64>; 4] {
    [
        unit_features(true, z1),
        unit_features(false, z1),
        unit_features(true, z2),
        unit_features(false, z2),
    ]
}

fn collect(
    outputs: Vec<PairOutput>,
    method: ImputationMethod,
    backend: BackendKind,
    encoding: Option<Encoding>,
) -> ImputationResult {
    let a_hat = outputs.iter().map(|o| o.a).collect();
    let b_hat = outputs.iter().map(|o| o.b).collect();
    let mut result = ImputationResult::from_differences(a_hat, b_hat, method, backend, encoding);
    if outputs.iter().all(|o| o.holdout.is_some()) {
        let (a, b) = outputs.into_iter().filter_map(|o| o.holdout).unzip();
        result.holdout = Some(HoldoutPredictions { a, b });
    }
    result
}

fn outcomes_impl(
    ds: &PairedDataset,
    backend: &Backend,
    seed: u64,
    holdouts: bool,
) -> Result<ImputationResult> {
    check_pairs(ds)?;
    let n = ds.n_pairs();
    let p = ds.q() + 1;
    let pairs = ds.pairs();
    let outputs = (0..n)
        .into_par_iter()
        .map(|i| -> Result<PairOutput> {
            let mut ts = TrainingSet::with_capacity(2 * (n - 1), p);
            let mut groups = Vec::with_capacity(2 * (n - 1));
            for (k, pair) in pairs.iter().enumerate().filter(|(k, _)| *k != i) {
                for unit in pair.units() {
                    ts.push(&unit_features(unit.treated, &unit.covariates), unit.outcome);
                    groups.push(k);
                }
            }
            ts.check_finite()?;
            let model_seed = seed::derive(seed, &[tag::OUTCOME_MODEL, i as u64]);
            let [u1, u2] = pairs[i].units();
            if !holdouts {
                let model = fit(backend, &ts, model_seed)?;
                let (a, b) = unit_model_differences(&model, &u1.covariates, &u2.covariates)?;
                return Ok(PairOutput { a, b, holdout: None });
            }
            let queries: Vec<Vec<Vec<f64>>> = pairs
                .iter()
                .enumerate()
                .map(|(k, pair)| {
                    if k == i {
                        return Vec::new();
                    }
                    let [v1, v2] = pair.units();
                    unit_queries(&v1.covariates, &v2.covariates).to_vec()
                })
                .collect();
            let (model, held) = fit_with_holdouts(backend, &ts, &groups, &queries, model_seed)?;
            let (a, b) = unit_model_differences(&model, &u1.covariates, &u2.covariates)?;
            let mut ha = vec![f64::NAN; n];
            let mut hb = vec![f64::NAN; n];
            for (k, pred) in held.iter().enumerate().filter(|(k, _)| *k != i) {
                // pred = [t1, c1, t2, c2]
                ha[k] = pred[0] - pred[3];
                hb[k] = pred[2] - pred[1];
            }
            Ok(PairOutput {
                a,
                b,
                holdout: Some((ha, hb)),
            })
        })
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.at_pair(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(outputs, ImputationMethod::Outcomes, backend.kind(), None))
}

fn differences_impl(
    ds: &PairedDataset,
    backend: &Backend,
    encoding: Encoding,
    seed: u64,
    holdouts: bool,
) -> Result<ImputationResult> {
    check_pairs(ds)?;
    let n = ds.n_pairs();
    let p = 2 * ds.q();
    let views = ds.views(encoding);
    let outputs = (0..n)
        .into_par_iter()
        .map(|i| -> Result<PairOutput> {
            let mut ts_a = TrainingSet::with_capacity(n - 1, p);
            let mut ts_b = TrainingSet::with_capacity(n - 1, p);
            let mut groups = Vec::with_capacity(n - 1);
            for (k, v) in views.iter().enumerate().filter(|(k, _)| *k != i) {
                ts_a.push(&v.z_a, v.w);
                ts_b.push(&v.z_b, v.w);
                groups.push(k);
            }
            ts_a.check_finite()?;
            let seed_a = seed::derive(seed, &[tag::DIFF_MODEL_A, i as u64]);
            let seed_b = seed::derive(seed, &[tag::DIFF_MODEL_B, i as u64]);
            let query = &views[i].z;
            if !holdouts {
                let a = fit(backend, &ts_a, seed_a)?.predict(query)?;
                let b = fit(backend, &ts_b, seed_b)?.predict(query)?;
                return Ok(PairOutput { a, b, holdout: None });
            }
            let queries: Vec<Vec<Vec<f64>>> = views
                .iter()
                .enumerate()
                .map(|(k, v)| if k == i { Vec::new() } else { vec![v.z.clone()] })
                .collect();
            let (model_a, held_a) = fit_with_holdouts(backend, &ts_a, &groups, &queries, seed_a)?;
            let (model_b, held_b) = fit_with_holdouts(backend, &ts_b, &groups, &queries, seed_b)?;
            let flatten = |held: Vec<Vec<f64>>| -> Vec<f64> {
                held.into_iter()
                    .map(|v| v.first().copied().unwrap_or(f64::NAN))
                    .collect()
            };
            Ok(PairOutput {
                a: model_a.predict(query)?,
                b: model_b.predict(query)?,
                holdout: Some((flatten(held_a), flatten(held_b))),
            })
        })
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.at_pair(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(
        outputs,
        ImputationMethod::Differences,
        backend.kind(),
        Some(encoding),
    ))
}

/// Imputes all four potential outcomes of each left-out pair from one model
/// fitted on the remaining individual units, with features `(T, Z)`.
pub fn impute_outcomes_separately(
    ds: &PairedDataset,
    backend: &Backend,
    seed: u64,
) -> Result<ImputationResult> {
    outcomes_impl(ds, backend, seed, false)
}

/// Like [`impute_outcomes_separately`], additionally keeping the
/// leave-two-out predictions that [`interpolate`] needs.
pub fn impute_outcomes_separately_with_holdouts(
    ds: &PairedDataset,
    backend: &Backend,
    seed: u64,
) -> Result<ImputationResult> {
    outcomes_impl(ds, backend, seed, true)
}

/// Imputes `a_i` and `b_i` from pair-level models: model A regresses the
/// observed differences on treated-first features, model B on control-first
/// features, and both are evaluated at the left-out pair's features in
/// original unit order.
pub fn impute_differences_directly(
    ds: &PairedDataset,
    backend: &Backend,
    encoding: Encoding,
    seed: u64,
) -> Result<ImputationResult> {
    differences_impl(ds, backend, encoding, seed, false)
}

pub fn impute_differences_directly_with_holdouts(
    ds: &PairedDataset,
    backend: &Backend,
    encoding: Encoding,
    seed: u64,
) -> Result<ImputationResult> {
    differences_impl(ds, backend, encoding, seed, true)
}

/// Runs both strategies and blends them with [`interpolate`].
pub fn impute_interpolated(
    ds: &PairedDataset,
    backend: &Backend,
    encoding: Encoding,
    seed: u64,
) -> Result<ImputationResult> {
    let outcomes = impute_outcomes_separately_with_holdouts(ds, backend, seed)?;
    let differences = impute_differences_directly_with_holdouts(ds, backend, encoding, seed)?;
    interpolate(ds, &outcomes, &differences)
}

/// Least-squares blend weight of `first` against `second` for `targets`,
/// clipped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFit {
    /// Unclipped minimizer; `None` when the problem is degenerate.
    pub raw: Option<f64>,
    pub alpha: f64,
}

pub fn interpolation_weight(targets: &[f64], first: &[f64], second: &[f64]) -> WeightFit {
    let (mut num, mut den, mut scale) = (0.0, 0.0, 0.0);
    for ((y, p1), p2) in targets.iter().zip(first).zip(second) {
        let gap = p1 - p2;
        num += (y - p2) * gap;
        den += gap * gap;
        scale += 0.5 * (p1 * p1 + p2 * p2);
    }
    let m = targets.len();
    if m == 0 || den <= 0.0 || den < DEGENERATE_DENOMINATOR * scale / m as f64 {
        return WeightFit {
            raw: None,
            alpha: DEFAULT_WEIGHT,
        };
    }
    let raw = num / den;
    WeightFit {
        raw: Some(raw),
        alpha: raw.clamp(0.0, 1.0),
    }
}

/// Squared-error loss of the blend `x * first + (1 - x) * second`.
pub fn interpolation_loss(targets: &[f64], first: &[f64], second: &[f64], x: f64) -> f64 {
    targets
        .iter()
        .zip(first)
        .zip(second)
        .map(|((y, p1), p2)| {
            let r = y - (x * p1 + (1.0 - x) * p2);
            r * r
        })
        .sum()
}

/// Training data behind one interpolation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProblem {
    pub targets: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl WeightProblem {
    pub fn fit(&self) -> WeightFit {
        interpolation_weight(&self.targets, &self.first, &self.second)
    }

    pub fn loss(&self, x: f64) -> f64 {
        interpolation_loss(&self.targets, &self.first, &self.second, x)
    }
}

/// For pair `i`, the weight problems for `a` (other treated-first pairs) and
/// `b` (other control-first pairs), built from leave-two-out predictions.
pub fn weight_problems(
    ds: &PairedDataset,
    first: &ImputationResult,
    second: &ImputationResult,
    i: usize,
) -> Result<[WeightProblem; 2]> {
    let (h1, h2) = match (&first.holdout, &second.holdout) {
        (Some(h1), Some(h2)) => (h1, h2),
        _ => {
            return Err(Error::InvalidConfig(
                "interpolation needs imputations computed with holdout predictions".into(),
            ))
        }
    };
    let n = ds.n_pairs();
    if first.n_pairs() != n || second.n_pairs() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: first.n_pairs().min(second.n_pairs()),
        });
    }
    let assignments = ds.assignments();
    let w = ds.observed_differences();
    let mut problems = [
        WeightProblem {
            targets: vec![],
            first: vec![],
            second: vec![],
        },
        WeightProblem {
            targets: vec![],
            first: vec![],
            second: vec![],
        },
    ];
    for k in (0..n).filter(|&k| k != i) {
        // a_k is observed exactly when unit 1 of pair k is treated.
        let (arm, p1, p2) = if assignments[k] {
            (0, h1.a[i][k], h2.a[i][k])
        } else {
            (1, h1.b[i][k], h2.b[i][k])
        };
        if p1.is_nan() || p2.is_nan() {
            continue;
        }
        problems[arm].targets.push(w[k]);
        problems[arm].first.push(p1);
        problems[arm].second.push(p2);
    }
    Ok(problems)
}

/// Blends `first` (pair-agnostic) and `second` (pair-aware) imputations.
///
/// The weight for pair `i` minimizes the squared error of the blend over the
/// other pairs whose potential difference is observed, using predictions
/// that exclude both pair `i` and the pair being scored. It is clipped to
/// `[0, 1]` and falls back to 0.5 when no other pair is informative. `a` and
/// `b` get separate weights.
pub fn interpolate(
    ds: &PairedDataset,
    first: &ImputationResult,
    second: &ImputationResult,
) -> Result<ImputationResult> {
    let n = ds.n_pairs();
    let mut a_hat = Vec::with_capacity(n);
    let mut b_hat = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        let [prob_a, prob_b] = weight_problems(ds, first, second, i)?;
        let weights = PairWeights {
            a: prob_a.fit().alpha,
            b: prob_b.fit().alpha,
        };
        a_hat.push(weights.a * first.a_hat[i] + (1.0 - weights.a) * second.a_hat[i]);
        b_hat.push(weights.b * first.b_hat[i] + (1.0 - weights.b) * second.b_hat[i]);
        alpha.push(weights);
    }
    let mut result = ImputationResult::from_differences(
        a_hat,
        b_hat,
        ImputationMethod::Interpolated,
        second.backend,
        second.encoding,
    );
    result.alpha = Some(alpha);
    Ok(result)
}
