//! Treatment-effect estimation.
//!
//! The leave-one-out estimator averages per-pair estimates
//! `tau_i = (W_i - d_i) T_i + (W_i + d_i) (1 - T_i)` and reports the plug-in
//! variance `(M_a / 4 + M_b / 4 + sqrt(M_a M_b) / 2) / N`, where `M_a` and
//! `M_b` are the mean squared imputation errors on the observed arms.
//! Cross-pair covariance terms are left out of the reported variance.
//!
//! The simple difference and two regression estimators (paired differences
//! regressed on covariate differences, optionally also on pair means) are
//! provided for comparison.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Encoding, PairedDataset};
use crate::error::{Error, Result};
use crate::imputation::{
    impute_differences_directly, impute_differences_directly_with_holdouts,
    impute_outcomes_separately, impute_outcomes_separately_with_holdouts, interpolate,
    ImputationResult,
};
use crate::predictors::ols::solve_normal_equations;
use crate::predictors::{Backend, BackendKind};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Simple,
    PloopOutcomes,
    PloopDifferences,
    PloopInterp,
    Reg1,
    Reg2,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Simple,
        Method::Reg1,
        Method::Reg2,
        Method::PloopDifferences,
        Method::PloopOutcomes,
        Method::PloopInterp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Simple => "simple",
            Method::PloopOutcomes => "ploop-outcomes",
            Method::PloopDifferences => "ploop-differences",
            Method::PloopInterp => "ploop-interp",
            Method::Reg1 => "reg1",
            Method::Reg2 => "reg2",
        }
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Method::Reg1 | Method::Reg2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    pub backend: Backend,
    pub encoding: Encoding,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Ols,
            encoding: Encoding::MeanDiff,
            seed: 0,
            confidence: DEFAULT_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl AlphaSummary {
    fn from_weights(weights: impl Iterator<Item = f64>) -> Option<Self> {
        let w: Vec<f64> = weights.collect();
        if w.is_empty() {
            return None;
        }
        Some(Self {
            min: w.iter().copied().fold(f64::INFINITY, f64::min),
            max: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: w.iter().sum::<f64>() / w.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub backend: Option<BackendKind>,
    pub encoding: Option<Encoding>,
    pub point_estimate: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub confidence_level: f64,
    pub n_pairs: usize,
    pub n_treated: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_a_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_b_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSummary>,
    pub variance_method: String,
    pub warnings: Vec<String>,
}

/// Two-sided normal quantile for `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Per-pair estimates `tau_i`.
pub fn per_pair_estimates(ds: &PairedDataset, d_hat: &[f64]) -> Vec<f64> {
    ds.pairs()
        .iter()
        .zip(d_hat)
        .map(|(pair, d)| {
            let w = pair.observed_difference();
            if pair.first_treated() {
                w - d
            } else {
                w + d
            }
        })
        .collect()
}

/// Point estimate for any `d_hat`, with no variance; always defined.
pub fn ploop_point_estimate(ds: &PairedDataset, d_hat: &[f64]) -> f64 {
    per_pair_estimates(ds, d_hat).iter().sum::<f64>() / ds.n_pairs() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluginVariance {
    pub variance: f64,
    pub m_a_hat: f64,
    pub m_b_hat: f64,
}

/// Plug-in variance from residuals `a_i - a_hat_i` on treated-first pairs and
/// `b_i - b_hat_i` on control-first pairs.
pub fn plugin_variance(
    n_pairs: usize,
    residuals_a: &[f64],
    residuals_b: &[f64],
) -> Result<PluginVariance> {
    if residuals_a.is_empty() || residuals_b.is_empty() {
        return Err(Error::DegenerateAssignment);
    }
    let msq = |r: &[f64]| r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64;
    let m_a_hat = msq(residuals_a);
    let m_b_hat = msq(residuals_b);
    let variance = (0.25 * m_a_hat + 0.25 * m_b_hat + 0.5 * (m_a_hat * m_b_hat).sqrt()) / n_pairs as f64;
    Ok(PluginVariance {
        variance,
        m_a_hat,
        m_b_hat,
    })
}

fn observed_residuals(ds: &PairedDataset, a_hat: &[f64], b_hat: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ra = Vec::new();
    let mut rb = Vec::new();
    for (i, pair) in ds.pairs().iter().enumerate() {
        let w = pair.observed_difference();
        if pair.first_treated() {
            ra.push(w - a_hat[i]);
        } else {
            rb.push(w - b_hat[i]);
        }
    }
    (ra, rb)
}

pub fn variance_estimate(ds: &PairedDataset, imp: &ImputationResult) -> Result<PluginVariance> {
    check_lengths(ds, imp)?;
    let (ra, rb) = observed_residuals(ds, &imp.a_hat, &imp.b_hat);
    plugin_variance(ds.n_pairs(), &ra, &rb)
}

fn check_lengths(ds: &PairedDataset, imp: &ImputationResult) -> Result<()> {
    if imp.n_pairs() != ds.n_pairs() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_pairs(),
            got: imp.n_pairs(),
        });
    }
    Ok(())
}

fn interval(estimate: f64, variance: f64, confidence: f64) -> Result<(f64, f64, f64)> {
    let z = normal_quantile(confidence)?;
    let se = variance.sqrt();
    Ok((se, estimate - z * se, estimate + z * se))
}

fn method_for(imp: &ImputationResult) -> Method {
    use crate::imputation::ImputationMethod as M;
    match imp.method {
        M::Outcomes => Method::PloopOutcomes,
        M::Differences => Method::PloopDifferences,
        M::Interpolated => Method::PloopInterp,
    }
}

/// Point estimate, plug-in variance and normal interval for an imputation.
/// Fails with [`Error::DegenerateAssignment`] when every pair has the same
/// assignment; [`ploop_point_estimate`] still works in that case.
pub fn ploop_estimate(
    ds: &PairedDataset,
    imp: &ImputationResult,
    confidence: f64,
) -> Result<EstimateResult> {
    check_lengths(ds, imp)?;
    let tau = ploop_point_estimate(ds, &imp.d_hat);
    let var = variance_estimate(ds, imp)?;
    let (std_error, ci_lower, ci_upper) = interval(tau, var.variance, confidence)?;
    Ok(EstimateResult {
        method: method_for(imp),
        backend: Some(imp.backend),
        encoding: imp.encoding,
        point_estimate: tau,
        variance: var.variance,
        std_error,
        ci_lower,
        ci_upper,
        confidence_level: confidence,
        n_pairs: ds.n_pairs(),
        n_treated: ds.n_treated(),
        m_a_hat: Some(var.m_a_hat),
        m_b_hat: Some(var.m_b_hat),
        alpha: AlphaSummary::from_weights(imp.weights()),
        variance_method: "plugin".into(),
        warnings: Vec::new(),
    })
}

/// Mean of the observed differences. Its variance uses the same plug-in with
/// each pair's imputation set to the leave-one-out mean of its own arm.
pub fn simple_difference(ds: &PairedDataset, confidence: f64) -> Result<EstimateResult> {
    let n = ds.n_pairs();
    if n == 0 {
        return Err(Error::NoPairs);
    }
    let w = ds.observed_differences();
    let t = ds.assignments();
    let tau = w.iter().sum::<f64>() / n as f64;

    let loo_mean = |i: usize| -> f64 {
        let same_arm = |k: usize| k != i && t[k] == t[i];
        let (sum, count) = (0..n)
            .filter(|&k| same_arm(k))
            .fold((0.0, 0usize), |(s, c), k| (s + w[k], c + 1));
        if count > 0 {
            return sum / count as f64;
        }
        // Alone in its arm: fall back to all other pairs.
        let (sum, count) = (0..n)
            .filter(|&k| k != i)
            .fold((0.0, 0usize), |(s, c), k| (s + w[k], c + 1));
        if count > 0 {
            sum / count as f64
        } else {
            0.0
        }
    };
    let baseline: Vec<f64> = (0..n).map(loo_mean).collect();
    let (ra, rb) = observed_residuals(ds, &baseline, &baseline);
    let var = plugin_variance(n, &ra, &rb)?;
    let (std_error, ci_lower, ci_upper) = interval(tau, var.variance, confidence)?;
    Ok(EstimateResult {
        method: Method::Simple,
        backend: Some(BackendKind::Mean),
        encoding: None,
        point_estimate: tau,
        variance: var.variance,
        std_error,
        ci_lower,
        ci_upper,
        confidence_level: confidence,
        n_pairs: n,
        n_treated: ds.n_treated(),
        m_a_hat: Some(var.m_a_hat),
        m_b_hat: Some(var.m_b_hat),
        alpha: None,
        variance_method: "plugin".into(),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionVariant {
    /// Differences on treated-minus-control covariate differences.
    Reg1,
    /// As `Reg1`, plus centered pair covariate means.
    Reg2,
}

/// Regression of the observed differences on treated-minus-control covariate
/// differences (and, for `Reg2`, centered pair means) with an intercept.
/// The intercept is the estimate; its variance is an HC2 sandwich.
pub fn paired_difference_regression(
    ds: &PairedDataset,
    variant: RegressionVariant,
    confidence: f64,
) -> Result<EstimateResult> {
    let method = match variant {
        RegressionVariant::Reg1 => Method::Reg1,
        RegressionVariant::Reg2 => Method::Reg2,
    };
    let q = ds.q();
    if q == 0 {
        return Err(Error::InvalidConfig(format!("{method} requires covariates")));
    }
    let n = ds.n_pairs();
    let p = match variant {
        RegressionVariant::Reg1 => q,
        RegressionVariant::Reg2 => 2 * q,
    };
    if n < p + 2 {
        return Err(Error::InvalidConfig(format!(
            "{method} needs at least {} pairs, found {n}",
            p + 2
        )));
    }

    let mut warnings = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for c in 0..q {
        columns.push(
            ds.pairs()
                .iter()
                .map(|pair| pair.treated().covariates[c] - pair.control().covariates[c])
                .collect(),
        );
        names.push(format!("difference of covariate {}", c + 1));
    }
    if variant == RegressionVariant::Reg2 {
        for c in 0..q {
            let means: Vec<f64> = ds
                .pairs()
                .iter()
                .map(|pair| 0.5 * (pair.units()[0].covariates[c] + pair.units()[1].covariates[c]))
                .collect();
            let center = means.iter().sum::<f64>() / n as f64;
            columns.push(means.iter().map(|m| m - center).collect());
            names.push(format!("mean of covariate {}", c + 1));
        }
    }
    // Columns that vanish are collinear with the intercept or carry nothing.
    let mut kept = Vec::new();
    for (col, name) in columns.into_iter().zip(names) {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale <= 1e-12 {
            warnings.push(format!("dropped {name}: no variation"));
        } else {
            kept.push(col);
        }
    }

    let dim = kept.len() + 1;
    let x = DMatrix::from_fn(n, dim, |i, j| if j == 0 { 1.0 } else { kept[j - 1][i] });
    let y = DVector::from_vec(ds.observed_differences());
    let gram = x.transpose() * &x;
    let mut inverse = DMatrix::zeros(dim, dim);
    let mut ridge = 0.0;
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        let (col, r) = solve_normal_equations(gram.clone(), &e);
        ridge = r;
        inverse.set_column(j, &col);
    }
    if ridge > 0.0 {
        warnings.push(format!(
            "design is rank deficient; added ridge {ridge:.3e} to the normal equations"
        ));
    }
    let beta = &inverse * (x.transpose() * &y);
    let residuals = &y - &x * &beta;

    let mut meat = DMatrix::zeros(dim, dim);
    let mut saturated = 0;
    for i in 0..n {
        let xi = x.row(i).transpose();
        let leverage = (xi.transpose() * &inverse * &xi)[(0, 0)];
        let room = 1.0 - leverage;
        if room <= 1e-10 {
            saturated += 1;
            continue;
        }
        meat += &xi * xi.transpose() * (residuals[i] * residuals[i] / room);
    }
    if saturated > 0 {
        warnings.push(format!("{saturated} pair(s) with leverage 1 left out of the variance"));
    }
    let cov = &inverse * meat * &inverse;
    let variance = cov[(0, 0)].max(0.0);
    let tau = beta[0];
    let (std_error, ci_lower, ci_upper) = interval(tau, variance, confidence)?;
    Ok(EstimateResult {
        method,
        backend: Some(BackendKind::Ols),
        encoding: None,
        point_estimate: tau,
        variance,
        std_error,
        ci_lower,
        ci_upper,
        confidence_level: confidence,
        n_pairs: n,
        n_treated: ds.n_treated(),
        m_a_hat: None,
        m_b_hat: None,
        alpha: None,
        variance_method: "hc2".into(),
        warnings,
    })
}

pub fn estimate(ds: &PairedDataset, method: Method, cfg: &EstimationConfig) -> Result<EstimateResult> {
    let mut out = estimate_many(ds, &[method], cfg)?;
    Ok(out.remove(0))
}

/// Imputations needed by a set of methods, computed once and shared.
#[derive(Debug, Clone, Default)]
pub struct Imputations {
    pub outcomes: Option<ImputationResult>,
    pub differences: Option<ImputationResult>,
    pub interpolated: Option<ImputationResult>,
}

impl Imputations {
    pub fn compute(ds: &PairedDataset, methods: &[Method], cfg: &EstimationConfig) -> Result<Self> {
        let wants = |m: Method| methods.contains(&m);
        let interp = wants(Method::PloopInterp);
        let outcomes = if interp {
            Some(impute_outcomes_separately_with_holdouts(ds, &cfg.backend, cfg.seed)?)
        } else if wants(Method::PloopOutcomes) {
            Some(impute_outcomes_separately(ds, &cfg.backend, cfg.seed)?)
        } else {
            None
        };
        let differences = if interp {
            Some(impute_differences_directly_with_holdouts(
                ds,
                &cfg.backend,
                cfg.encoding,
                cfg.seed,
            )?)
        } else if wants(Method::PloopDifferences) {
            Some(impute_differences_directly(ds, &cfg.backend, cfg.encoding, cfg.seed)?)
        } else {
            None
        };
        let interpolated = match (&outcomes, &differences) {
            (Some(o), Some(d)) if interp => Some(interpolate(ds, o, d)?),
            _ => None,
        };
        Ok(Self {
            outcomes,
            differences,
            interpolated,
        })
    }

    pub fn get(&self, method: Method) -> Option<&ImputationResult> {
        match method {
            Method::PloopOutcomes => self.outcomes.as_ref(),
            Method::PloopDifferences => self.differences.as_ref(),
            Method::PloopInterp => self.interpolated.as_ref(),
            _ => None,
        }
    }
}

/// Estimates several methods on one dataset, sharing imputations.
pub fn estimate_many(
    ds: &PairedDataset,
    methods: &[Method],
    cfg: &EstimationConfig,
) -> Result<Vec<EstimateResult>> {
    normal_quantile(cfg.confidence)?;
    let imputations = Imputations::compute(ds, methods, cfg)?;
    methods
        .iter()
        .map(|&m| match m {
            Method::Simple => simple_difference(ds, cfg.confidence),
            Method::Reg1 => paired_difference_regression(ds, RegressionVariant::Reg1, cfg.confidence),
            Method::Reg2 => paired_difference_regression(ds, RegressionVariant::Reg2, cfg.confidence),
            ploop => {
                let imp = imputations.get(ploop).expect("imputation computed for method");
                ploop_estimate(ds, imp, cfg.confidence)
            }
        })
        .collect()
}
