//! Synthetic experiments, the Monte Carlo harness and exact enumeration.
//!
//! The Monte Carlo harness works in the design-based setting: one experiment
//! (fixed potential outcomes) is generated, then many pair-level treatment
//! assignments are drawn and every requested method is re-estimated on each
//! realization. The spread of the estimates is the true standard error; the
//! average reported standard error is the nominal one.
//!
//! [`enumerate_assignments`] replaces sampling with all `2^N` assignments,
//! which gives exact moments for small experiments.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Encoding, PairedDataset, PotentialUnit, SyntheticExperiment};
use crate::error::{Error, Result};
use crate::estimator::{estimate_many, per_pair_estimates, EstimationConfig, Method};
use crate::imputation::{
    impute_differences_directly, impute_interpolated, impute_outcomes_separately,
    ImputationResult,
};
use crate::predictors::{Backend, BackendKind};
use crate::seed::{self, tag};

/// `Y = intercept + treatment * T + covariate * Z + group * E + noise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDgp {
    pub intercept: f64,
    pub treatment: f64,
    pub covariate: f64,
    pub group: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// Covariate lowers the outcome within pairs but correlates positively
    /// with it overall through the group effect.
    Simpsons,
    /// Group affects the outcome only through the covariate.
    Uninformative,
    Custom(LinearDgp),
}

impl DgpKind {
    pub fn coefficients(&self) -> LinearDgp {
        match self {
            DgpKind::Simpsons => LinearDgp {
                intercept: 80.0,
                treatment: -10.0,
                covariate: -5.0,
                group: 10.0,
            },
            DgpKind::Uninformative => LinearDgp {
                intercept: 80.0,
                treatment: -10.0,
                covariate: 5.0,
                group: 0.0,
            },
            DgpKind::Custom(c) => *c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DgpKind::Simpsons => "simpsons",
            DgpKind::Uninformative => "uninformative",
            DgpKind::Custom(_) => "custom",
        }
    }
}

/// Twin-pair experiment: half the pairs belong to group `E = 0`, half to
/// `E = 1`; each unit carries a binary covariate `Z ~ Bernoulli(p_E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub n_pairs: usize,
    /// `P(Z = 1)` in group 1.
    pub p1: f64,
    /// `P(Z = 1)` in group 0.
    pub p0: f64,
    /// Standard deviation of the per-unit noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            kind: DgpKind::Simpsons,
            n_pairs: 50,
            p1: 0.9,
            p0: 0.5,
            noise_sd: 2.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p0) || !prob(self.p1) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if self.n_pairs < 2 {
            return Err(Error::InvalidConfig("at least 2 pairs are required".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig("noise_sd must be finite and >= 0".into()));
        }
        if !matches!(self.kind, DgpKind::Custom(_)) && !self.n_pairs.is_multiple_of(2) {
            return Err(Error::InvalidConfig("even pair count required".into()));
        }
        Ok(())
    }
}

/// Draws covariates and one noise term per unit, then materializes both
/// potential outcomes from that single draw so they differ only by the
/// treatment coefficient. The group label is not exposed as a covariate.
pub fn generate_experiment(cfg: &DgpConfig) -> Result<SyntheticExperiment> {
    cfg.validate()?;
    let coef = cfg.kind.coefficients();
    let mut rng = seed::rng(cfg.seed, &[tag::EXPERIMENT]);
    let noise = Normal::new(0.0, cfg.noise_sd)
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    let half = cfg.n_pairs / 2;
    let pairs = (0..cfg.n_pairs)
        .map(|i| {
            let group = if i < half { 0.0 } else { 1.0 };
            let p = if group == 1.0 { cfg.p1 } else { cfg.p0 };
            let mut unit = || {
                let z = if rng.random_bool(p) { 1.0 } else { 0.0 };
                let eps = noise.sample(&mut rng);
                let c = coef.intercept + coef.covariate * z + coef.group * group + eps;
                PotentialUnit {
                    t: c + coef.treatment,
                    c,
                    z: vec![z],
                }
            };
            let first = unit();
            [first, unit()]
        })
        .collect();
    SyntheticExperiment::new(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub backend: Backend,
    pub encoding: Encoding,
    /// Seeds the assignment draws and any stochastic backend.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_estimate: f64,
    pub true_se: f64,
    pub nominal_se: f64,
    pub mc_se_true: f64,
    pub mc_se_nominal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub dgp: String,
    pub n_pairs: usize,
    pub replicates: usize,
    /// Assignment draws discarded because every pair had the same assignment.
    pub resampled: usize,
    pub backend: BackendKind,
    pub encoding: Encoding,
    pub seed: u64,
    pub tau_bar: f64,
    pub methods: Vec<MethodSummary>,
}

/// Per-replicate output of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDraws {
    pub method: Method,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub summary: SimulationSummary,
    pub draws: Vec<MethodDraws>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Draws a pair-level assignment with at least one pair in each arm.
/// Returns the assignment and the number of degenerate draws discarded.
pub fn draw_assignment<R: Rng>(n_pairs: usize, rng: &mut R) -> (Vec<bool>, usize) {
    let mut discarded = 0;
    loop {
        let t: Vec<bool> = (0..n_pairs).map(|_| rng.random_bool(0.5)).collect();
        if t.iter().any(|&x| x) && t.iter().any(|&x| !x) {
            return (t, discarded);
        }
        discarded += 1;
    }
}

pub fn monte_carlo(dgp: &DgpConfig, mc: &MonteCarloConfig) -> Result<MonteCarloRun> {
    let experiment = generate_experiment(dgp)?;
    let mut run = monte_carlo_on(&experiment, mc)?;
    run.summary.dgp = dgp.kind.name().to_owned();
    Ok(run)
}

/// Monte Carlo over assignments for a given experiment. Replicate `r` draws
/// its assignment and backend seed from streams keyed by `(seed, r)`.
pub fn monte_carlo_on(experiment: &SyntheticExperiment, mc: &MonteCarloConfig) -> Result<MonteCarloRun> {
    if mc.replicates < 2 {
        return Err(Error::InvalidConfig("replicates must be >= 2".into()));
    }
    if mc.methods.is_empty() {
        return Err(Error::InvalidConfig("at least one method is required".into()));
    }
    let n = experiment.n_pairs();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let replicates: Vec<(Vec<(f64, f64)>, usize)> = (0..mc.replicates)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let mut rng = seed::rng(mc.seed, &[tag::ASSIGNMENT, r as u64]);
            let (t, discarded) = draw_assignment(n, &mut rng);
            let ds = experiment.realize(&t)?;
            let cfg = EstimationConfig {
                backend: mc.backend.clone(),
                encoding: mc.encoding,
                seed: seed::derive(mc.seed, &[tag::ASSIGNMENT, r as u64, 1]),
                ..EstimationConfig::default()
            };
            let est = estimate_many(&ds, &mc.methods, &cfg)?;
            Ok((est.iter().map(|e| (e.point_estimate, e.std_error)).collect(), discarded))
        })
        .collect::<Result<_>>()?;

    let resampled = replicates.iter().map(|(_, d)| d).sum();
    let draws: Vec<MethodDraws> = mc
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| MethodDraws {
            method,
            estimates: replicates.iter().map(|(v, _)| v[m].0).collect(),
            std_errors: replicates.iter().map(|(v, _)| v[m].1).collect(),
        })
        .collect();
    let r = mc.replicates as f64;
    let methods = draws
        .iter()
        .map(|d| {
            let true_se = sample_sd(&d.estimates);
            MethodSummary {
                method: d.method,
                mean_estimate: mean(&d.estimates),
                true_se,
                nominal_se: mean(&d.std_errors),
                mc_se_true: true_se / (2.0 * (r - 1.0)).sqrt(),
                mc_se_nominal: sample_sd(&d.std_errors) / r.sqrt(),
            }
        })
        .collect();
    Ok(MonteCarloRun {
        summary: SimulationSummary {
            dgp: "custom".into(),
            n_pairs: n,
            replicates: mc.replicates,
            resampled,
            backend: mc.backend.kind(),
            encoding: mc.encoding,
            seed: mc.seed,
            tau_bar: experiment.tau_bar(),
            methods,
        },
        draws,
    })
}

/// `factor * sd(reference) - sd(candidate)` over paired replicates, with its
/// Monte Carlo standard error from the delta method. Positive values mean the
/// candidate is less variable than `factor` times the reference.
pub fn sd_margin(candidate: &[f64], reference: &[f64], factor: f64) -> (f64, f64) {
    let r = candidate.len();
    let influence = |x: &[f64]| -> (f64, Vec<f64>) {
        let m = mean(x);
        let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / r as f64;
        let sd = var.sqrt();
        (sd, x.iter().map(|v| ((v - m) * (v - m) - var) / (2.0 * sd)).collect())
    };
    let (sd_c, inf_c) = influence(candidate);
    let (sd_r, inf_r) = influence(reference);
    let combined: Vec<f64> = inf_c
        .iter()
        .zip(&inf_r)
        .map(|(c, rf)| factor * rf - c)
        .collect();
    (factor * sd_r - sd_c, sample_sd(&combined) / (r as f64).sqrt())
}

/// Formats `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    if !(-4..=9).contains(&magnitude) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

impl SimulationSummary {
    /// Method by {true SE, nominal SE} table with Monte Carlo errors.
    pub fn to_table(&self) -> String {
        let mut rows = vec![[
            "Method".to_owned(),
            "True SE".to_owned(),
            "Nominal SE".to_owned(),
            "Mean Est.".to_owned(),
            "MC SE (true)".to_owned(),
            "MC SE (nominal)".to_owned(),
        ]];
        for m in &self.methods {
            rows.push([
                m.method.as_str().to_owned(),
                sig6(m.true_se),
                sig6(m.nominal_se),
                sig6(m.mean_estimate),
                sig6(m.mc_se_true),
                sig6(m.mc_se_nominal),
            ]);
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "dgp={} pairs={} replicates={} resampled={} backend={} encoding={} seed={} tau_bar={}",
            self.dgp,
            self.n_pairs,
            self.replicates,
            self.resampled,
            self.backend,
            self.encoding,
            self.seed,
            sig6(self.tau_bar)
        );
        out.push_str(&align(&rows));
        out
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub fn align<const K: usize>(rows: &[[String; K]]) -> String {
    let widths: Vec<usize> = (0..K)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Largest experiment [`enumerate_assignments`] accepts.
pub const MAX_ENUMERATION_PAIRS: usize = 20;

/// Exact moments over all `2^N` equiprobable assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub n_assignments: usize,
    pub tau_bar: f64,
    /// Mean of the point estimate.
    pub mean: f64,
    /// Variance of the point estimate.
    pub variance: f64,
    /// `Var(tau_i)` per pair.
    pub pair_variance: Vec<f64>,
    /// `E[(d_i - d_hat_i)^2]` per pair.
    pub pair_mse_d: Vec<f64>,
    /// Average over pairs of `E[(a_i - a_hat_i)^2]`.
    pub m_a: f64,
    /// Average over pairs of `E[(b_i - b_hat_i)^2]`.
    pub m_b: f64,
    /// `sum_{i != j} Cov(tau_i, tau_j)`.
    pub cross_covariance: f64,
}

impl ExactSummary {
    /// `(1/N^2) sum_i MSE(d_hat_i)`.
    pub fn mse_term(&self) -> f64 {
        let n = self.pair_mse_d.len() as f64;
        self.pair_mse_d.iter().sum::<f64>() / (n * n)
    }

    /// `(1/N) (M_a/4 + M_b/4 + sqrt(M_a M_b)/2)`.
    pub fn variance_bound(&self) -> f64 {
        let n = self.pair_mse_d.len() as f64;
        (0.25 * self.m_a + 0.25 * self.m_b + 0.5 * (self.m_a * self.m_b).sqrt()) / n
    }
}

/// Imputation used for `method` in exact enumeration. The simple difference is
/// represented by pair-level mean imputation, which yields `d_hat = 0`.
pub fn imputer_for(
    method: Method,
    backend: &Backend,
    encoding: Encoding,
    seed: u64,
) -> Result<impl Fn(&PairedDataset) -> Result<ImputationResult> + Sync + '_> {
    if method.is_regression() {
        return Err(Error::InvalidConfig(format!(
            "{method} is not a leave-one-out estimator and cannot be enumerated"
        )));
    }
    Ok(move |ds: &PairedDataset| match method {
        Method::Simple => impute_differences_directly(ds, &Backend::Mean, encoding, seed),
        Method::PloopOutcomes => impute_outcomes_separately(ds, backend, seed),
        Method::PloopDifferences => impute_differences_directly(ds, backend, encoding, seed),
        _ => impute_interpolated(ds, backend, encoding, seed),
    })
}

pub fn enumerate_assignments(
    se: &SyntheticExperiment,
    method: Method,
    backend: &Backend,
    encoding: Encoding,
) -> Result<ExactSummary> {
    let imputer = imputer_for(method, backend, encoding, 0)?;
    enumerate_with(se, imputer)
}

#[derive(Debug, Clone)]
struct Moments {
    // Sums of deviations from the true per-pair effects.
    tau_dev: Vec<f64>,
    tau_dev_sq: Vec<f64>,
    total_dev: f64,
    total_dev_sq: f64,
    d_err_sq: Vec<f64>,
    a_err_sq: Vec<f64>,
    b_err_sq: Vec<f64>,
}

impl Moments {
    fn zero(n: usize) -> Self {
        Self {
            tau_dev: vec![0.0; n],
            tau_dev_sq: vec![0.0; n],
            total_dev: 0.0,
            total_dev_sq: 0.0,
            d_err_sq: vec![0.0; n],
            a_err_sq: vec![0.0; n],
            b_err_sq: vec![0.0; n],
        }
    }

    fn add(&mut self, other: &Moments) {
        let sum = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        sum(&mut self.tau_dev, &other.tau_dev);
        sum(&mut self.tau_dev_sq, &other.tau_dev_sq);
        self.total_dev += other.total_dev;
        self.total_dev_sq += other.total_dev_sq;
        sum(&mut self.d_err_sq, &other.d_err_sq);
        sum(&mut self.a_err_sq, &other.a_err_sq);
        sum(&mut self.b_err_sq, &other.b_err_sq);
    }
}

/// Enumerates every assignment, imputing with `impute`. Chunks of
/// assignments are reduced in a fixed order, so results do not depend on
/// thread scheduling.
pub fn enumerate_with<F>(se: &SyntheticExperiment, impute: F) -> Result<ExactSummary>
where
    F: Fn(&PairedDataset) -> Result<ImputationResult> + Sync,
{
    let n = se.n_pairs();
    if n > MAX_ENUMERATION_PAIRS {
        return Err(Error::InvalidConfig(format!(
            "enumeration supports at most {MAX_ENUMERATION_PAIRS} pairs, got {n}"
        )));
    }
    let total = 1usize << n;
    let tau: Vec<f64> = (0..n).map(|i| se.tau(i)).collect();
    let tau_sum: f64 = tau.iter().sum();
    let (a, b, d): (Vec<f64>, Vec<f64>, Vec<f64>) = (
        (0..n).map(|i| se.a(i)).collect(),
        (0..n).map(|i| se.b(i)).collect(),
        (0..n).map(|i| se.d(i)).collect(),
    );

    let chunk = 64.min(total);
    let partials: Vec<Moments> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|c| -> Result<Moments> {
            let mut acc = Moments::zero(n);
            for mask in c * chunk..((c + 1) * chunk).min(total) {
                let t: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let ds = se.realize(&t)?;
                let imp = impute(&ds)?;
                let per_pair = per_pair_estimates(&ds, &imp.d_hat);
                let mut total_dev = 0.0;
                for i in 0..n {
                    let dev = per_pair[i] - tau[i];
                    acc.tau_dev[i] += dev;
                    acc.tau_dev_sq[i] += dev * dev;
                    total_dev += dev;
                    acc.d_err_sq[i] += (d[i] - imp.d_hat[i]).powi(2);
                    acc.a_err_sq[i] += (a[i] - imp.a_hat[i]).powi(2);
                    acc.b_err_sq[i] += (b[i] - imp.b_hat[i]).powi(2);
                }
                acc.total_dev += total_dev;
                acc.total_dev_sq += total_dev * total_dev;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut m = Moments::zero(n);
    for p in &partials {
        m.add(p);
    }

    let count = total as f64;
    let nf = n as f64;
    let pair_variance: Vec<f64> = (0..n)
        .map(|i| {
            let mu = m.tau_dev[i] / count;
            m.tau_dev_sq[i] / count - mu * mu
        })
        .collect();
    let sum_mu = m.total_dev / count;
    let var_sum = m.total_dev_sq / count - sum_mu * sum_mu;
    Ok(ExactSummary {
        n_assignments: total,
        tau_bar: tau_sum / nf,
        mean: (tau_sum + sum_mu) / nf,
        variance: var_sum / (nf * nf),
        cross_covariance: var_sum - pair_variance.iter().sum::<f64>(),
        pair_variance,
        pair_mse_d: m.d_err_sq.iter().map(|s| s / count).collect(),
        m_a: m.a_err_sq.iter().sum::<f64>() / (count * nf),
        m_b: m.b_err_sq.iter().sum::<f64>() / (count * nf),
    })
}
