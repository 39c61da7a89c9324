//! Command-line interface: `analyze`, `compare` and `simulate`.
//!
//! Exit codes: 0 on success, 1 for dataset and estimation errors, 2 for
//! usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{load_csv, CsvSchema, Encoding};
use crate::error::Error;
use crate::estimator::{estimate_many, EstimateResult, EstimationConfig, Method};
use crate::predictors::{Backend, BackendKind, ForestConfig};
use crate::simulation::{align, monte_carlo, sig6, DgpConfig, DgpKind, MonteCarloConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "PLOOP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ploop", version, about = "Covariate-adjusted effect estimation for paired experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the average treatment effect with one method.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "ploop-interp")]
        method: Method,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Estimate with several methods on the same dataset.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated methods.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "simple,reg1,reg2,ploop-differences,ploop-outcomes,ploop-interp"
        )]
        methods: Vec<Method>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Monte Carlo over random assignments of a synthetic twin experiment.
    Simulate {
        #[arg(long, value_enum, default_value_t = DgpName::Simpsons)]
        dgp: DgpName,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Comma-separated methods.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "simple,ploop-differences,ploop-outcomes,ploop-interp"
        )]
        methods: Vec<Method>,
        #[command(flatten)]
        model: ModelArgs,
        /// Covariate probability in group 1.
        #[arg(long, default_value_t = 0.9)]
        p1: f64,
        /// Covariate probability in group 0.
        #[arg(long, default_value_t = 0.5)]
        p0: f64,
        #[arg(long, default_value_t = 2.0)]
        noise_sd: f64,
        /// Seed for the experiment when it differs from `--seed`.
        #[arg(long)]
        experiment_seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "pair")]
    pub pair: String,
    #[arg(long, default_value = "treatment")]
    pub treat: String,
    #[arg(long, default_value = "outcome")]
    pub outcome: String,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',', conflicts_with = "no_covariates")]
    pub covariates: Option<Vec<String>>,
    /// Analyze without covariates.
    #[arg(long)]
    pub no_covariates: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "ols")]
    pub backend: BackendKind,
    #[arg(long, default_value = "mean_diff")]
    pub encoding: Encoding,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trees in the forest backend.
    #[arg(long, default_value_t = ForestConfig::default().n_trees)]
    pub trees: usize,
    /// Minimum leaf size in the forest backend.
    #[arg(long, default_value_t = ForestConfig::default().min_leaf)]
    pub min_leaf: usize,
}

impl ModelArgs {
    fn backend(&self) -> Backend {
        match self.backend {
            BackendKind::Forest => Backend::Forest(ForestConfig {
                n_trees: self.trees,
                min_leaf: self.min_leaf,
                ..ForestConfig::default()
            }),
            kind => kind.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DgpName {
    Simpsons,
    Uninformative,
}

/// A failure tagged with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let line = f.message.replace('\n', " ");
            let _ = writeln!(err, "error: {line}");
            f.code
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Analyze {
            data,
            method,
            format,
        } => {
            let results = analyze(&data, &[method])?;
            match format {
                Format::Json => writeln!(out, "{}", to_json(&results[0])?)?,
                Format::Table => out.write_all(single_table(&results[0]).as_bytes())?,
            }
        }
        Command::Compare {
            data,
            methods,
            format,
        } => {
            if methods.is_empty() {
                return Err(Failure::usage("at least one method is required"));
            }
            let results = analyze(&data, &methods)?;
            match format {
                Format::Json => writeln!(out, "{}", to_json(&results)?)?,
                Format::Table => out.write_all(comparison_table(&results).as_bytes())?,
            }
        }
        Command::Simulate {
            dgp,
            pairs,
            reps,
            methods,
            model,
            p1,
            p0,
            noise_sd,
            experiment_seed,
            format,
        } => {
            if reps < 2 {
                return Err(Failure::usage("replicates ≥ 2 required"));
            }
            if let Some(m) = methods.iter().find(|m| m.is_regression()) {
                return Err(Failure::usage(format!("{m} is not supported by simulate")));
            }
            let cfg = DgpConfig {
                kind: match dgp {
                    DgpName::Simpsons => DgpKind::Simpsons,
                    DgpName::Uninformative => DgpKind::Uninformative,
                },
                n_pairs: pairs,
                p1,
                p0,
                noise_sd,
                seed: experiment_seed.unwrap_or(model.seed),
            };
            cfg.validate()?;
            let mc = MonteCarloConfig {
                methods,
                replicates: reps,
                backend: model.backend(),
                encoding: model.encoding,
                seed: model.seed,
            };
            let run = monte_carlo(&cfg, &mc)?;
            match format {
                Format::Json => writeln!(out, "{}", to_json(&run.summary)?)?,
                Format::Table => out.write_all(run.summary.to_table().as_bytes())?,
            }
        }
    }
    Ok(())
}

fn analyze(data: &DataArgs, methods: &[Method]) -> Result<Vec<EstimateResult>, Failure> {
    let regression = methods.iter().find(|m| m.is_regression());
    if let (Some(m), true) = (regression, data.no_covariates) {
        return Err(Failure::usage(format!("{m} requires covariates")));
    }
    let mut schema = CsvSchema::new(&data.pair, &data.treat, &data.outcome);
    if data.no_covariates {
        schema.covariates = Some(Vec::new());
        schema.allow_no_covariates = true;
    } else {
        schema.covariates = data.covariates.clone();
    }
    let ds = match load_csv(&data.input, &schema) {
        Err(Error::NoCovariates) if regression.is_some() => {
            let m = regression.expect("checked above");
            return Err(Failure::usage(format!("{m} requires covariates")));
        }
        other => other?,
    };
    let cfg = EstimationConfig {
        backend: data.model.backend(),
        encoding: data.model.encoding,
        seed: data.model.seed,
        confidence: data.confidence,
    };
    Ok(estimate_many(&ds, methods, &cfg)?)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    })
}

fn or_dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| x.to_string())
}

fn single_table(r: &EstimateResult) -> String {
    let mut rows = vec![
        ["method".to_owned(), r.method.to_string()],
        ["backend".to_owned(), or_dash(r.backend)],
        ["encoding".to_owned(), or_dash(r.encoding)],
        ["point_estimate".to_owned(), sig6(r.point_estimate)],
        ["variance".to_owned(), sig6(r.variance)],
        ["std_error".to_owned(), sig6(r.std_error)],
        [
            format!("ci ({})", sig6(r.confidence_level)),
            format!("[{}, {}]", sig6(r.ci_lower), sig6(r.ci_upper)),
        ],
        ["n_pairs".to_owned(), r.n_pairs.to_string()],
        ["n_treated".to_owned(), r.n_treated.to_string()],
        ["variance_method".to_owned(), r.variance_method.clone()],
    ];
    if let Some(a) = r.alpha {
        rows.push([
            "alpha (min/mean/max)".to_owned(),
            format!("{} / {} / {}", sig6(a.min), sig6(a.mean), sig6(a.max)),
        ]);
    }
    let mut out = align(&rows);
    for w in &r.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

fn comparison_table(results: &[EstimateResult]) -> String {
    let mut rows = vec![[
        "Method".to_owned(),
        "Point Est.".to_owned(),
        "Nominal Var.".to_owned(),
        "Std. Err.".to_owned(),
        "CI Lower".to_owned(),
        "CI Upper".to_owned(),
        "Pairs".to_owned(),
    ]];
    for r in results {
        rows.push([
            r.method.to_string(),
            sig6(r.point_estimate),
            sig6(r.variance),
            sig6(r.std_error),
            sig6(r.ci_lower),
            sig6(r.ci_upper),
            r.n_pairs.to_string(),
        ]);
    }
    let mut out = align(&rows);
    for r in results {
        for w in &r.warnings {
            out.push_str(&format!("warning ({}): {w}\n", r.method));
        }
    }
    out
}
