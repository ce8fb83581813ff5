//! Command-line front end: `analyze`, `table` and `coverage`.

pub mod format;
pub mod input;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use signalroot::inference::{auto_grid, linspace, significance_table, InferenceReport};
use signalroot::simulation::{coverage_study, default_levels, CoverageConfig, CoverageResult};
use signalroot::{Method, PivotEngine};

use crate::format::sig;
use crate::input::{read_dataset, InputFormat, InputRecord};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] signalroot::Error),
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Results were produced but some pivot fell back to `r`.
    FallbackOnly,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::FallbackOnly => 2,
        }
    }
}

pub const ERROR_EXIT: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "signalroot", version, about = "Higher-order likelihood inference for Poisson signal-plus-background counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimates, p-values and confidence bounds for a dataset.
    Analyze(AnalyzeArgs),
    /// Significance functions on a grid of psi values, as TSV.
    Table(TableArgs),
    /// Monte Carlo coverage of upper confidence bounds.
    Coverage(CoverageArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input file (CSV with header channel,y1,y2,y3,t,u or a JSON array).
    #[arg(long)]
    pub data: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// r, rstar, bayes (rstar_bayes) or all; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub method: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Levels for two-sided bounds, each in (0, 0.5).
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    pub alpha: Vec<f64>,
    /// Null values for one-sided p-values.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub psi0: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// `min:max:steps` (steps + 1 rows) or `auto`.
    #[arg(long, default_value = "auto")]
    pub grid: String,
    /// Number of intervals for the automatic grid.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// True signal strength.
    #[arg(long, allow_negative_numbers = true)]
    pub psi: f64,
    /// Background rate per channel.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    /// Acceptance intensity per channel.
    #[arg(long, value_delimiter = ',', required = true)]
    pub gamma: Vec<f64>,
    /// Background exposure per channel.
    #[arg(long, value_delimiter = ',', required = true)]
    pub t: Vec<f64>,
    /// Acceptance exposure per channel.
    #[arg(long, value_delimiter = ',', required = true)]
    pub u: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    /// Nominal levels of the upper bounds; defaults to 0.01 through 0.99.
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, env = "SIGNALROOT_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// JSON output file; a summary table then goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_methods(items: &[String]) -> Result<Vec<Method>, CliError> {
    let mut out = Vec::new();
    for item in items {
        let item = item.trim();
        if item.eq_ignore_ascii_case("all") {
            out.extend(Method::ALL);
        } else {
            out.push(item.parse().map_err(|e: signalroot::Error| CliError::Usage(e.to_string()))?);
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::Usage("no method selected".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub input: Vec<InputRecord>,
    pub reports: Vec<InferenceReport>,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Io {
                    path: "<stdout>".into(),
                    source: e,
                })
        }
    }
}

pub fn analysis(args: &AnalyzeArgs) -> Result<AnalysisOutput, CliError> {
    let (records, data) = read_dataset(&args.input.data, args.input.format)?;
    let methods = parse_methods(&args.input.method)?;
    if let Some(a) = args.alpha.iter().find(|a| !(**a > 0.0 && **a < 0.5)) {
        return Err(CliError::Usage(format!("alpha must lie in (0, 0.5), got {a}")));
    }
    let reports = signalroot::analyze(&data, &methods, &args.alpha, &args.psi0)?;
    Ok(AnalysisOutput { input: records, reports })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Outcome, CliError> {
    let output = analysis(args)?;
    let mut text = serde_json::to_string_pretty(&output).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    write_output(args.out.as_deref(), &text)?;
    Ok(if output.reports.iter().any(|r| r.fallback_used) {
        Outcome::FallbackOnly
    } else {
        Outcome::Success
    })
}

fn parse_grid(spec: &str) -> Result<Option<(f64, f64, usize)>, CliError> {
    if spec.trim().eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Usage(format!("grid must be 'min:max:steps' or 'auto', got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    Ok(Some((lo, hi, steps)))
}

pub fn table_text(args: &TableArgs) -> Result<(String, bool), CliError> {
    let (_, data) = read_dataset(&args.input.data, args.input.format)?;
    let methods = parse_methods(&args.input.method)?;
    let engine = Arc::new(PivotEngine::new(data)?);
    let grid = match parse_grid(&args.grid)? {
        Some((lo, hi, steps)) => linspace(lo, hi, steps + 1),
        None => auto_grid(&engine, &methods, args.steps + 1)?,
    };
    let rows = significance_table(&engine, &grid)?;
    let mut text = String::from("psi");
    for m in &methods {
        text.push('\t');
        text.push_str(m.label());
    }
    for m in &methods {
        if *m != Method::R {
            text.push_str(&format!("\t{}_fallback", m.label()));
        }
    }
    text.push('\n');
    let mut fallback = false;
    for row in &rows {
        text.push_str(&sig(row.psi, 6));
        for m in &methods {
            text.push('\t');
            text.push_str(&sig(row.value(*m), 6));
        }
        for m in &methods {
            let flag = match m {
                Method::R => continue,
                Method::RStar => row.rstar_fallback,
                Method::RStarBayes => row.rstar_bayes_fallback,
            };
            fallback |= flag;
            text.push_str(if flag { "\t1" } else { "\t0" });
        }
        text.push('\n');
    }
    Ok((text, fallback))
}

pub fn cmd_table(args: &TableArgs) -> Result<Outcome, CliError> {
    let (text, fallback) = table_text(args)?;
    write_output(args.out.as_deref(), &text)?;
    Ok(if fallback { Outcome::FallbackOnly } else { Outcome::Success })
}

pub fn coverage_config(args: &CoverageArgs) -> Result<CoverageConfig, CliError> {
    let config = CoverageConfig {
        psi_true: args.psi,
        beta: args.beta.clone(),
        gamma: args.gamma.clone(),
        t: args.t.clone(),
        u: args.u.clone(),
        replications: args.reps,
        levels: if args.levels.is_empty() {
            default_levels()
        } else {
            args.levels.clone()
        },
        methods: parse_methods(&args.methods)?,
        seed: args.seed,
        threads: args.threads,
    };
    config.validate()?;
    Ok(config)
}

pub fn coverage_table(result: &CoverageResult) -> String {
    let mut text = String::from("method\tlevel\tcoverage\tse\tbold\tfallbacks\tfailures\n");
    for c in &result.cells {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            c.method,
            sig(c.level, 6),
            sig(c.coverage, 6),
            sig(c.standard_error, 6),
            if c.bold { "*" } else { "" },
            c.fallbacks,
            c.failures
        ));
    }
    text
}

pub fn cmd_coverage(args: &CoverageArgs) -> Result<Outcome, CliError> {
    let config = coverage_config(args)?;
    let result = coverage_study(&config)?;
    let mut json = serde_json::to_string_pretty(&result).map_err(|e| CliError::Usage(e.to_string()))?;
    json.push('\n');
    match &args.out {
        Some(path) => {
            write_output(Some(path), &json)?;
            write_output(None, &coverage_table(&result))?;
        }
        None => write_output(None, &json)?,
    }
    Ok(Outcome::Success)
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Table(a) => cmd_table(a),
        Command::Coverage(a) => cmd_coverage(a),
    }
}
