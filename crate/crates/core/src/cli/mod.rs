//! The `infospec` command-line interface.
//!
//! Every command writes one report, CSV by default. A CSV report starts with
//! `# key=value` metadata lines followed by a header row and the data rows;
//! the JSON form carries the same metadata and rows as objects.

pub mod check;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::measure::{rn_derivative, FiniteMeasure, GroundSpace, Kernel, MeasureError};
use crate::quantize::{
    dyadic_chain, hpl_error_chain, in_measure_error_chain, kernel_error_chain, l1_error_chain, ConvergenceReport,
    QuantizeError, DEFAULT_EPS,
};
use crate::rng::{
    best_extractor, bound_sweep, random_binning_search, spectrum_convergence, BoundSweep, ExtractorPair, OutputSizes,
    RngError, DEFAULT_CAP, SANDWICH_TOL,
};
use crate::sources::{parse_source_spec, quantize_model, GroundModel, SourceError};
use check::Fault;

/// r values used when `--r-grid` is not given.
pub const DEFAULT_R_GRID: [f64; 6] = [0.05, 0.1, 0.3, 1.5, 2.0, 4.0];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Rng(#[from] RngError),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "infospec",
    version,
    about = "One-shot information-spectrum bounds and quantization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the direct and converse bounds over an r grid.
    Bounds(BoundsArgs),
    /// Find the best extractor pair and check it against the bounds.
    Oracle(OracleArgs),
    /// Per-level convergence of the quantized spectrum of a continuous source.
    QuantizeConvergence(ConvergenceArgs),
    /// Run the seeded self-check suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report file; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// JSON source spec.
    #[arg(long)]
    pub input: PathBuf,
    /// Quantization level for continuous sources (a single level).
    #[arg(long, value_parser = parse_levels)]
    pub levels: Option<Levels>,
    #[arg(long, default_value_t = 2)]
    pub y1: usize,
    #[arg(long, default_value_t = 2)]
    pub y2: usize,
    /// Comma-separated r values; none may equal 1.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_R_GRID)]
    pub r_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Threshold of the reported spectrum gap for continuous sources.
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Random extractor pairs to draw when exhaustive search exceeds the cap.
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest number of extractor pairs enumerated exhaustively.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Levels as a comma list (`1,2,4`) or an inclusive range (`1..10`).
    #[arg(long, value_parser = parse_levels)]
    pub levels: Levels,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    /// Also report the l1, in-measure, kernel and likelihood-ratio chains.
    #[arg(long)]
    pub chains: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Levels(pub Vec<u32>);

/// `1,2,5` or the inclusive range `1..6`.
pub fn parse_levels(text: &str) -> std::result::Result<Levels, String> {
    let levels: Vec<u32> = if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|e| format!("bad range start `{a}`: {e}"))?;
        let b: u32 = b.trim().parse().map_err(|e| format!("bad range end `{b}`: {e}"))?;
        if a > b {
            return Err(format!("empty range {a}..{b}"));
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|e| format!("bad level `{s}`: {e}")))
            .collect::<std::result::Result<_, _>>()?
    };
    if levels.is_empty() {
        return Err("no levels given".into());
    }
    Ok(Levels(levels))
}

/// A report: metadata, a fixed column list and rows of JSON scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(&'static str, Value)>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            meta: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &'static str, value: impl Into<Value>) -> &mut Self {
        self.meta.push((key, value.into()));
        self
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={}", cell_text(v)).expect("string write");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(cell_text).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let meta: Map<String, Value> = self.meta.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.columns
                        .iter()
                        .zip(row)
                        .map(|(c, v)| (c.to_string(), v.clone()))
                        .collect(),
                )
            })
            .collect();
        json!({ "meta": meta, "columns": self.columns, "rows": rows })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("tables are serializable");
                s.push('\n');
                s
            }
        }
    }
}

fn emit(table: &Table, out: &OutputArgs) -> Result<()> {
    let text = table.render(out.format);
    match &out.output {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn load_model(path: &Path) -> Result<GroundModel> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_source_spec(&text)?)
}

fn single_level(model: &GroundModel, levels: &Option<Levels>) -> Result<Option<u32>> {
    match (model.is_continuous(), levels) {
        (false, None) => Ok(None),
        (false, Some(_)) => Err(CliError::Usage("--levels only applies to continuous sources".into())),
        (true, Some(Levels(l))) if l.len() == 1 => Ok(Some(l[0])),
        (true, _) => Err(CliError::Usage(format!(
            "the {} source is continuous: pass a single quantization level with --levels",
            model.name()
        ))),
    }
}

/// The joint law the bounds are evaluated on, and its quantization level.
fn instance(args: &SourceArgs) -> Result<(GroundModel, FiniteMeasure, Option<u32>)> {
    let model = load_model(&args.input)?;
    let level = single_level(&model, &args.levels)?;
    let joint = match (&model, level) {
        (GroundModel::Finite(t), _) => t.joint().clone(),
        (_, Some(n)) => quantize_model(&model, n)?.joint().clone(),
        (_, None) => unreachable!("continuous sources always carry a level"),
    };
    Ok((model, joint, level))
}

fn source_meta(table: &mut Table, command: &'static str, model: &GroundModel, level: Option<u32>, sizes: OutputSizes) {
    table
        .meta("command", command)
        .meta("source", model.name())
        .meta("level", level.map_or(Value::Null, Value::from))
        .meta("y1", sizes.y1)
        .meta("y2", sizes.y2);
}

fn opt_pair(p: Option<(f64, f64)>) -> (Value, Value) {
    p.map_or((Value::Null, Value::Null), |(r, b)| (json!(r), json!(b)))
}

pub fn bounds_table(args: &BoundsArgs) -> Result<Table> {
    let (model, joint, level) = instance(&args.source)?;
    let sizes = OutputSizes::new(args.source.y1, args.source.y2)?;
    let sweep: BoundSweep = bound_sweep(&joint, sizes, &args.source.r_grid)?;
    let mut table = Table::new(&["r", "outside_prob", "kind", "bound", "boundary_mass"]);
    source_meta(&mut table, "bounds", &model, level, sizes);
    let (dr, d) = opt_pair(sweep.best_direct);
    let (cr, c) = opt_pair(sweep.best_converse);
    table
        .meta("best_direct_r", dr)
        .meta("best_direct", d)
        .meta("best_converse_r", cr)
        .meta("best_converse", c);
    if let Some(n) = level {
        let gap = spectrum_convergence(&model, &[n], args.eps)?;
        table
            .meta("eps", args.eps)
            .meta("spectrum_gap", gap.last_error().expect("one level"));
    }
    for row in &sweep.rows {
        table.push(vec![
            json!(row.r),
            json!(row.outside_prob),
            json!(row.kind.as_str()),
            json!(row.bound),
            json!(row.boundary_mass),
        ]);
    }
    Ok(table)
}

/// The oracle report and whether its sandwich verdict passed.
pub fn oracle_table(args: &OracleArgs) -> Result<(Table, bool)> {
    let (model, joint, level) = instance(&args.source)?;
    let sizes = OutputSizes::new(args.source.y1, args.source.y2)?;
    let (method, (phi, value)): (&str, (ExtractorPair, f64)) = match best_extractor(&joint, sizes, args.cap) {
        Ok(found) => ("exhaustive", found),
        Err(RngError::CapExceeded { needed, cap }) => match args.trials {
            Some(trials) => {
                eprintln!(
                    "warning: exhaustive search needs {needed} pairs (cap {cap}); \
                     falling back to {trials} random binning trials"
                );
                (
                    "random_binning",
                    random_binning_search(&joint, sizes, trials, args.seed)?,
                )
            }
            None => return Err(RngError::CapExceeded { needed, cap }.into()),
        },
        Err(e) => return Err(e.into()),
    };
    let sweep = bound_sweep(&joint, sizes, &args.source.r_grid)?;
    let converse_ok = sweep.best_converse.is_none_or(|(_, c)| c <= value + SANDWICH_TOL);
    // A heuristic value only bounds the optimum from above, so the direct side is not checked.
    let direct_ok = method != "exhaustive" || sweep.best_direct.is_none_or(|(_, d)| value <= d + SANDWICH_TOL);
    let pass = converse_ok && direct_ok;

    let mut table = Table::new(&[
        "method",
        "value",
        "phi1",
        "phi2",
        "best_converse_r",
        "best_converse",
        "best_direct_r",
        "best_direct",
        "verdict",
    ]);
    source_meta(&mut table, "oracle", &model, level, sizes);
    if method == "random_binning" {
        table.meta("trials", args.trials).meta("seed", args.seed);
    }
    let (cr, c) = opt_pair(sweep.best_converse);
    let (dr, d) = opt_pair(sweep.best_direct);
    table.push(vec![
        json!(method),
        json!(value),
        json!(ExtractorPair::encode(&phi.phi1)),
        json!(ExtractorPair::encode(&phi.phi2)),
        cr,
        c,
        dr,
        d,
        json!(if pass { "PASS" } else { "FAIL" }),
    ]);
    Ok((table, pass))
}

fn chain_reports(model: &GroundModel, levels: &[u32], eps: f64) -> Result<Vec<ConvergenceReport>> {
    let (chain, _) = dyadic_chain(model, levels)?;
    let top = *levels.last().expect("nonempty levels");
    let fine = quantize_model(model, top)?;
    let mu = fine.joint();
    let reference = FiniteMeasure::uniform(mu.space());
    let density = rn_derivative(mu, &reference)?;
    let n1 = mu.space().factors()[1];
    let x1 = GroundSpace::new(n1)?;
    let x1_map: Vec<usize> = (0..mu.space().cell_count()).map(|c| mu.space().coords(c)[1]).collect();
    let x1_kernel = Kernel::deterministic(mu.space(), &x1, &x1_map)?;
    Ok(vec![
        l1_error_chain(&density, &reference, &chain)?,
        in_measure_error_chain(&density, &reference, mu, eps, &chain)?,
        kernel_error_chain(mu, &x1_kernel, &chain)?,
        hpl_error_chain(mu, &reference, mu, eps, &chain)?,
    ])
}

pub fn convergence_table(args: &ConvergenceArgs) -> Result<Table> {
    let model = load_model(&args.input)?;
    let levels = &args.levels.0;
    let mut reports = vec![spectrum_convergence(&model, levels, args.eps)?];
    if args.chains {
        reports.extend(chain_reports(&model, levels, args.eps)?);
    }
    let mut table = Table::new(&["quantity", "level", "error", "eps"]);
    table
        .meta("command", "quantize-convergence")
        .meta("source", model.name())
        .meta("eps", args.eps);
    for report in &reports {
        for row in &report.rows {
            table.push(vec![
                json!(report.quantity.as_str()),
                json!(row.level),
                json!(row.error),
                report.eps.map_or(Value::Null, Value::from),
            ]);
        }
    }
    Ok(table)
}

/// The check report and the first failing suite, if any.
pub fn check_table(args: &CheckArgs) -> (Table, Option<check::SuiteResult>) {
    let results = check::run_all(args.seed, args.inject_fault);
    let mut table = Table::new(&["suite", "cases", "failures", "status"]);
    table.meta("command", "check").meta("seed", args.seed);
    for r in &results {
        table.push(vec![
            json!(r.suite.name()),
            json!(r.cases),
            json!(r.failures),
            json!(if r.passed() { "PASS" } else { "FAIL" }),
        ]);
    }
    let failed = results.into_iter().find(|r| !r.passed());
    (table, failed)
}

/// Runs a parsed command; `Ok(false)` means the report was written but a
/// check inside it failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Bounds(args) => {
            emit(&bounds_table(args)?, &args.out)?;
            Ok(true)
        }
        Command::Oracle(args) => {
            let (table, pass) = oracle_table(args)?;
            emit(&table, &args.out)?;
            if !pass {
                eprintln!("sandwich check failed");
            }
            Ok(pass)
        }
        Command::QuantizeConvergence(args) => {
            emit(&convergence_table(args)?, &args.out)?;
            Ok(true)
        }
        Command::Check(args) => {
            let (table, failed) = check_table(args);
            for row in &table.rows {
                eprintln!("{}: {} cases, {} failures", cell_text(&row[0]), row[1], row[2]);
            }
            emit(&table, &args.out)?;
            if let Some(r) = failed {
                let (case, msg, dump) = r.first_failure.expect("failing suite has a case");
                eprintln!("suite {} failed at case {case}: {msg}", r.suite.name());
                eprintln!("{dump}");
                return Ok(false);
            }
            Ok(true)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
