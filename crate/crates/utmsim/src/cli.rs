//! The `utmsim` command-line front end: generate scenario files, run them,
//! sweep parameter grids, and recompute tables or audits from stored runs.
//!
//! Exit codes: 0 success, 2 validation (bad flags, malformed scenarios,
//! bad overrides), 3 file-system trouble, 4 a stored run failed its audit.

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use utmsim_core::engine::validate_script;
use utmsim_core::scenario::{
    make_churn_scenario, make_contingency_scenario, make_paper_scenario, make_race_scenario,
    GeneratorSpec,
};
use utmsim_core::sweep::{self, CellAgg, SweepAxis, SweepField, SweepSpec, SweepValue};
use utmsim_core::{audit, metrics, ScenarioScript, SimReport};

use crate::reportio;
use crate::schema;

/// Seed fallback when `--seed`/`--base-seed` is absent.
const SEED_ENV: &str = "ANAM_SEED";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    Audit(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Audit(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Audit(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "utmsim", version, about = "Deterministic simulator of a federated UTM network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scenario file
    GenScenario(GenArgs),
    /// Run one scenario and store its artifacts
    Run(RunArgs),
    /// Run a parameter grid and store per-cell runs plus CSV tables
    Sweep(SweepArgs),
    /// Recompute a table or replay the audit over stored runs
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Paper,
    Race,
    Churn,
    ContingencySlow,
    ContingencyFast,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario family
    #[arg(long, value_enum, default_value = "paper")]
    kind: Kind,
    /// Output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Operations per corridor lane (paper kind only)
    #[arg(long)]
    n_ops: Option<u32>,
    /// Number of suppliers (paper kind only)
    #[arg(long)]
    n_uss: Option<u32>,
    /// Demand window the replans land in (paper kind only)
    #[arg(long)]
    window_ms: Option<u64>,
    /// Layout seed for submission times (paper kind only)
    #[arg(long)]
    layout_seed: Option<u64>,
    /// Extra one-way latency from the last supplier to the registry (paper kind only)
    #[arg(long)]
    added_latency_ms: Option<u64>,
    /// When the off-nominal flight departs its volume (paper kind only)
    #[arg(long)]
    nonconf_at_ms: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for the run artifacts
    #[arg(long)]
    out: PathBuf,
    /// Simulation seed; falls back to $ANAM_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
    /// Override applied before the run, e.g. parameters.proc_ms=9 (repeatable)
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base scenario file
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for the sweep artifacts
    #[arg(long)]
    out: PathBuf,
    /// Grid axis, e.g. window_ms=15000,30000 (repeatable)
    #[arg(long = "param", value_name = "NAME=V1,V2,...", required = true)]
    param: Vec<String>,
    /// Runs per cell, seeded consecutively
    #[arg(long, default_value_t = 1)]
    reps: u32,
    /// Seed of the first rep; falls back to $ANAM_SEED, then 0
    #[arg(long)]
    base_seed: Option<u64>,
    /// Override applied to the base scenario before sweeping (repeatable)
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Fig2,
    Fig3,
    Audit,
}

#[derive(Args)]
struct ReportArgs {
    /// Table to print, or `audit` to replay the mutation logs
    #[arg(value_enum)]
    which: ReportKind,
    /// Run directory or sweep root
    #[arg(long = "in", value_name = "DIR")]
    in_dir: PathBuf,
}

pub fn main_impl() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScenario(args) => cmd_gen(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Validation(format!("{SEED_ENV} is not a valid seed: {text:?}"))
        }),
        Err(env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(CliError::Validation(format!("{SEED_ENV}: {e}"))),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioScript, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let script = schema::scenario_from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    validate_script(&script)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(script)
}

/// `parameters.X` selects an engine parameter, `link.SRC->DST.FIELD` a link
/// profile field, and a bare or `generator.`-prefixed name a generator knob.
fn parse_field(name: &str) -> Result<SweepField, CliError> {
    if let Some(rest) = name.strip_prefix("parameters.") {
        return Ok(SweepField::Param(String::from(rest)));
    }
    if let Some(rest) = name.strip_prefix("link.") {
        let (route, field) = rest.rsplit_once('.').ok_or_else(|| {
            CliError::Validation(format!("link override must look like link.SRC->DST.FIELD: {name:?}"))
        })?;
        let (src, dst) = route.split_once("->").ok_or_else(|| {
            CliError::Validation(format!("link override must name a route SRC->DST: {name:?}"))
        })?;
        return Ok(SweepField::Link {
            src: String::from(src),
            dst: String::from(dst),
            field: String::from(field),
        });
    }
    let rest = name.strip_prefix("generator.").unwrap_or(name);
    Ok(SweepField::Generator(String::from(rest)))
}

fn parse_value(text: &str) -> Result<SweepValue, CliError> {
    if let Ok(v) = text.parse::<i64>() {
        return Ok(SweepValue::Int(v));
    }
    if let Ok(v) = text.parse::<f64>() {
        return Ok(SweepValue::Float(v));
    }
    Err(CliError::Validation(format!("not a numeric value: {text:?}")))
}

fn parse_set_arg(text: &str) -> Result<(SweepField, SweepValue), CliError> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override must look like NAME=VALUE: {text:?}")))?;
    Ok((parse_field(name)?, parse_value(value)?))
}

fn parse_grid_arg(text: &str) -> Result<SweepAxis, CliError> {
    let (name, values) = text.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("axis must look like NAME=V1,V2,...: {text:?}"))
    })?;
    let values = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(parse_value)
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Validation(format!("axis {name:?} has no values")));
    }
    Ok(SweepAxis { field: parse_field(name)?, values })
}

fn apply_sets(base: &ScenarioScript, sets: &[String]) -> Result<ScenarioScript, CliError> {
    if sets.is_empty() {
        return Ok(base.clone());
    }
    let assignments = sets.iter().map(|s| parse_set_arg(s)).collect::<Result<Vec<_>, _>>()?;
    let script = sweep::apply_assignments(base, &assignments)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    validate_script(&script).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(script)
}

fn build_scenario(args: &GenArgs) -> Result<ScenarioScript, CliError> {
    let knobs = args.n_ops.is_some()
        || args.n_uss.is_some()
        || args.window_ms.is_some()
        || args.layout_seed.is_some()
        || args.added_latency_ms.is_some()
        || args.nonconf_at_ms.is_some();
    if args.kind != Kind::Paper && knobs {
        return Err(CliError::Validation(String::from(
            "generator knobs apply only to --kind paper",
        )));
    }
    match args.kind {
        Kind::Paper => {
            let d = GeneratorSpec::default();
            let spec = GeneratorSpec {
                n_ops: args.n_ops.unwrap_or(d.n_ops),
                n_uss: args.n_uss.unwrap_or(d.n_uss),
                window_ms: args.window_ms.unwrap_or(d.window_ms),
                seed: args.layout_seed.unwrap_or(d.seed),
                added_latency_ms: args.added_latency_ms.unwrap_or(d.added_latency_ms),
                nonconf_at_ms: args.nonconf_at_ms.unwrap_or(d.nonconf_at_ms),
            };
            make_paper_scenario(&spec).map_err(|e| CliError::Validation(e.to_string()))
        }
        Kind::Race => Ok(make_race_scenario()),
        Kind::Churn => Ok(make_churn_scenario()),
        Kind::ContingencySlow => Ok(make_contingency_scenario(true)),
        Kind::ContingencyFast => Ok(make_contingency_scenario(false)),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let script = build_scenario(args)?;
    let text = schema::scenario_to_json_string(&script);
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(io_err(path))?;
            }
            fs::write(path, text).map_err(io_err(path))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let seed = resolve_seed(args.seed)?;
    let base = load_scenario(&args.scenario)?;
    let script = apply_sets(&base, &args.set)?;
    let report =
        utmsim_core::run(&script, seed).map_err(|e| CliError::Validation(e.to_string()))?;
    reportio::write_run_dir(&args.out, &report).map_err(io_err(&args.out))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base_seed = resolve_seed(args.base_seed)?;
    let base = load_scenario(&args.scenario)?;
    let base = apply_sets(&base, &args.set)?;
    let axes = args.param.iter().map(|p| parse_grid_arg(p)).collect::<Result<Vec<_>, _>>()?;
    let spec = SweepSpec { axes, base_seed, reps: args.reps };

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    fs::write(args.out.join("scenario.json"), schema::scenario_to_json_string(&base))
        .map_err(io_err(&args.out))?;

    let runs_dir = args.out.join("runs");
    let mut sink_err: Option<std::io::Error> = None;
    let cells = sweep::run_sweep(&base, &spec, |label, seed, report| {
        if sink_err.is_some() {
            return;
        }
        let dir = runs_dir.join(reportio::cell_dirname(label)).join(seed.to_string());
        if let Err(e) = reportio::write_run_dir(&dir, report) {
            sink_err = Some(e);
        }
    })
    .map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(e) = sink_err {
        return Err(CliError::Io(format!("{}: {e}", runs_dir.display())));
    }

    let tables = [
        ("fig2.csv", reportio::fig2_csv(&sweep::fig2_rows(&cells, &base.uss_ids))),
        ("fig3.csv", reportio::fig3_csv(&sweep::fig3_rows(&cells))),
        ("contingency.csv", reportio::contingency_csv(&sweep::contingency_rows(&cells))),
    ];
    for (name, text) in tables {
        fs::write(args.out.join(name), text).map_err(io_err(&args.out))?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn sorted_dir_names(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// A run directory itself, or every `runs/<cell>/<seed>` under a sweep root.
/// Seed directories are visited in numeric order.
fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    if root.join("report.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let runs = root.join("runs");
    let mut dirs = Vec::new();
    if runs.is_dir() {
        for cell in sorted_dir_names(&runs)? {
            let cell_dir = runs.join(&cell);
            let mut seeds = sorted_dir_names(&cell_dir)?;
            seeds.sort_by_key(|s| s.parse::<u64>().ok());
            for seed in seeds {
                let dir = cell_dir.join(&seed);
                if dir.join("report.json").is_file() {
                    dirs.push(dir);
                }
            }
        }
    }
    if dirs.is_empty() {
        return Err(CliError::Io(format!("{}: no runs found", root.display())));
    }
    Ok(dirs)
}

fn load_report(dir: &Path) -> Result<SimReport, CliError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    match args.which {
        ReportKind::Audit => report_audit(&args.in_dir),
        ReportKind::Fig2 => {
            let (scenario, cells) = load_cells(&args.in_dir)?;
            print!("{}", reportio::fig2_csv(&sweep::fig2_rows(&cells, &scenario.uss_ids)));
            Ok(())
        }
        ReportKind::Fig3 => {
            let (_, cells) = load_cells(&args.in_dir)?;
            print!("{}", reportio::fig3_csv(&sweep::fig3_rows(&cells)));
            Ok(())
        }
    }
}

fn report_audit(root: &Path) -> Result<(), CliError> {
    let runs = find_run_dirs(root)?;
    let mut failures = 0usize;
    for dir in &runs {
        let rel = dir.strip_prefix(root).unwrap_or(dir);
        let rel = if rel.as_os_str().is_empty() { Path::new(".") } else { rel };
        let report = load_report(dir)?;
        match audit::replay(&report.dss_mutations, &report.final_entities) {
            Ok(_) => println!("PASS {}", rel.display()),
            Err(e) => {
                failures += 1;
                println!("FAIL {}: {e}", rel.display());
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Audit(format!("{failures} of {} runs failed the audit", runs.len())));
    }
    Ok(())
}

/// First-axis values recovered from a cell directory name such as
/// `window_ms=15000` or `window_ms=15000+proc_ms=9`.
fn label_axis_values(label: &str) -> Result<Vec<SweepValue>, CliError> {
    label
        .split('+')
        .map(|part| {
            let (_, value) = part.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("not a sweep cell directory name: {label:?}"))
            })?;
            parse_value(value)
        })
        .collect()
}

fn axis0_sort_key(cell: &CellAgg) -> f64 {
    match cell.axis_values.first() {
        Some(SweepValue::Int(v)) => *v as f64,
        Some(SweepValue::Float(v)) => *v,
        None => 0.0,
    }
}

/// Rebuilds per-cell aggregates from the stored runs of a sweep so tables
/// can be recomputed without rerunning anything.
fn load_cells(root: &Path) -> Result<(ScenarioScript, Vec<CellAgg>), CliError> {
    let scenario = load_scenario(&root.join("scenario.json"))?;
    let runs = root.join("runs");
    if !runs.is_dir() {
        return Err(CliError::Io(format!("{}: no runs found", root.display())));
    }
    let mut cells = Vec::new();
    for label in sorted_dir_names(&runs)? {
        let cell_dir = runs.join(&label);
        let mut seeds = sorted_dir_names(&cell_dir)?;
        seeds.sort_by_key(|s| s.parse::<u64>().ok());
        let mut cell = CellAgg {
            axis_values: label_axis_values(&label)?,
            label,
            samples: Vec::new(),
            accepted_designated: 0,
            designated_op: scenario.designated_op.clone(),
            contingency_count: 0,
            reps: 0,
        };
        for seed in seeds {
            let dir = cell_dir.join(&seed);
            if !dir.join("report.json").is_file() {
                continue;
            }
            let report = load_report(&dir)?;
            if let Some(op) = &cell.designated_op {
                if metrics::final_outcome_accepted(&report.scd_samples, op) == Some(true) {
                    cell.accepted_designated += 1;
                }
            }
            cell.contingency_count += report.contingencies.len() as u32;
            cell.samples.extend(report.scd_samples);
            cell.reps += 1;
        }
        if cell.reps > 0 {
            cells.push(cell);
        }
    }
    if cells.is_empty() {
        return Err(CliError::Io(format!("{}: no runs found", root.display())));
    }
    cells.sort_by(|a, b| {
        axis0_sort_key(a).total_cmp(&axis0_sort_key(b)).then_with(|| a.label.cmp(&b.label))
    });
    Ok((scenario, cells))
}
