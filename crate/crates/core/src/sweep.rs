//! Parameter sweeps: run a scenario across a grid of knob settings and
//! a batch of seeds per cell, pooling per-run results into per-cell
//! aggregates for the figure tables.
//!
//! Generator knobs are applied first and the scenario is regenerated,
//! then engine parameters and link profiles are overridden on the
//! resulting script. Seeds are `base_seed..base_seed + reps`, identical
//! in every cell, so cells differ only in the swept knob.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::engine::{run, ScenarioScript, ScriptError};
use crate::metrics::{self, Fig2Row, Fig3Row, ScdSample};
use crate::report::SimReport;
use crate::scenario::make_paper_scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Int(i64),
    Float(f64),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v:?}"),
        }
    }
}

impl SweepValue {
    fn as_u64(&self) -> Result<u64, ScriptError> {
        match self {
            SweepValue::Int(v) if *v >= 0 => Ok(*v as u64),
            _ => Err(ScriptError(format!("{self} is not a non-negative integer"))),
        }
    }

    fn as_u32(&self) -> Result<u32, ScriptError> {
        let v = self.as_u64()?;
        u32::try_from(v).map_err(|_| ScriptError(format!("{v} does not fit in 32 bits")))
    }

    fn as_f64(&self) -> f64 {
        match self {
            SweepValue::Int(v) => *v as f64,
            SweepValue::Float(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepField {
    /// A `GeneratorSpec` field; the scenario is rebuilt around it.
    Generator(String),
    /// A `Params` field, overridden after generation.
    Param(String),
    /// One directed link's profile field.
    Link { src: String, dst: String, field: String },
}

impl SweepField {
    pub fn label(&self) -> String {
        match self {
            SweepField::Generator(name) | SweepField::Param(name) => name.clone(),
            SweepField::Link { src, dst, field } => format!("{src}-{dst}.{field}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub field: SweepField,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    pub base_seed: u64,
    pub reps: u32,
}

/// Pooled results for one grid cell.
#[derive(Debug, Clone)]
pub struct CellAgg {
    pub label: String,
    pub axis_values: Vec<SweepValue>,
    /// Every deconfliction sample from every rep, concatenated.
    pub samples: Vec<ScdSample>,
    /// Reps whose designated operation was finally accepted.
    pub accepted_designated: u32,
    pub designated_op: Option<String>,
    pub contingency_count: u32,
    pub reps: u32,
}

fn apply_generator(
    spec: &mut crate::scenario::GeneratorSpec,
    name: &str,
    value: &SweepValue,
) -> Result<(), ScriptError> {
    match name {
        "n_ops" => spec.n_ops = value.as_u32()?,
        "n_uss" => spec.n_uss = value.as_u32()?,
        "window_ms" => spec.window_ms = value.as_u64()?,
        "seed" => spec.seed = value.as_u64()?,
        "added_latency_ms" => spec.added_latency_ms = value.as_u64()?,
        "nonconf_at_ms" => spec.nonconf_at_ms = value.as_u64()?,
        _ => return Err(ScriptError(format!("unknown generator field {name:?}"))),
    }
    Ok(())
}

fn apply_param(script: &mut ScenarioScript, name: &str, value: &SweepValue) -> Result<(), ScriptError> {
    let p = &mut script.params;
    match name {
        "grace_window_ms" => p.grace_window_ms = value.as_u64()?,
        "per_pair_check_ms" => p.per_pair_check_ms = value.as_u64()?,
        "proc_ms" => p.proc_ms = value.as_u64()?,
        "submission_window_ms" => p.submission_window_ms = value.as_u64()?,
        "link_retry_attempts" => p.link_retry_attempts = value.as_u32()?,
        "link_retry_backoff_ms" => p.link_retry_backoff_ms = value.as_u64()?,
        "max_scd_attempts" => p.max_scd_attempts = value.as_u32()?,
        "max_concurrent_scd" => p.max_concurrent_scd = value.as_u32()?,
        _ => return Err(ScriptError(format!("unknown parameter {name:?}"))),
    }
    Ok(())
}

fn apply_link(
    script: &mut ScenarioScript,
    src: &str,
    dst: &str,
    field: &str,
    value: &SweepValue,
) -> Result<(), ScriptError> {
    let link = script
        .links
        .iter_mut()
        .find(|l| l.src == src && l.dst == dst)
        .ok_or_else(|| ScriptError(format!("no link {src} -> {dst} to sweep")))?;
    match field {
        "base_latency_ms" => link.profile.base_latency_ms = value.as_u64()?,
        "jitter_ms" => link.profile.jitter_ms = value.as_u64()?,
        "failure_prob" => link.profile.failure_prob = value.as_f64(),
        _ => return Err(ScriptError(format!("unknown link field {field:?}"))),
    }
    link.profile
        .validate()
        .map_err(|e| ScriptError(format!("link {src} -> {dst}: {e}")))
}

fn build_cell_script(
    base: &ScenarioScript,
    assignments: &[(&SweepField, &SweepValue)],
) -> Result<ScenarioScript, ScriptError> {
    let mut gspec = base.generator;
    let mut regen = false;
    for (field, value) in assignments {
        if let SweepField::Generator(name) = field {
            let spec = gspec
                .as_mut()
                .ok_or_else(|| ScriptError(String::from("scenario has no generator to sweep")))?;
            apply_generator(spec, name, value)?;
            regen = true;
        }
    }
    let mut script = if regen {
        make_paper_scenario(&gspec.expect("checked above"))?
    } else {
        base.clone()
    };
    for (field, value) in assignments {
        match field {
            SweepField::Generator(_) => {}
            SweepField::Param(name) => apply_param(&mut script, name, value)?,
            SweepField::Link { src, dst, field } => apply_link(&mut script, src, dst, field, value)?,
        }
    }
    Ok(script)
}

/// Applies assignments to a script outside any sweep: generator fields
/// regenerate the scenario first, then parameters and link profiles are
/// overridden on the result.
pub fn apply_assignments(
    base: &ScenarioScript,
    assignments: &[(SweepField, SweepValue)],
) -> Result<ScenarioScript, ScriptError> {
    let refs: Vec<(&SweepField, &SweepValue)> = assignments.iter().map(|(f, v)| (f, v)).collect();
    build_cell_script(base, &refs)
}

/// Runs the full grid. `sink` sees every finished run (cell label, seed,
/// report) so callers can stream reports to storage; aggregation happens
/// here regardless.
pub fn run_sweep(
    base: &ScenarioScript,
    spec: &SweepSpec,
    mut sink: impl FnMut(&str, u64, &SimReport),
) -> Result<Vec<CellAgg>, ScriptError> {
    if spec.axes.is_empty() || spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(ScriptError(String::from("sweep needs at least one axis with values")));
    }
    if spec.reps == 0 {
        return Err(ScriptError(String::from("sweep needs at least one rep")));
    }
    let mut cells = Vec::new();
    let mut index: Vec<usize> = spec.axes.iter().map(|_| 0).collect();
    loop {
        let assignments: Vec<(&SweepField, &SweepValue)> = spec
            .axes
            .iter()
            .zip(&index)
            .map(|(axis, &i)| (&axis.field, &axis.values[i]))
            .collect();
        let label = assignments
            .iter()
            .map(|(f, v)| format!("{}={v}", f.label()))
            .collect::<Vec<_>>()
            .join("+");
        let script = build_cell_script(base, &assignments)?;
        let designated = script.designated_op.clone();

        let mut agg = CellAgg {
            label: label.clone(),
            axis_values: assignments.iter().map(|(_, v)| **v).collect(),
            samples: Vec::new(),
            accepted_designated: 0,
            designated_op: designated.clone(),
            contingency_count: 0,
            reps: spec.reps,
        };
        for i in 0..spec.reps {
            let seed = spec.base_seed + u64::from(i);
            let report = run(&script, seed)?;
            sink(&label, seed, &report);
            if let Some(op) = &designated {
                if metrics::final_outcome_accepted(&report.scd_samples, op).unwrap_or(false) {
                    agg.accepted_designated += 1;
                }
            }
            agg.contingency_count += report.contingencies.len() as u32;
            agg.samples.extend(report.scd_samples);
        }
        cells.push(agg);

        // cartesian advance
        let mut axis = spec.axes.len();
        loop {
            if axis == 0 {
                return Ok(cells);
            }
            axis -= 1;
            index[axis] += 1;
            if index[axis] < spec.axes[axis].values.len() {
                break;
            }
            index[axis] = 0;
        }
    }
}

fn axis0_u64(cell: &CellAgg) -> u64 {
    match cell.axis_values.first() {
        Some(SweepValue::Int(v)) if *v >= 0 => *v as u64,
        Some(SweepValue::Float(v)) if *v >= 0.0 => *v as u64,
        _ => 0,
    }
}

/// Per-supplier p95 deconfliction duration against the first axis.
pub fn fig2_rows(cells: &[CellAgg], uss_ids: &[String]) -> Vec<Fig2Row> {
    let mut rows = Vec::new();
    for cell in cells {
        for uss in uss_ids {
            let durations: Vec<u64> = cell
                .samples
                .iter()
                .filter(|s| s.uss == *uss)
                .map(|s| s.duration_ms())
                .collect();
            let Some(p95) = metrics::percentile_nearest_rank(&durations, 95) else { continue };
            rows.push(Fig2Row {
                window_ms: axis0_u64(cell),
                uss_id: uss.clone(),
                p95_scd_ms: p95,
                n_samples: durations.len() as u32,
                reps: cell.reps,
            });
        }
    }
    rows
}

/// Designated-operation acceptance rate against the first axis.
pub fn fig3_rows(cells: &[CellAgg]) -> Vec<Fig3Row> {
    cells
        .iter()
        .filter_map(|cell| {
            let op = cell.designated_op.clone()?;
            Some(Fig3Row {
                added_latency_ms: axis0_u64(cell),
                op_id: op,
                acceptance_rate: f64::from(cell.accepted_designated) / f64::from(cell.reps),
                reps: cell.reps,
            })
        })
        .collect()
}

/// Contingency declarations per cell.
pub fn contingency_rows(cells: &[CellAgg]) -> Vec<metrics::ContingencyRow> {
    cells
        .iter()
        .map(|cell| metrics::ContingencyRow {
            cell: cell.label.to_string(),
            contingency_count: cell.contingency_count,
        })
        .collect()
}
