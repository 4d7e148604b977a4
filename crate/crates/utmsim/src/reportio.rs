//! On-disk run artifacts: the JSON report, flat text logs for registry
//! mutations and per-link traffic, and the three CSV summary tables.
//! Every writer is deterministic so reruns with the same seed produce
//! byte-identical files.

use std::fs;
use std::io;
use std::path::Path;

use utmsim_core::metrics::{ContingencyRow, Fig2Row, Fig3Row};
use utmsim_core::SimReport;

/// Compact single-line JSON with a trailing newline.
pub fn report_json(report: &SimReport) -> String {
    let mut text = serde_json::to_string(report).expect("reports always serialize");
    text.push('\n');
    text
}

fn lines_file(lines: Vec<String>) -> String {
    if lines.is_empty() {
        return String::new();
    }
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

/// Writes `report.json`, `dss_mutations.log`, and one `traffic/<src>-<dst>.log`
/// per link into `dir`, creating directories as needed.
pub fn write_run_dir(dir: &Path, report: &SimReport) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report_json(report))?;
    fs::write(dir.join("dss_mutations.log"), lines_file(report.mutation_lines()))?;
    let traffic_dir = dir.join("traffic");
    fs::create_dir_all(&traffic_dir)?;
    for (route, records) in &report.traffic {
        let (src, dst) = route.split_once("->").unwrap_or((route.as_str(), ""));
        let lines = records.iter().map(|r| r.summary_line(src, dst)).collect();
        fs::write(traffic_dir.join(format!("{src}-{dst}.log")), lines_file(lines))?;
    }
    Ok(())
}

/// Turns a sweep cell label into a directory name. Labels are built from
/// user-supplied ids, so path separators are replaced.
pub fn cell_dirname(label: &str) -> String {
    label.replace(['/', '\\'], "_")
}

pub fn fig2_csv(rows: &[Fig2Row]) -> String {
    let mut out = String::from("window_ms,uss_id,p95_scd_ms,n_samples,reps\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.window_ms, r.uss_id, r.p95_scd_ms, r.n_samples, r.reps
        ));
    }
    out
}

pub fn fig3_csv(rows: &[Fig3Row]) -> String {
    let mut out = String::from("added_latency_ms,op_id,acceptance_rate,reps\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:?},{}\n",
            r.added_latency_ms, r.op_id, r.acceptance_rate, r.reps
        ));
    }
    out
}

pub fn contingency_csv(rows: &[ContingencyRow]) -> String {
    let mut out = String::from("cell,contingency_count\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.cell, r.contingency_count));
    }
    out
}
