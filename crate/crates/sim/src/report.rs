use serde_json::json;
use thiserror::Error;

use crate::run::RunOutput;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("nothing to report: at least one scenario run is required")]
    Empty,
}

const COLUMNS: [&str; 5] = [
    "scenario",
    "standing_privilege_count",
    "max_exposure_window_secs",
    "blast_radius",
    "audit_coverage",
];

/// Aligned text table, one row per run, fixed column order.
pub fn render_table(runs: &[RunOutput]) -> Result<String, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows: Vec<[String; 5]> = runs
        .iter()
        .map(|r| {
            let m = &r.metrics;
            [
                r.scenario.to_string(),
                m.standing_privilege_count.to_string(),
                m.max_exposure_window.as_secs().to_string(),
                m.blast_radius.to_string(),
                format!("{:.3}", m.audit_coverage),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([COLUMNS[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[&str]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&COLUMNS);
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for row in &rows {
        out.push_str(&line(&row.iter().map(String::as_str).collect::<Vec<_>>()));
        out.push('\n');
    }
    Ok(out)
}

/// Machine-readable form of the same table.
pub fn render_json(runs: &[RunOutput]) -> Result<String, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows: Vec<_> = runs
        .iter()
        .map(|r| json!({"scenario": r.scenario, "seed": r.seed, "metrics": r.metrics}))
        .collect();
    Ok(
        serde_json::to_string_pretty(&json!({ "columns": COLUMNS, "runs": rows }))
            .expect("report serializes"),
    )
}
