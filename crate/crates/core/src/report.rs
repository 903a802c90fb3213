//! Markdown and CSV summaries of a finished run directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::gpi::MetricsFile;
use crate::mdp::{GridShape, MetricsReport, StateId};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("run directory {} is missing: {}", .dir.display(), .missing.join(", "))]
    Missing { dir: PathBuf, missing: Vec<String> },
    #[error("cannot parse {}: {source}", .path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("cannot access {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// Three decimals, ties to even.
pub fn format_3dp(x: f64) -> String {
    let scaled = x * 1000.0;
    let floor = scaled.floor();
    let diff = scaled - floor;
    let mut n = if (diff - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    if n == 0.0 {
        n = 0.0;
    }
    let sign = if n < 0.0 { "-" } else { "" };
    let n = n.abs() as u64;
    format!("{sign}{}.{:03}", n / 1000, n % 1000)
}

/// One header row, one "Average Value" row. No iterations gives the header alone.
pub fn emit_markdown_table(iterations: &[MetricsReport], optimal: Option<&MetricsReport>) -> String {
    let mut header = String::from("|");
    let mut rule = String::from("|---");
    let mut row = String::from("| Average Value");
    for m in iterations {
        header.push_str(&format!(" | Iter {}", m.iteration_index));
        rule.push_str("|---:");
        row.push_str(&format!(" | {}", format_3dp(m.average_value)));
    }
    if let Some(opt) = optimal.filter(|_| !iterations.is_empty()) {
        header.push_str(" | Optimal");
        rule.push_str("|---:");
        row.push_str(&format!(" | {}", format_3dp(opt.average_value)));
    }
    let mut out = format!("{header} |\n{rule}|\n");
    if !iterations.is_empty() {
        out.push_str(&row);
        out.push_str(" |\n");
    }
    out
}

pub fn emit_heatmap_csv(report: &MetricsReport, grid: GridShape) -> String {
    let mut out = String::from("row,col,value\n");
    let mut cells: Vec<(usize, usize, f64)> = report
        .per_state_value
        .iter()
        .enumerate()
        .map(|(s, v)| {
            let (r, c) = grid.cell(StateId(s));
            (r, c, *v)
        })
        .collect();
    cells.sort_by_key(|(r, c, _)| (*r, *c));
    for (r, c, v) in cells {
        out.push_str(&format!("{r},{c},{}\n", format_3dp(v)));
    }
    out
}

/// Distinct prompts answered in the run's transcript log.
fn transcript_count(dir: &Path) -> Option<usize> {
    let text = fs::read_to_string(dir.join(nlrl_gateway::TRANSCRIPT_FILE)).ok()?;
    let hashes: BTreeSet<String> = text
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .filter_map(|v| v.get("prompt_hash").and_then(|h| h.as_str()).map(String::from))
        .collect();
    Some(hashes.len())
}

pub fn render_report(metrics: &MetricsFile, transcripts: Option<usize>) -> String {
    let mut out = String::from("# Run report\n\n");
    out.push_str(&emit_markdown_table(&metrics.iterations, Some(&metrics.optimal)));
    if let (Some(last), true) = (metrics.iterations.last(), metrics.optimal.average_value != 0.0) {
        out.push_str(&format!(
            "\nFinal / optimal: {}\n",
            format_3dp(last.average_value / metrics.optimal.average_value)
        ));
    }
    if let Some(n) = transcripts {
        out.push_str(&format!("\nDistinct prompts answered: {n}\n"));
    }
    out
}

/// Writes `report.md` and one heatmap CSV per iteration; returns the files written.
pub fn write_report(run_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let metrics_path = run_dir.join("metrics.json");
    if !metrics_path.is_file() {
        let mut missing = vec!["metrics.json".to_string()];
        if !run_dir.join("config.json").is_file() {
            missing.push("config.json".into());
        }
        return Err(ReportError::Missing { dir: run_dir.to_path_buf(), missing });
    }
    let text = fs::read_to_string(&metrics_path)
        .map_err(|source| ReportError::Io { path: metrics_path.clone(), source })?;
    let metrics: MetricsFile = serde_json::from_str(&text)
        .map_err(|source| ReportError::Parse { path: metrics_path.clone(), source })?;

    let write = |name: String, body: String| {
        let path = run_dir.join(name);
        fs::write(&path, body).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        Ok::<_, ReportError>(path)
    };
    let mut written = vec![write("report.md".into(), render_report(&metrics, transcript_count(run_dir)))?];
    if let Some(grid) = metrics.grid {
        for m in &metrics.iterations {
            written.push(write(format!("heatmap_iter_{}.csv", m.iteration_index), emit_heatmap_csv(m, grid))?);
        }
        written.push(write("heatmap_optimal.csv".into(), emit_heatmap_csv(&metrics.optimal, grid))?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(i: usize, avg: f64) -> MetricsReport {
        MetricsReport { per_state_value: vec![avg; 4], average_value: avg, iteration_index: i }
    }

    #[test]
    fn three_decimals_ties_to_even() {
        assert_eq!(format_3dp(0.0625), "0.062");
        assert_eq!(format_3dp(0.0635), "0.064");
        assert_eq!(format_3dp(0.5555), "0.556");
        assert_eq!(format_3dp(-14.0), "-14.000");
        assert_eq!(format_3dp(-0.0001), "0.000");
        assert_eq!(format_3dp(0.21749), "0.217");
    }

    #[test]
    fn table_layout() {
        let vals = [0.062, 0.217, 0.326, 0.261, 0.327];
        let iters: Vec<_> = vals.iter().enumerate().map(|(i, v)| report(i, *v)).collect();
        let table = emit_markdown_table(&iters, Some(&report(0, 0.555)));
        assert_eq!(
            table,
            "| | Iter 0 | Iter 1 | Iter 2 | Iter 3 | Iter 4 | Optimal |\n\
             |---|---:|---:|---:|---:|---:|---:|\n\
             | Average Value | 0.062 | 0.217 | 0.326 | 0.261 | 0.327 | 0.555 |\n"
        );
        assert_eq!(emit_markdown_table(&[], Some(&report(0, 0.555))), "| |\n|---|\n");
    }

    #[test]
    fn heatmap_has_one_line_per_cell() {
        let csv = emit_heatmap_csv(&report(1, 0.5), GridShape { rows: 2, cols: 2 });
        assert_eq!(csv, "row,col,value\n0,0,0.500\n0,1,0.500\n1,0,0.500\n1,1,0.500\n");
    }
}
