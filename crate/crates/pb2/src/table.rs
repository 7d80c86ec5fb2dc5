//! Feedback-efficiency tables: algorithms by feedback amount, mean and
//! population standard deviation of the evaluation return over seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::formats::MetricRow;

/// Text written in place of statistics for a cell with no runs.
pub const GAP: &str = "gap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub algorithm: String,
    pub feedback: usize,
    /// Seeds contributing to the cell.
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Highest mean in its feedback column.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub env: String,
    pub algorithms: Vec<String>,
    pub feedback: Vec<usize>,
    /// Row-major: `cells[a * feedback.len() + f]`.
    pub cells: Vec<Cell>,
}

impl ReportTable {
    pub fn cell(&self, algorithm: &str, feedback: usize) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.feedback == feedback)
    }
}

/// Sample mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn algorithm_rank(name: &str) -> (usize, String) {
    let known = ["pb2", "qpa", "pebble", "rune"];
    let rank = known.iter().position(|k| *k == name).unwrap_or(known.len());
    (rank, name.to_string())
}

/// One table per environment. When a seed has several points at the same
/// feedback amount, the last one counts.
pub fn make_table(rows: &[MetricRow]) -> Vec<ReportTable> {
    let mut by_env: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        by_env.entry(&r.env).or_default().push(r);
    }
    by_env
        .into_iter()
        .map(|(env, rows)| {
            let mut algorithms: Vec<String> = rows
                .iter()
                .map(|r| r.algorithm.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            algorithms.sort_by_key(|a| algorithm_rank(a));
            let feedback: Vec<usize> = rows
                .iter()
                .map(|r| r.feedback)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut last: BTreeMap<(&str, usize, u64), f64> = BTreeMap::new();
            for r in &rows {
                last.insert((r.algorithm.as_str(), r.feedback, r.seed), r.ret);
            }
            let mut cells = Vec::with_capacity(algorithms.len() * feedback.len());
            for a in &algorithms {
                for &f in &feedback {
                    let values: Vec<f64> = last
                        .range((a.as_str(), f, 0)..=(a.as_str(), f, u64::MAX))
                        .map(|(_, v)| *v)
                        .collect();
                    let stats = mean_std(&values);
                    cells.push(Cell {
                        algorithm: a.clone(),
                        feedback: f,
                        n: values.len(),
                        mean: stats.map(|s| s.0),
                        std: stats.map(|s| s.1),
                        best: false,
                    });
                }
            }
            for (fi, _) in feedback.iter().enumerate() {
                let best = (0..algorithms.len())
                    .filter_map(|ai| cells[ai * feedback.len() + fi].mean.map(|m| (ai, m)))
                    .fold(None, |acc: Option<(usize, f64)>, (ai, m)| match acc {
                        Some((_, bm)) if bm >= m => acc,
                        _ => Some((ai, m)),
                    });
                if let Some((ai, _)) = best {
                    cells[ai * feedback.len() + fi].best = true;
                }
            }
            ReportTable {
                env: env.to_string(),
                algorithms,
                feedback,
                cells,
            }
        })
        .collect()
}

/// Long-format CSV: `env,algorithm,feedback,n,mean,std,best`.
pub fn to_csv(tables: &[ReportTable]) -> String {
    let mut out = String::from("env,algorithm,feedback,n,mean,std,best\n");
    for t in tables {
        for c in &t.cells {
            let (mean, std) = match (c.mean, c.std) {
                (Some(m), Some(s)) => (format!("{m:.4}"), format!("{s:.4}")),
                _ => (GAP.to_string(), GAP.to_string()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.env, c.algorithm, c.feedback, c.n, mean, std, c.best
            );
        }
    }
    out
}

pub fn to_json(tables: &[ReportTable]) -> Result<String> {
    Ok(serde_json::to_string_pretty(tables)? + "\n")
}

/// Aligned text rendering with `mean ± std` cells; the best cell of each
/// column carries a trailing `*`.
pub fn render(table: &ReportTable) -> String {
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec![table.env.clone()];
    header.extend(table.feedback.iter().map(|f| format!("N={f}")));
    grid.push(header);
    for a in &table.algorithms {
        let mut row = vec![a.clone()];
        for &f in &table.feedback {
            let c = table.cell(a, f).expect("complete grid");
            row.push(match (c.mean, c.std) {
                (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}{}", if c.best { "*" } else { "" }),
                _ => GAP.to_string(),
            });
        }
        grid.push(row);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|k| grid.iter().map(|r| r[k].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &grid {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
