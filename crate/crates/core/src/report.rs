// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Machine-readable results: JSON Lines, a flat CSV mirror, and the
//! strategy-by-dataset comparison table.
//!
//! Output is deterministic: no timestamps or host details are written, and
//! every collection is emitted in a fixed order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::Algorithm;
use crate::error::Result;
use crate::strategies::{Outcome, StrategyResult};

/// First line of every JSONL report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub seed: u64,
    pub split_digest: String,
    pub algorithm: Algorithm,
    pub train_ratio: f64,
    pub n_select: usize,
}

/// One metrics line: a strategy at one list length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub method: String,
    pub dims: Vec<String>,
    #[serde(rename = "N")]
    pub n: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub cases: usize,
    pub skipped: usize,
}

/// Written instead of metrics when a strategy hit a resource limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedRecord {
    pub method: String,
    pub dims: Vec<String>,
    pub aborted: String,
}

pub fn records(result: &StrategyResult) -> Vec<ReportRecord> {
    let method = result.strategy.to_string();
    match &result.outcome {
        Outcome::Report(report) => report
            .rows
            .iter()
            .map(|row| ReportRecord {
                method: method.clone(),
                dims: result.dims.clone(),
                n: row.n,
                recall: row.recall,
                precision: row.precision,
                f1: row.f1,
                cases: report.cases,
                skipped: report.skipped,
            })
            .collect(),
        Outcome::Aborted(_) => Vec::new(),
    }
}

pub fn write_jsonl<W: Write>(mut out: W, header: &ReportHeader, results: &[StrategyResult]) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(header)?)?;
    for result in results {
        match &result.outcome {
            Outcome::Report(_) => {
                for record in records(result) {
                    writeln!(out, "{}", serde_json::to_string(&record)?)?;
                }
            }
            Outcome::Aborted(reason) => {
                let record = AbortedRecord {
                    method: result.strategy.to_string(),
                    dims: result.dims.clone(),
                    aborted: reason.clone(),
                };
                writeln!(out, "{}", serde_json::to_string(&record)?)?;
            }
        }
    }
    Ok(())
}

fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

/// Same content as the JSONL metrics lines; dimensions are `+`-joined.
/// Aborted strategies appear with `-` metrics.
pub fn write_csv<W: Write>(mut out: W, results: &[StrategyResult]) -> Result<()> {
    writeln!(out, "method,dims,N,recall,precision,f1,cases,skipped")?;
    for result in results {
        let method = csv_field(&result.strategy.to_string());
        let dims = csv_field(&result.dims.join("+"));
        match &result.outcome {
            Outcome::Report(_) => {
                for r in records(result) {
                    writeln!(
                        out,
                        "{method},{dims},{},{},{},{},{},{}",
                        r.n, r.recall, r.precision, r.f1, r.cases, r.skipped
                    )?;
                }
            }
            Outcome::Aborted(_) => writeln!(out, "{method},{dims},-,-,-,-,-,-")?,
        }
    }
    Ok(())
}

/// One column of the comparison table: a dataset/algorithm label and the
/// results of every strategy on it.
#[derive(Debug, Clone)]
pub struct ComparisonColumn<'a> {
    pub label: String,
    pub results: &'a [StrategyResult],
}

/// Rows are strategies (in first-seen order), columns are the given labels,
/// cells are F1 at `n` with three decimals, or `-` when the strategy was
/// aborted or not run.
pub fn comparison_csv<W: Write>(mut out: W, columns: &[ComparisonColumn<'_>], n: usize) -> Result<()> {
    let mut methods: Vec<String> = Vec::new();
    for column in columns {
        for result in column.results {
            let method = result.strategy.to_string();
            if !methods.contains(&method) {
                methods.push(method);
            }
        }
    }
    write!(out, "method")?;
    for column in columns {
        write!(out, ",{}", csv_field(&column.label))?;
    }
    writeln!(out)?;
    for method in &methods {
        write!(out, "{}", csv_field(method))?;
        for column in columns {
            let cell = column
                .results
                .iter()
                .find(|r| &r.strategy.to_string() == method)
                .and_then(|r| r.outcome.report())
                .and_then(|report| report.f1_at(n))
                .map_or_else(|| "-".to_owned(), |f1| format!("{f1:.3}"));
            write!(out, ",{cell}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
