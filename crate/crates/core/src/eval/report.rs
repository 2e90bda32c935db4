//! JSON and flat CSV forms of metric reports and TOPSIS rankings.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::topsis::{Criterion, DecisionMatrix, TopsisResult};
use crate::error::{Error, Result};

/// Tag columns leading every report CSV row.
pub const TAG_COLUMNS: [&str; 3] = ["model", "ablation", "dataset"];

pub fn write_json(path: &Path, report: &MetricReport) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<MetricReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// One row per report: tag columns, `count`, then the union of metric
/// names in sorted order. Missing metrics are empty cells.
pub fn write_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let names: BTreeSet<&str> = reports.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = TAG_COLUMNS.iter().copied().chain(["count"]).chain(names.iter().copied()).collect();
    w.write_record(&header)?;
    for r in reports {
        let mut row: Vec<String> = TAG_COLUMNS.iter().map(|t| r.tags.get(*t).cloned().unwrap_or_default()).collect();
        row.push(r.count.to_string());
        row.extend(names.iter().map(|n| r.get(n).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut report = MetricReport::default();
        for (name, cell) in header.iter().zip(rec.iter()) {
            if TAG_COLUMNS.contains(&name) {
                report.tags.insert(name.to_string(), cell.to_string());
            } else if name == "count" {
                report.count = cell.parse().map_err(|_| Error::invalid(format!("{}: row {i}: bad count", path.display())))?;
            } else if !cell.is_empty() {
                let v = cell
                    .parse()
                    .map_err(|_| Error::invalid(format!("{}: row {i}: bad {name} `{cell}`", path.display())))?;
                report.metrics.insert(name.to_string(), v);
            }
        }
        out.push(report);
    }
    Ok(out)
}

/// Decision matrix over `metrics`, one row per report labelled
/// `model[ablation]`. Reports missing any metric are skipped.
pub fn decision_matrix(reports: &[MetricReport], metrics: &[&str]) -> DecisionMatrix {
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for r in reports {
        let row: Option<Vec<f64>> = metrics.iter().map(|m| r.get(m)).collect();
        if let Some(row) = row {
            let model = r.tags.get("model").cloned().unwrap_or_default();
            let ablation = r.tags.get("ablation").cloned().unwrap_or_default();
            rows.push(format!("{model}[{ablation}]"));
            values.push(row);
        }
    }
    DecisionMatrix {
        rows,
        criteria: metrics.iter().map(|m| Criterion::for_metric(m)).collect(),
        values,
        weights: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub candidate: String,
    pub closeness: f64,
}

pub fn ranking_rows(m: &DecisionMatrix, r: &TopsisResult) -> Vec<RankingRow> {
    r.ranking
        .iter()
        .enumerate()
        .map(|(pos, &i)| RankingRow {
            rank: pos + 1,
            candidate: m.rows[i].clone(),
            closeness: r.closeness[i],
        })
        .collect()
}

pub fn write_ranking(path: &Path, rows: &[RankingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let a = MetricReport {
            metrics: [("mae".to_string(), 0.25), ("pcc".to_string(), 0.5)].into(),
            count: 10,
            tags: Default::default(),
        }
        .with_tag("model", "cnn")
        .with_tag("ablation", "A");
        let b = MetricReport {
            metrics: [("mae".to_string(), 0.125)].into(),
            count: 4,
            tags: Default::default(),
        }
        .with_tag("model", "lstm")
        .with_tag("ablation", "A")
        .with_tag("dataset", "synth");
        let path = dir.path().join("r.csv");
        write_csv(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back[0].metrics, a.metrics);
        assert_eq!(back[1].tags.get("dataset").unwrap(), "synth");
        let m = decision_matrix(&back, &["mae", "pcc"]);
        assert_eq!(m.rows, vec!["cnn[A]".to_string()]);
    }
}
