//! Ranking of candidate models by closeness to the ideal criteria vector.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Benefit,
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub direction: Direction,
}

impl Criterion {
    pub fn new(name: &str, direction: Direction) -> Self {
        Self {
            name: name.to_string(),
            direction,
        }
    }

    /// Direction of a known metric name: errors are costs, the rest benefits.
    pub fn for_metric(name: &str) -> Self {
        let direction = match name {
            "mae" | "wape" | "mse" | "loss" => Direction::Cost,
            _ => Direction::Benefit,
        };
        Self::new(name, direction)
    }
}

/// Rows are candidates, columns criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMatrix {
    pub rows: Vec<String>,
    pub criteria: Vec<Criterion>,
    pub values: Vec<Vec<f64>>,
    /// Uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisResult {
    /// Closeness per input row.
    pub closeness: Vec<f64>,
    /// Row indices, best first; ties keep row order.
    pub ranking: Vec<usize>,
    /// Criteria left out because their column norm is zero.
    pub dropped: Vec<String>,
}

pub fn topsis(m: &DecisionMatrix) -> Result<TopsisResult> {
    let (rows, cols) = (m.values.len(), m.criteria.len());
    if rows < 2 || cols == 0 {
        return Err(Error::invalid(format!("TOPSIS needs at least 2 rows and 1 criterion, got {rows}x{cols}")));
    }
    if m.rows.len() != rows || m.values.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("decision matrix is ragged"));
    }
    if m.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("decision matrix holds non-finite values"));
    }
    let weights = match &m.weights {
        Some(w) if w.len() != cols || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) => {
            return Err(Error::invalid("weights must be finite, non-negative and one per criterion"));
        }
        Some(w) => w.clone(),
        None => vec![1.0; cols],
    };
    let norms: Vec<f64> = (0..cols)
        .map(|j| m.values.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    let kept: Vec<usize> = (0..cols).filter(|&j| norms[j] > 0.0).collect();
    let dropped: Vec<String> = (0..cols).filter(|&j| norms[j] == 0.0).map(|j| m.criteria[j].name.clone()).collect();
    for name in &dropped {
        warn!("criterion {name} dropped from TOPSIS: zero column norm");
    }
    if kept.is_empty() {
        return Err(Error::invalid("every TOPSIS criterion has a zero column"));
    }
    let wsum: f64 = kept.iter().map(|&j| weights[j]).sum();
    if wsum <= 0.0 {
        return Err(Error::invalid("weights of the retained criteria sum to zero"));
    }
    let scaled: Vec<Vec<f64>> = m
        .values
        .iter()
        .map(|r| kept.iter().map(|&j| r[j] / norms[j] * weights[j] / wsum).collect())
        .collect();
    let mut ideal = Vec::with_capacity(kept.len());
    let mut anti = Vec::with_capacity(kept.len());
    for (c, &j) in kept.iter().enumerate() {
        let col = scaled.iter().map(|r| r[c]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        match m.criteria[j].direction {
            Direction::Benefit => {
                ideal.push(hi);
                anti.push(lo);
            }
            Direction::Cost => {
                ideal.push(lo);
                anti.push(hi);
            }
        }
    }
    let dist = |r: &[f64], p: &[f64]| r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let closeness: Vec<f64> = scaled
        .iter()
        .map(|r| {
            let (dp, dm) = (dist(r, &ideal), dist(r, &anti));
            if dp + dm > 0.0 {
                dm / (dp + dm)
            } else {
                0.5
            }
        })
        .collect();
    let mut ranking: Vec<usize> = (0..rows).collect();
    ranking.sort_by(|&a, &b| closeness[b].total_cmp(&closeness[a]));
    Ok(TopsisResult {
        closeness,
        ranking,
        dropped,
    })
}
