//! Forecast and classification metrics.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named metric values plus descriptive tags (model, ablation, dataset).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    pub count: usize,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.tags.insert(key.to_string(), value.into());
        self
    }
}

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() || y.len() < 2 {
        return Err(Error::invalid(format!(
            "metrics need two equal-length series of at least 2 values, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in metric input".into()));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64
}

/// `None` when `sum |y| == 0`.
pub fn wape(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let denom: f64 = y.iter().map(|v| v.abs()).sum();
    (denom > 0.0).then(|| y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pcc(y: &[f64], yhat: &[f64]) -> Option<f64> {
    let n = y.len() as f64;
    let (my, mh) = (y.iter().sum::<f64>() / n, yhat.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Share of positions where `y` and `yhat` fall on the same side of `threshold`.
pub fn binary_accuracy(y: &[f64], yhat: &[f64], threshold: f64) -> f64 {
    let hits = y.iter().zip(yhat).filter(|(a, b)| (**a > threshold) == (**b > threshold)).count();
    hits as f64 / y.len() as f64
}

pub const BA_THRESHOLD: f64 = 0.5;

/// MAE, WAPE, PCC and BA. Undefined PCC or WAPE are left out of the report.
pub fn regression_metrics(y: &[f64], yhat: &[f64]) -> Result<MetricReport> {
    check_pair(y, yhat)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("mae".to_string(), mae(y, yhat));
    metrics.insert("ba".to_string(), binary_accuracy(y, yhat, BA_THRESHOLD));
    match wape(y, yhat) {
        Some(w) => {
            metrics.insert("wape".to_string(), w);
        }
        None => warn!("WAPE undefined: all targets are zero"),
    }
    match pcc(y, yhat) {
        Some(p) => {
            metrics.insert("pcc".to_string(), p);
        }
        None => warn!("PCC undefined: a series has zero variance"),
    }
    Ok(MetricReport {
        metrics,
        count: y.len(),
        tags: BTreeMap::new(),
    })
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn accuracy(labels: &[usize], scores: &[Vec<f64>]) -> f64 {
    let hits = labels.iter().zip(scores).filter(|(l, s)| argmax(s) == **l).count();
    hits as f64 / labels.len() as f64
}

/// Rank-statistic AUC of `scores` separating `positive` rows from the
/// rest; tied scores count half. `None` if either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&r| positive[r]).count() as f64;
        i = j + 1;
    }
    Some((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p * n) as f64)
}

/// Macro one-vs-rest AUC. Classes with no positive or no negative row
/// are excluded with a warning; `None` if no class remains.
pub fn macro_auc(labels: &[usize], scores: &[Vec<f64>], classes: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match binary_auc(&col, &pos) {
            Some(a) => {
                total += a;
                used += 1;
            }
            None => warn!("class {c} excluded from macro AUC: absent from labels or the only class present"),
        }
    }
    (used > 0).then(|| total / used as f64)
}

/// Accuracy and macro AUC. Score rows must be probability vectors.
pub fn classification_metrics(labels: &[usize], scores: &[Vec<f64>]) -> Result<MetricReport> {
    if labels.len() != scores.len() || labels.is_empty() {
        return Err(Error::invalid("labels and scores must be non-empty and equally long"));
    }
    let classes = scores[0].len();
    for (i, row) in scores.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.len() != classes || (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("score row {i} is not a probability vector over {classes} classes")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
    }
    let mut metrics = BTreeMap::new();
    metrics.insert("accuracy".to_string(), accuracy(labels, scores));
    if let Some(auc) = macro_auc(labels, scores, classes) {
        metrics.insert("auc".to_string(), auc);
    }
    Ok(MetricReport {
        metrics,
        count: labels.len(),
        tags: BTreeMap::new(),
    })
}
