//! End-to-end glue: interaction log to examples, and model to metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::popularity::PopularityIndex;
use crate::data::{Catalog, DatasetManifest, InteractionLog};
use crate::error::{Error, Result};
use crate::eval::metrics::{classification_metrics, regression_metrics, MetricReport};
use crate::model::{class_labels, Head, MuqarModel};
use crate::series::{
    self, attribute_samples, build_panels, make_examples, weekly_aggregate_span, AttributePanel, ExampleStats,
    TrainingExample,
};
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct Prepared {
    /// One interpolated panel per group.
    pub panels: Vec<AttributePanel>,
    pub examples: Vec<TrainingExample>,
    pub stats: ExampleStats,
    /// Daily cells whose popularity was undefined.
    pub undefined_cells: usize,
    /// Raw panel sparsity per group.
    pub sparsity: Vec<f64>,
}

/// Popularity, weekly panels and windowed examples in one pass.
pub fn prepare(catalog: &Catalog, log: &InteractionLog, n: usize, k: usize) -> Result<Prepared> {
    log.validate(&catalog.manifest)?;
    let index = PopularityIndex::build(log, catalog);
    let (samples, undefined_cells) = index.samples();
    let panels = build_panels(&samples, catalog)?;
    let m = &catalog.manifest;
    let sparsity = attribute_samples(&samples, catalog)
        .iter()
        .map(|s| weekly_aggregate_span(s, m.num_attributes, m.start_date, m.end_date).map(|p| series::sparsity(&p)))
        .collect::<Result<Vec<_>>>()?;
    let (examples, stats) = make_examples(catalog, &panels, &samples, n, k)?;
    info!(
        "{} popularity samples, {} undefined cells, {} examples",
        samples.len(),
        undefined_cells,
        examples.len()
    );
    Ok(Prepared {
        panels,
        examples,
        stats,
        undefined_cells,
        sparsity,
    })
}

pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const BUILD_FILE: &str = "build.json";

/// Summary written next to the examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub n: usize,
    pub k: usize,
    pub manifest: DatasetManifest,
    pub stats: ExampleStats,
    pub undefined_cells: usize,
    /// Share of unobserved (week, attribute) cells per group before interpolation.
    pub sparsity: Vec<f64>,
}

/// One JSON object per line.
pub fn write_examples(path: &Path, examples: &[TrainingExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Metrics of `model` on `examples`. Regression pools every horizon step.
pub fn evaluate<T: Scalar>(model: &MuqarModel<T>, examples: &[TrainingExample]) -> Result<MetricReport> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let predictions = model.predict(&refs)?;
    match model.config.head {
        Head::Regression => {
            let y: Vec<f64> = examples.iter().flat_map(|e| e.target.iter().copied()).collect();
            let yhat: Vec<f64> = predictions.iter().flatten().map(|v| v.as_f64()).collect();
            regression_metrics(&y, &yhat)
        }
        Head::Classification { classes } => {
            let target: Vec<f64> = examples.iter().map(|e| e.target[0]).collect();
            let labels = class_labels(&target, classes)?;
            let scores: Vec<Vec<f64>> = predictions.iter().map(|p| p.iter().map(|v| v.as_f64()).collect()).collect();
            classification_metrics(&labels, &scores)
        }
    }
}
