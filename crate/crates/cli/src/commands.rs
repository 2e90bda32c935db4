//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use muqar::data::io::{read_catalog, read_interactions, INTERACTIONS_FILE};
use muqar::eval::metrics::{regression_metrics, MetricReport};
use muqar::eval::report::{self, decision_matrix, ranking_rows, write_ranking};
use muqar::eval::{topsis, Criterion};
use muqar::model::fusion::InputDims;
use muqar::model::{Head, Model64};
use muqar::pipeline::{self, read_examples, write_examples, BuildInfo, BUILD_FILE, EXAMPLES_FILE};
use muqar::series::TrainingExample;
use muqar::synth::{simulate, SynthConfig, SYNTH_CONFIG_FILE};
use muqar::train::split::split_established_new;
use muqar::train::{fit, write_history, FitReport};
use muqar::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::{read_json, require_dir, require_file, write_json, GridSpec, RunManifest};

pub const MODEL_DIR: &str = "model";
pub const RUN_FILE: &str = "run.json";
pub const SPLIT_FILE: &str = "split.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FIT_FILE: &str = "fit.json";

pub fn cmd_simulate(config: Option<&Path>, out: &Path, seed: Option<u64>, n: Option<usize>, k: Option<usize>) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.n = n.unwrap_or(cfg.n);
    cfg.k = k.unwrap_or(cfg.k);
    let data = simulate(&cfg)?;
    data.write(out)?;
    info!(
        "wrote {} interactions over {} products to {}",
        data.log.records.len(),
        data.catalog.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_build(data: &Path, out: &Path, n: Option<usize>, k: Option<usize>) -> Result<()> {
    require_dir(data, "dataset")?;
    // A simulated dataset carries its intended window sizes.
    let synth: Option<SynthConfig> = data
        .join(SYNTH_CONFIG_FILE)
        .is_file()
        .then(|| read_json(&data.join(SYNTH_CONFIG_FILE)))
        .transpose()?;
    let n = n.or(synth.as_ref().map(|s| s.n)).unwrap_or(12);
    let k = k.or(synth.as_ref().map(|s| s.k)).unwrap_or(1);
    let catalog = read_catalog(data)?;
    let log = read_interactions(&data.join(INTERACTIONS_FILE))?;
    let prepared = pipeline::prepare(&catalog, &log, n, k)?;
    fs::create_dir_all(out.join("panels"))?;
    for (g, panel) in prepared.panels.iter().enumerate() {
        panel.write_csv(
            &out.join("panels").join(format!("group{g}.csv")),
            &out.join("panels").join(format!("group{g}_observed.csv")),
        )?;
    }
    write_examples(&out.join(EXAMPLES_FILE), &prepared.examples)?;
    let info = BuildInfo {
        n,
        k,
        manifest: catalog.manifest.clone(),
        stats: prepared.stats,
        undefined_cells: prepared.undefined_cells,
        sparsity: prepared.sparsity,
    };
    write_json(&out.join(BUILD_FILE), &info)?;
    info!("wrote {} examples to {}", prepared.examples.len(), out.display());
    Ok(())
}

struct Built {
    dir: PathBuf,
    info: BuildInfo,
    examples: Vec<TrainingExample>,
}

fn load_built(dir: &Path) -> Result<Built> {
    require_dir(dir, "data")?;
    require_file(&dir.join(BUILD_FILE), "build summary")?;
    Ok(Built {
        dir: dir.to_path_buf(),
        info: read_json(&dir.join(BUILD_FILE))?,
        examples: read_examples(&dir.join(EXAMPLES_FILE))?,
    })
}

/// Product ids per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

fn ids(examples: &[TrainingExample]) -> Vec<String> {
    let mut v: Vec<String> = examples.iter().map(|e| e.product_id.clone()).collect();
    v.sort();
    v.dedup();
    v
}

/// Trains one model into `out` and returns it with its fit report.
fn train_into(manifest: &RunManifest, built: &Built, out: &Path) -> Result<(Model64, FitReport)> {
    fs::create_dir_all(out)?;
    let split = split_established_new(built.examples.clone(), manifest.seed)?;
    let dims = InputDims::from(&built.info.manifest);
    let config = manifest.model_config(dims, built.info.n, built.info.k)?;
    let mut train = manifest.train.clone();
    train.seed = manifest.seed;
    let mut model = Model64::new(config)?;
    info!(
        "training [{}] {} with {} parameters on {} examples ({} validation)",
        model.config.mask,
        model.config.backbone.kind,
        model.num_parameters(),
        split.train.len(),
        split.validation.len()
    );
    let report = fit(&mut model, &split.train, &split.validation, &train, |r| {
        info!(
            "epoch {:>3}  lr {:.2e}  train {:.6}  val loss {}  val mae {}",
            r.epoch,
            r.lr,
            r.train_loss,
            r.val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            r.val_mae.map_or("-".into(), |v| format!("{v:.6}"))
        )
    })?;
    model.save(&out.join(MODEL_DIR))?;
    write_history(&out.join(HISTORY_FILE), &report.history)?;
    write_json(&out.join(FIT_FILE), &report)?;
    let resolved = RunManifest {
        data: Some(built.dir.clone()),
        out: Some(out.to_path_buf()),
        backbone: Some(model.config.backbone.kind),
        ..manifest.clone()
    };
    write_json(&out.join(RUN_FILE), &resolved)?;
    write_json(
        &out.join(SPLIT_FILE),
        &SplitIds {
            train: ids(&split.train),
            validation: ids(&split.validation),
            test: ids(&split.test),
        },
    )?;
    info!("best epoch {} with score {:.6}", report.best_epoch, report.best_score);
    Ok((model, report))
}

pub fn cmd_train(manifest: &RunManifest) -> Result<()> {
    let built = load_built(manifest.data_dir()?)?;
    train_into(manifest, &built, manifest.out_dir()?)?;
    Ok(())
}

/// Which examples a command looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

struct Run {
    manifest: RunManifest,
    model: Model64,
    split: SplitIds,
}

fn load_run(dir: &Path) -> Result<Run> {
    require_dir(dir, "run")?;
    require_file(&dir.join(RUN_FILE), "run manifest")?;
    Ok(Run {
        manifest: read_json(&dir.join(RUN_FILE))?,
        model: Model64::load(&dir.join(MODEL_DIR))?,
        split: read_json(&dir.join(SPLIT_FILE))?,
    })
}

fn select(examples: Vec<TrainingExample>, split: &SplitIds, which: SplitName) -> Vec<TrainingExample> {
    let keep: &[String] = match which {
        SplitName::All => return examples,
        SplitName::Train => &split.train,
        SplitName::Validation => &split.validation,
        SplitName::Test => &split.test,
    };
    examples
        .into_iter()
        .filter(|e| keep.binary_search(&e.product_id).is_ok())
        .collect()
}

fn dataset_tag(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn write_report(out: &Path, report: &MetricReport) -> Result<()> {
    fs::create_dir_all(out)?;
    report::write_json(&out.join("metrics.json"), report)?;
    report::write_csv(&out.join("metrics.csv"), std::slice::from_ref(report))?;
    let line: Vec<String> = report.metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
    info!("{} examples: {}", report.count, line.join(" "));
    Ok(())
}

fn evaluate_on(model: &Model64, built: &Built, split: &SplitIds, which: SplitName, label: &str) -> Result<MetricReport> {
    let examples = select(built.examples.clone(), split, which);
    Ok(pipeline::evaluate(model, &examples)?
        .with_tag("model", label)
        .with_tag("ablation", model.config.mask.to_string())
        .with_tag("dataset", dataset_tag(&built.dir)))
}

pub fn cmd_evaluate(run_dir: &Path, data: Option<&Path>, which: SplitName, out: Option<&Path>) -> Result<()> {
    let run = load_run(run_dir)?;
    let built = load_built(data.or(run.manifest.data.as_deref()).ok_or_else(|| Error::invalid("no data directory"))?)?;
    let label = run.model.config.backbone.kind.to_string();
    let report = evaluate_on(&run.model, &built, &run.split, which, &label)?;
    write_report(out.unwrap_or(run_dir), &report)
}

/// Regression metrics of a forecast table that carries targets.
pub fn cmd_evaluate_forecasts(forecasts: &Path, out: &Path) -> Result<()> {
    require_file(forecasts, "forecast")?;
    let mut r = csv::Reader::from_path(forecasts)?;
    let header = r.headers()?.clone();
    let columns = |prefix: &str| -> Vec<usize> {
        (0..header.len())
            .filter(|&i| header[i].strip_prefix(prefix).is_some_and(|h| h.parse::<usize>().is_ok()))
            .collect()
    };
    let (forecast_cols, target_cols) = (columns("forecast_"), columns("target_"));
    if forecast_cols.is_empty() || forecast_cols.len() != target_cols.len() {
        return Err(Error::invalid(format!(
            "{} needs matching forecast_i and target_i columns",
            forecasts.display()
        )));
    }
    let (mut y, mut yhat) = (Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::invalid(format!("{} row {}: bad number `{}`", forecasts.display(), row + 1, &rec[i])))
        };
        for (&f, &t) in forecast_cols.iter().zip(&target_cols) {
            yhat.push(cell(f)?);
            y.push(cell(t)?);
        }
    }
    let report = regression_metrics(&y, &yhat)?.with_tag("dataset", dataset_tag(forecasts));
    write_report(out, &report)
}

pub fn cmd_predict(run_dir: &Path, data: Option<&Path>, which: SplitName, out: &Path) -> Result<()> {
    let run = load_run(run_dir)?;
    let built = load_built(data.or(run.manifest.data.as_deref()).ok_or_else(|| Error::invalid("no data directory"))?)?;
    let examples = select(built.examples, &run.split, which);
    let refs: Vec<&TrainingExample> = examples.iter().collect();
    let predictions = run.model.predict(&refs)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(out)?;
    let width = run.model.config.output_width();
    let (pred_prefix, with_targets) = match run.model.config.head {
        Head::Regression => ("forecast", true),
        Head::Classification { .. } => ("p", false),
    };
    let mut header = vec!["product_id".to_string(), "group_id".into(), "target_week".into()];
    header.extend((0..width).map(|i| format!("{pred_prefix}_{}", i + 1)));
    if with_targets {
        header.extend((0..width).map(|i| format!("target_{}", i + 1)));
    }
    w.write_record(&header)?;
    for (e, p) in examples.iter().zip(&predictions) {
        let mut row = vec![e.product_id.clone(), e.group_id.to_string(), e.target_week.to_string()];
        row.extend(p.iter().map(|v| v.to_string()));
        if with_targets {
            row.extend(e.target.iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    info!("wrote {} forecasts to {}", examples.len(), out.display());
    Ok(())
}

/// Default TOPSIS criteria: whichever of these the reports carry.
const SELECT_METRICS: [&str; 4] = ["mae", "pcc", "accuracy", "auc"];

pub fn cmd_select(reports: &[PathBuf], metrics: Option<&[String]>, out: &Path) -> Result<()> {
    let mut all = Vec::new();
    for p in reports {
        require_file(p, "report")?;
        all.extend(report::read_csv(p)?);
    }
    let names: Vec<&str> = match metrics {
        Some(m) => m.iter().map(String::as_str).collect(),
        None => SELECT_METRICS
            .iter()
            .copied()
            .filter(|m| all.iter().all(|r| r.get(m).is_some()))
            .collect(),
    };
    if names.is_empty() {
        return Err(Error::invalid("no selection metric is present in every report"));
    }
    let matrix = decision_matrix(&all, &names);
    if matrix.rows.len() < all.len() {
        warn!("{} reports lack a selection metric and are left out", all.len() - matrix.rows.len());
    }
    let result = topsis(&matrix)?;
    for d in &result.dropped {
        warn!("criterion {d} dropped: constant zero column");
    }
    let rows = ranking_rows(&matrix, &result);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_ranking(out, &rows)?;
    let directions: Vec<String> = names
        .iter()
        .map(|n| format!("{n} ({:?})", Criterion::for_metric(n).direction).to_lowercase())
        .collect();
    info!("ranked {} candidates on {}", rows.len(), directions.join(", "));
    if let Some(best) = rows.first() {
        info!("best: {} (closeness {:.4})", best.candidate, best.closeness);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub candidate: String,
    pub status: String,
    pub best_epoch: Option<usize>,
}

pub const GRID_REPORTS: &str = "reports.csv";
pub const GRID_SUMMARY: &str = "grid.json";

/// Trains every candidate in order with the run's seed. Failures are
/// recorded and skipped. Validation metrics form the decision matrix.
pub fn cmd_grid(manifest: &RunManifest, grid: &Path) -> Result<()> {
    require_file(grid, "grid spec")?;
    let spec: GridSpec = read_json(grid)?;
    let settings = manifest.settings()?;
    let candidates = spec.candidates(settings.backbone.as_ref())?;
    let built = load_built(manifest.data_dir()?)?;
    let out = manifest.out_dir()?;
    let base_mask = manifest.mask()?;
    if !base_mask.uses_qar() {
        return Err(Error::invalid("a backbone grid needs A or X in the mask"));
    }
    let mut reports = Vec::new();
    let mut outcomes = Vec::new();
    for c in &candidates {
        let mut mask = base_mask;
        mask.exogenous = c.backbone.kind.uses_exogenous();
        mask.target = true;
        let settings_path = out.join(format!("{}.model.json", c.label));
        let mut s = settings.clone();
        s.backbone = Some(c.backbone.clone());
        write_json(&settings_path, &s)?;
        let candidate_manifest = RunManifest {
            model_config: Some(settings_path),
            mask: mask.to_string(),
            backbone: Some(c.backbone.kind),
            ..manifest.clone()
        };
        let dir = out.join(&c.label);
        let result = train_into(&candidate_manifest, &built, &dir).and_then(|(model, fit)| {
            let split: SplitIds = read_json(&dir.join(SPLIT_FILE))?;
            let r = evaluate_on(&model, &built, &split, SplitName::Validation, &c.label)?;
            Ok((r, fit))
        });
        match result {
            Ok((r, fit)) => {
                write_report(&dir, &r)?;
                reports.push(r);
                outcomes.push(GridOutcome {
                    candidate: c.label.clone(),
                    status: "ok".into(),
                    best_epoch: Some(fit.best_epoch),
                });
            }
            Err(e) => {
                warn!("candidate {} failed: {e}", c.label);
                outcomes.push(GridOutcome {
                    candidate: c.label.clone(),
                    status: format!("failed: {e}"),
                    best_epoch: None,
                });
            }
        }
    }
    write_json(&out.join(GRID_SUMMARY), &outcomes)?;
    if reports.is_empty() {
        return Err(Error::Numeric("every grid candidate failed".into()));
    }
    report::write_csv(&out.join(GRID_REPORTS), &reports)?;
    info!("{} of {} candidates trained", reports.len(), candidates.len());
    Ok(())
}
