//! Trains every ablation candidate on one synthetic dataset and prints
//! test MAE per candidate, using the desk presets.
//!
//! ```text
//! SYNTH_JSON='{"coupling": 0.5}' cargo run --release -p muqar --example ablation_study -- [seed]
//! ```
//!
//! `SYNTH_JSON` overrides fields of the default synthetic config. `EPOCHS`,
//! `PATIENCE` and `DROPOUT` override the presets, `ONLY` takes a `;`-separated
//! list of masks to run and `VERBOSE` prints per-epoch progress.

use std::str::FromStr;
use std::time::Instant;

use muqar::model::fusion::InputDims;
use muqar::model::qar::BackboneKind;
use muqar::model::{Model32, ModelConfig};
use muqar::pipeline::{evaluate, prepare};
use muqar::synth::{simulate, SynthConfig};
use muqar::train::split::split_established_new;
use muqar::train::{fit, TrainConfig};

fn env<T: FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().map(|v| v.parse().unwrap_or_else(|_| panic!("bad {name}")))
}

fn main() -> muqar::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut synth: SynthConfig = match std::env::var("SYNTH_JSON") {
        Ok(json) => serde_json::from_str(&json).expect("synthetic config JSON"),
        Err(_) => SynthConfig::default(),
    };
    synth.seed = seed;
    let t = Instant::now();
    let data = simulate(&synth)?;
    let prepared = prepare(&data.catalog, &data.log, synth.n, synth.k)?;
    let split = split_established_new(prepared.examples, seed)?;
    println!(
        "{} records, train {} val {} test {} ({:.1}s)",
        data.log.records.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        t.elapsed().as_secs_f64()
    );
    let dims = InputDims::from(&data.catalog.manifest);
    let mut train = TrainConfig { seed, ..TrainConfig::desk() };
    train.epochs = env("EPOCHS").unwrap_or(train.epochs);
    train.patience = env("PATIENCE").unwrap_or(train.patience);
    let candidates = [
        ("FusionMLP", "I", BackboneKind::Cnn),
        ("QAR-cnn", "A", BackboneKind::Cnn),
        ("QAR-lstm", "A", BackboneKind::Lstm),
        ("QAR-convlstm", "A", BackboneKind::Convlstm),
        ("MuQAR", "I+A", BackboneKind::Convlstm),
        ("MuQAR", "I+A+X", BackboneKind::ConvlstmX),
    ];
    let only: Option<String> = env("ONLY");
    for (name, mask, kind) in candidates {
        if only.as_deref().is_some_and(|o| !o.split(';').any(|m| m == mask)) {
            continue;
        }
        let t = Instant::now();
        let mut config = ModelConfig::desk(dims.clone(), synth.n, synth.k, mask.parse()?, kind);
        config.seed = seed;
        if let Some(p) = env::<f64>("DROPOUT") {
            config.fusion.dropout = p;
            config.backbone.dropout = p;
        }
        let mut model = Model32::new(config)?;
        let verbose = std::env::var("VERBOSE").is_ok();
        let report = fit(&mut model, &split.train, &split.validation, &train, |r| {
            if verbose {
                println!("  epoch {:>3} lr {:.5} train {:.5} val mae {:.5}", r.epoch, r.lr, r.train_loss, r.val_mae.unwrap_or(f64::NAN));
            }
        })?;
        let metrics = evaluate(&model, &split.test)?;
        println!(
            "{name:>13} [{mask:<5}] test MAE {:.5}  best epoch {:>2}  ({:.1}s)",
            metrics.get("mae").unwrap_or(f64::NAN),
            report.best_epoch,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
