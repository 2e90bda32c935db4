//! `muqar` command-line pipeline: simulate, build, train, evaluate,
//! predict, select and grid.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::SplitName;
use manifest::RunManifest;
use muqar::model::qar::BackboneKind;

/// Exit status for input validation failures.
const EXIT_VALIDATION: u8 = 2;
/// Exit status for runtime and numeric failures.
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "muqar", version, about = "Multimodal quasi-autoregressive popularity forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// Synthetic config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Turn a dataset into weekly panels and windowed examples.
    Build {
        /// Dataset directory (interactions, catalog, features).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input window length in weeks.
        #[arg(long)]
        n: Option<usize>,
        /// Forecast horizon in weeks.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train one model.
    Train(RunArgs),
    /// Score a trained model, or a forecast table with `--forecasts`.
    Evaluate {
        /// Training output directory.
        #[arg(long, required_unless_present = "forecasts")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Forecast CSV with forecast_i and target_i columns.
        #[arg(long, conflicts_with = "model")]
        forecasts: Option<PathBuf>,
        /// Report directory; the model directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-example forecasts.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Forecast CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidates in report CSVs with TOPSIS.
    Select {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Criteria; mae, pcc, accuracy and auc when present by default.
        #[arg(long, value_delimiter = ',')]
        metrics: Option<Vec<String>>,
        /// Ranking CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and validate every candidate of a backbone grid.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        /// Grid spec JSON: backbones, layers, widths.
        #[arg(long)]
        grid: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run manifest JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory of `muqar build`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Feature families, e.g. `I,A,X`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    backbone: Option<BackboneKind>,
}

impl RunArgs {
    fn manifest(&self) -> muqar::Result<RunManifest> {
        let mut m = RunManifest::load(self.config.as_deref())?;
        if let Some(d) = &self.data {
            m.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            m.out = Some(o.clone());
        }
        if let Some(s) = self.seed {
            m.seed = s;
        }
        if let Some(mask) = &self.mask {
            m.mask = mask.clone();
        }
        if let Some(b) = self.backbone {
            m.backbone = Some(b);
        }
        Ok(m)
    }
}

fn run(cli: Cli) -> muqar::Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed, n, k } => commands::cmd_simulate(config.as_deref(), &out, seed, n, k),
        Command::Build { data, out, n, k } => commands::cmd_build(&data, &out, n, k),
        Command::Train(args) => commands::cmd_train(&args.manifest()?),
        Command::Evaluate {
            model,
            data,
            split,
            forecasts,
            out,
        } => match (forecasts, model) {
            (Some(f), _) => {
                let out = out.ok_or_else(|| muqar::Error::invalid("--forecasts needs --out"))?;
                commands::cmd_evaluate_forecasts(&f, &out)
            }
            (None, Some(m)) => commands::cmd_evaluate(&m, data.as_deref(), split, out.as_deref()),
            (None, None) => Err(muqar::Error::invalid("give --model or --forecasts")),
        },
        Command::Predict { model, data, split, out } => commands::cmd_predict(&model, data.as_deref(), split, &out),
        Command::Select { reports, metrics, out } => commands::cmd_select(&reports, metrics.as_deref(), &out),
        Command::Grid { run, grid } => commands::cmd_grid(&run.manifest()?, &grid),
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("MUQAR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("MUQAR_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
