use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tsonet::dataset::{degrade_resolution, generate_synthetic_scene, Dataset, Split, SyntheticSceneSpec, DEFAULT_RATIOS};
use tsonet::train::{parse_matrix, predict_dir, run_ablation, train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "tsonet", version, about = "Monocular building height estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with train/val/test splits.
    Synth {
        /// JSON scene description; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Patch side length; scales building counts and sizes.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// JSON report, or CSV when the name ends in `.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Dataset root; defaults to the one the checkpoint was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Degrade inputs to this ground sampling distance in metres first.
        #[arg(long)]
        gsd: Option<f64>,
    },
    /// Write height maps for every patch in a directory.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the module and task ablation matrix.
    Ablate {
        /// `default`, `module`, `task`, or a JSON file of runs.
        #[arg(long, default_value = "default")]
        matrix: String,
        #[arg(long)]
        out: PathBuf,
        /// Base training config shared by every run.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<tsonet::Error>())
                .map_or(3, tsonet::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { spec, n, out, size, seed } => synth(spec.as_deref(), n, &out, size, seed),
        Command::Train { config } => {
            let cfg = TrainConfig::from_path(&config)?;
            let run = train(&cfg)?;
            println!(
                "best epoch {} val rmse {} ({} steps)",
                run.best.epoch,
                run.best.best_val_rmse.map_or("n/a".into(), |v| format!("{v:.4}")),
                run.last.step
            );
            Ok(())
        }
        Command::Eval { ckpt, split, report, data, gsd } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let root = data.unwrap_or_else(|| ckpt.config.data_dir.clone());
            let mut patches = Dataset::open(&root)?.load(split)?;
            if let Some(gsd) = gsd {
                patches = patches.iter().map(|p| degrade_resolution(p, gsd)).collect::<Result<_, _>>()?;
            }
            let metrics = ckpt.evaluate(&patches)?;
            match report {
                Some(path) => metrics.save(&path)?,
                None => println!("{}", metrics.to_json()),
            }
            Ok(())
        }
        Command::Predict { ckpt, input, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let n = predict_dir(&ckpt, &input, &out)?;
            log::info!("wrote {n} height maps to {}", out.display());
            Ok(())
        }
        Command::Ablate { matrix, out, config } => {
            let base = match config {
                Some(path) => TrainConfig::from_path(&path)?,
                None => TrainConfig::default(),
            };
            let runs = parse_matrix(&matrix)?;
            let report = run_ablation(&base, &runs, &out)?;
            print!("{}", report.to_markdown());
            Ok(())
        }
    }
}

fn synth(spec: Option<&Path>, n: usize, out: &Path, size: Option<usize>, seed: u64) -> anyhow::Result<()> {
    let mut spec = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| tsonet::Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSceneSpec::default(),
    };
    if let Some(size) = size {
        let scaled = SyntheticSceneSpec::with_size(size);
        spec.size = scaled.size;
        spec.n_buildings = scaled.n_buildings;
        spec.footprint_px = scaled.footprint_px;
    }
    let patches = (0..n as u64)
        .map(|i| generate_synthetic_scene(&spec, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::create(out, &patches, DEFAULT_RATIOS, seed)?;
    log::info!("wrote {n} patches to {}", out.display());
    Ok(())
}
