use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ensemble_latent::datasets::{generate_channels, generate_splash, load_idx, write_idx};
use ensemble_latent::harness::{
    emit_plots, grid_search, load_run, parse_grid, resolve_output_dir, run_experiment, ExperimentConfig,
};
use ensemble_latent::metrics::{evaluate_projection, silhouette_score};
use ensemble_latent::projection::{project, Embedding2D};
use ensemble_latent::{Error, Result};

/// Latent-space clustering pipeline: pseudo-labels, autoencoder training
/// with auxiliary losses, 2D projection and silhouette evaluation.
#[derive(Parser)]
#[command(name = "ensemble-latent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Channels,
    Splash,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic ensemble as an IDX image/label pair.
    GenerateData {
        #[arg(long, value_enum)]
        kind: Synthetic,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; relative paths honour ENSEMBLE_LATENT_OUTPUT_ROOT.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the Cartesian product of a grid file over a base config.
    GridSearch {
        #[arg(long)]
        config: PathBuf,
        /// JSON object mapping setting names to value lists.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Encode IDX images with a trained run and project them to 2D.
    Project {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Output CSV (index,x,y,label).
        #[arg(long)]
        out: PathBuf,
    },
    /// Silhouette score of an embedding CSV.
    Evaluate {
        #[arg(long)]
        embedding: PathBuf,
    },
    /// Re-render the CSV and SVG artifacts of a finished run.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, output_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::GenerateData { kind, n, seed, out } => {
            let set = match kind {
                Synthetic::Channels => generate_channels(n, seed)?,
                Synthetic::Splash => generate_splash(n, seed)?,
            };
            let dir = resolve_output_dir(&out);
            std::fs::create_dir_all(&dir)?;
            let images = dir.join("images-idx3-ubyte");
            let labels = dir.join("labels-idx1-ubyte");
            write_idx(&set, &images, &labels)?;
            Ok(json!({"images": images, "labels": labels, "n": set.len(), "classes": set.class_count()}))
        }
        Command::Train { config, output_dir, epochs, seed } => {
            let mut config = load_config(&config, output_dir)?;
            if let Some(e) = epochs {
                config.epochs = e;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let r = run_experiment(&config)?;
            Ok(json!({
                "output_dir": config.resolved_output_dir(),
                "silhouette": r.silhouette,
                "final_reconstruction": r.final_reconstruction(),
                "classifier_accuracy": r.classifier_accuracy,
                "epochs": r.train.len(),
                "wall_time_secs": r.wall_time_secs,
            }))
        }
        Command::GridSearch { config, grid, output_dir } => {
            let base = load_config(&config, output_dir)?;
            let grid = parse_grid(&std::fs::read_to_string(grid)?)?;
            let outcome = grid_search(&base, &grid)?;
            Ok(json!({
                "runs": outcome.runs.len(),
                "summary": outcome.summary,
                "output_dir": base.resolved_output_dir(),
            }))
        }
        Command::Project { run, images, labels, out } => {
            let (result, model) = load_run(&run)?;
            let set = load_idx(images, labels)?;
            let normed = result.normalization.apply(set.images());
            let codes = model.embed(&normed, result.config.batch_size)?;
            let embedding = project(&codes, set.labels(), &result.config.projection)?;
            let out = resolve_output_dir(&out);
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            embedding.write_csv(std::fs::File::create(&out)?)?;
            let labelled: Vec<usize> = (0..set.len()).filter(|&i| set.labels()[i] >= 0).collect();
            let score = if labelled.len() == set.len() {
                silhouette_score(&embedding.coords, &embedding.labels).ok().map(|r| r.silhouette)
            } else {
                None
            };
            Ok(json!({"embedding": out, "points": embedding.len(), "silhouette": score}))
        }
        Command::Evaluate { embedding } => {
            let e = Embedding2D::read_csv(std::fs::File::open(embedding)?)?;
            Ok(serde_json::to_value(evaluate_projection(&e)?)?)
        }
        Command::Plot { run, out } => {
            let (result, _) = load_run(&run)?;
            let dir = out.map(|o| resolve_output_dir(&o)).unwrap_or(run);
            let written = emit_plots(&result, &dir)?;
            Ok(json!({"written": written}))
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({"error": kind, "message": message}).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let e: Error = e;
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
