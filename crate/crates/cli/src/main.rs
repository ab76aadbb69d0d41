use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use cytonet::pipeline::{self, PipelineConfig, Workspace};

#[derive(Parser)]
#[command(
    name = "cytonet",
    version,
    about = "Segmentation-free cervical cell classifier"
)]
struct Cli {
    /// Pipeline config (TOML). Without one, `--preset` is used.
    #[arg(long, global = true, env = "CYTONET_CONFIG")]
    config: Option<PathBuf>,

    /// Built-in preset used when no config file is given: herlev, hemlbc or desk.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Manifest path, overriding the config.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign folds, compute per-fold mean images and summarize patch counts.
    Prepare,
    /// Train one cross-validation fold.
    Train {
        #[arg(long)]
        fold: usize,
        /// Continue from the fold's last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Score every fold's held-out cells and write the metric reports.
    Evaluate {
        /// Displace test nucleus centres by up to this many pixels.
        #[arg(long, default_value_t = 0)]
        perturb: u32,
    },
    /// Abnormality score for one cell image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        /// One centred crop instead of the full multi-view, multi-crop plan.
        #[arg(long)]
        single: bool,
    },
    /// Write a synthetic blob dataset into the output directory.
    SynthData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => {
            let mut cfg = PipelineConfig::preset(&cli.preset)?;
            cfg.resolve_paths(&cli.out);
            cfg
        }
    };
    if let Some(m) = &cli.manifest {
        cfg.manifest = m.clone();
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(&cli)?;
    let ws = Workspace::new(&cli.out);
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let started = Instant::now();
    match &cli.command {
        Command::Prepare => {
            let summary = pipeline::cmd_prepare(&cfg, &ws)?;
            print!("{}", summary.to_text());
        }
        Command::Train { fold, resume } => {
            let outcome = pipeline::cmd_train(&cfg, &ws, *fold, *resume)?;
            println!(
                "fold {fold}: best epoch {} (validation loss {:.4})",
                outcome.best_epoch, outcome.best_validation_loss
            );
        }
        Command::Evaluate { perturb } => {
            let report = pipeline::cmd_evaluate(&cfg, &ws, *perturb)?;
            print!("{}", report.to_text());
        }
        Command::Predict {
            checkpoint,
            image,
            x,
            y,
            single,
        } => {
            if !(x.is_finite() && y.is_finite()) {
                bail!("nucleus coordinates must be finite");
            }
            let p = pipeline::cmd_predict(&cfg, checkpoint, image, (*x, *y), *single)?;
            match p.predicted_class {
                Some(c) => println!("score {:.4} {} (class {c})", p.score, p.label()),
                None => println!("score {:.4} {}", p.score, p.label()),
            }
        }
        Command::SynthData { n, seed } => {
            let manifest = pipeline::cmd_synth(&cfg, &cli.out.join("data"), *n, *seed)?;
            ws.record_outputs(std::slice::from_ref(&manifest))?;
            println!("{}", manifest.display());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()?),
    }
    info!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
