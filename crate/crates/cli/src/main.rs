use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hgr_core::checkpoint::load_agent;
use hgr_core::report::{comparison_table, read_metrics, render_svg, seed_curve, THRESHOLDS};
use hgr_core::trainer::{evaluate, run_training};
use hgr_core::{Parallelism, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "hgr", version, about = "Train and compare goal-conditioned agents with prioritized hindsight replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics, checkpoints and a manifest.
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a key; may be repeated. Applied after the file and HGR_* variables.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the noise-free success rate of a saved agent.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Must match the checkpoint's environment when given.
        #[arg(long)]
        env: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize metrics files: threshold table on stdout, optional SVG curves.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Write the learning-curve plot here.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_file_str(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    cfg.apply_env(std::env::vars())
        .context("in HGR_* environment variables")?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(cfg: &TrainConfig) -> Result<()> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
    let config: serde_json::Map<String, serde_json::Value> = cfg
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix_secs": started,
        "output_dir": cfg.output_dir.display().to_string(),
        "seeds": cfg.seeds,
        "config": config,
    });
    let path = cfg.output_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_train(config: Option<&Path>, overrides: &[String]) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_manifest(&cfg)?;
    let runs = run_training(&cfg)?;
    for run in &runs {
        let last = run.metrics.last().map_or(0.0, |m| m.success_rate);
        eprintln!(
            "seed {}: {} interactions, final success {last}",
            run.seed, run.interactions
        );
    }
    println!("{}", cfg.output_dir.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, env: Option<&str>, episodes: usize, seed: u64) -> Result<()> {
    let ckpt = load_agent(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if let Some(id) = env {
        if id != ckpt.env {
            bail!("checkpoint was trained on {}, not {id}", ckpt.env);
        }
    }
    let env = ckpt.env()?;
    let result = evaluate(&ckpt.networks, &env, episodes, seed, Parallelism::select(true))?;
    println!("{:?}", result.success_rate);
    Ok(())
}

fn run_label(path: &Path) -> String {
    let named_metrics = path.file_name().is_some_and(|n| n == "metrics.csv");
    let source = if named_metrics {
        path.parent().and_then(Path::file_name)
    } else {
        path.file_stem()
    };
    source
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_compare(metrics: &[PathBuf], svg: Option<&Path>, table: Option<&Path>) -> Result<()> {
    let mut curves = Vec::with_capacity(metrics.len());
    for path in metrics {
        let rows = read_metrics(path)?;
        curves.push(seed_curve(&run_label(path), &rows));
    }
    let text = comparison_table(&curves, &THRESHOLDS);
    print!("{text}");
    if let Some(path) = table {
        std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = svg {
        std::fs::write(path, render_svg(&curves))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, overrides } => cmd_train(config.as_deref(), overrides),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => cmd_eval(checkpoint, env.as_deref(), *episodes, *seed),
        Command::Compare { metrics, svg, table } => {
            cmd_compare(metrics, svg.as_deref(), table.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
