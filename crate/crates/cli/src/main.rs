//! Experiment runner CLI.
//!
//! `nsr run` trains one configuration; `nsr preset fig3|fig4|fig5` expands a
//! named comparison into its run batch. Results land under
//! `<out>/<preset|custom>/<run-name>/{config.json, metrics.csv, summary.csv}`.
//!
//! Exit code is 0 on success; failures print one machine-readable JSON line
//! to stderr and exit nonzero.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use nsr_core::agent::WeightMode;
use nsr_core::envs::Task;
use nsr_core::runner::{preset_runs, run_experiment, Preset, RunConfig, RunReport};

#[derive(Parser)]
#[command(name = "nsr", about = "Novelty-guided sample reuse experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single configuration.
    Run(RunArgs),
    /// Expand a named experiment batch (fig3, fig4, fig5) and run it.
    Preset(PresetArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated run seeds, e.g. "0,1,2,3,4".
    #[arg(long)]
    seeds: Option<String>,
    /// Training epochs per run.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel seed workers (results are identical regardless).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Task: reach, push, or pick_and_place.
    #[arg(long)]
    env: Option<String>,
    /// Weight mode: nsr, uniform, mean, or random.
    #[arg(long = "weight-mode")]
    weight_mode: Option<String>,
    /// Times each sampled batch is reused per update.
    #[arg(long = "reuse-count")]
    reuse_count: Option<usize>,
    /// Run name; defaults to "<task>-<mode>[-reuseN]".
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct PresetArgs {
    /// fig3, fig4, or fig5.
    preset: String,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Preset(args) => cmd_preset(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|e| anyhow::anyhow!("bad seed '{s}': {e}"))
        })
        .collect()
}

fn base_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load_json(path)?,
        None => RunConfig::default(),
    };
    if let Some(seeds) = &common.seeds {
        config.seeds = parse_seeds(seeds)?;
    }
    if let Some(epochs) = common.epochs {
        config.epochs = epochs;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn print_run_summary(name: &str, report: &RunReport) {
    let by_epoch = report.mean_success_by_epoch();
    let final_success = by_epoch.last().copied().unwrap_or(0.0);
    println!(
        "{name}: final mean success {final_success:.3} over {} seeds, {:.2}s/epoch -> {}",
        report.config.seeds.len(),
        report.mean_epoch_seconds(),
        report.config.out_dir.display()
    );
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = base_config(&args.common)?;
    if let Some(env) = &args.env {
        let task = Task::parse(env)?;
        config.env = nsr_core::envs::EnvSpec::new(task);
    }
    if let Some(mode) = &args.weight_mode {
        config.weight_mode = WeightMode::from_str(mode)?;
    }
    if let Some(reuse) = args.reuse_count {
        config.reuse_count = reuse;
    }
    let name = args.name.unwrap_or_else(|| default_name(&config));
    let out_root = config.out_dir.clone();
    config.out_dir = out_root.join("custom").join(&name);
    let report = run_experiment(&config, args.common.jobs)?;
    print_run_summary(&name, &report);
    Ok(())
}

fn default_name(config: &RunConfig) -> String {
    let mut name = format!("{}-{}", config.env.task.name(), config.weight_mode);
    if config.reuse_count > 1 {
        name.push_str(&format!("-reuse{}", config.reuse_count));
    }
    name
}

fn cmd_preset(args: PresetArgs) -> anyhow::Result<()> {
    let preset = Preset::from_str(&args.preset)?;
    let base = base_config(&args.common)?;
    let out_root = base.out_dir.clone();
    for (name, mut config) in preset_runs(preset, &base) {
        config.out_dir = out_root.join(preset.name()).join(&name);
        let report = run_experiment(&config, args.common.jobs)?;
        print_run_summary(&name, &report);
    }
    Ok(())
}
