use std::path::PathBuf;
use std::process::ExitCode;

use aecf::explainer::Method;
use aecf_cli::{commands, RunConfig};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aecf", version, about = "Auto-encoder anomaly detection with counterfactual explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, normalise and window the raw series.
    Prepare(Common),
    /// Train the auto-encoder on the prepared windows.
    Train(Common),
    /// Calibrate the threshold and classify the test windows.
    Detect(Common),
    /// Explain every flagged window.
    Explain(Common),
    /// Recompute explanation metrics for every method that was run.
    Evaluate(Common),
    /// Write a synthetic labeled dataset and a matching run config.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file; defaults to <out>/models/model.aecf.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Explanation method: ours, counterfactual or reconstruction.
    #[arg(long, default_value = "ours")]
    method: String,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::empty(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
            cfg.synth.seed = seed;
        }
        if let Some(out) = &self.out {
            // taken relative to the working directory, not the config
            cfg.out_dir = std::env::current_dir()?.join(out);
        }
        Ok(cfg)
    }

    fn needs_config(&self, verb: &str) -> Result<RunConfig> {
        self.config
            .as_ref()
            .with_context(|| format!("`aecf {verb}` needs --config"))?;
        self.config()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            commands::cmd_prepare(&c.needs_config("prepare")?)?;
        }
        Command::Train(c) => {
            commands::cmd_train(&c.needs_config("train")?)?;
        }
        Command::Detect(c) => {
            let summary = commands::cmd_detect(&c.needs_config("detect")?, c.model.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary.metrics)?);
        }
        Command::Explain(c) => {
            let method: Method = c.method.parse()?;
            let report = commands::cmd_explain(&c.needs_config("explain")?, c.model.as_deref(), method)?;
            println!("{}", serde_json::to_string_pretty(&report.metrics)?);
        }
        Command::Evaluate(c) => {
            let eval = commands::cmd_evaluate(&c.needs_config("evaluate")?, c.model.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&eval.methods)?);
        }
        Command::Synth(c) => {
            let cfg = c.config()?;
            let summary = commands::cmd_synth(&cfg.synth, &cfg.out())?;
            println!("{}", summary.config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
