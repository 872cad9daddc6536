//! `crest`: the batch pipeline from synthetic data to evaluation reports.

mod commands;
mod config;
mod report;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "crest", version, about = "Counterfactual generation and rationalization pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Flat `key = value` config file; flags below take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for initialization and batch order; names the checkpoints.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rationale budget B in (0, 1].
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    /// Weight of the counterfactual cross-entropy.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Weight of the rationale agreement term.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Editor beam width.
    #[arg(long = "beam-size", global = true)]
    pub beam_size: Option<usize>,
    /// Report directory (overrides `report_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write the synthetic corpus and its vocabulary.
    GenData,
    /// Train the rationalizer used as masker and predictor.
    TrainMasker,
    /// Train the span-infilling editor on the masker's rationales.
    TrainEditor,
    /// Generate counterfactual pairs for the train and test splits.
    Generate,
    /// Keep pairs whose counterfactual the masker labels as intended.
    Filter,
    /// Train a rationalizer on factual plus counterfactual examples.
    Augment,
    /// Train a rationalizer with factual and counterfactual flows.
    TrainAgreement,
    /// Accuracy, plausibility and pair metrics over seeds.
    EvalMetrics,
    /// Forward and counterfactual simulability over seeds.
    Simulate,
    /// Generation metrics for a range of budgets.
    SweepBudget,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::TrainMasker => "train-masker",
            Command::TrainEditor => "train-editor",
            Command::Generate => "generate",
            Command::Filter => "filter",
            Command::Augment => "augment",
            Command::TrainAgreement => "train-agreement",
            Command::EvalMetrics => "eval-metrics",
            Command::Simulate => "simulate",
            Command::SweepBudget => "sweep-budget",
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = commands::resolve_config(&cli)?;
    commands::run(cli.command, &cfg)
}
