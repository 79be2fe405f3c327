//! `glassbox`: train small text classifiers, attribute their decisions to
//! words, and score those attributions under perturbation-matched metrics.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use glassbox_core::{
    run_alignment, run_experiment, run_interpret, run_synth, run_train, DefKind,
    ExperimentConfig, Method,
};

#[derive(Parser)]
#[command(name = "glassbox", version, about = "Word attribution workbench for toy text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand shares. Precedence: defaults, then the config
/// file, then subcommand flags, then --set pairs.
#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set epochs=30 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Artifact directory.
    #[arg(long, default_value = "glassbox-out")]
    out: PathBuf,
}

/// Flags that name input files; each maps onto the config key of the same
/// name.
#[derive(Args, Default)]
struct Inputs {
    /// Corpus JSONL (one {"text": [...], "label": n} object per line).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Embeddings text file (token then d floats per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Model checkpoint to load instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-rationale synthetic corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        vocab: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// Generation seed (config key data_seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a classifier and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Architecture: attention or bag.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write per-word attribution scores for a sample as JSONL.
    Interpret {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// vagrad, smoothgrad, itergrad, inpgrad, integrad, or rankmask.
        #[arg(long)]
        method: String,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Sweep one faithfulness metric over its budget grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// csa (ball perturbation), era (erasure), or mma (attention masking).
        #[arg(long)]
        metric: String,
        /// Comma-separated method list.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Run every requested method under every requested metric.
    CrossEval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Retrain so attributions concentrate on rationale words.
    Align {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Rationale JSON (token -> true, or instance id -> positions).
        #[arg(long)]
        rationale: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
    },
}

/// Build the effective config from file, typed flags, and --set pairs.
fn build_config(common: &Common, flags: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.apply(key, v)?;
        }
    }
    for pair in &common.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set {pair:?}: expected KEY=VALUE"))?;
        cfg.apply(key.trim(), value)?;
    }
    Ok(cfg)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn input_flags(inputs: &Inputs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("corpus", path_flag(&inputs.corpus)),
        ("embeddings", path_flag(&inputs.embeddings)),
        ("model", path_flag(&inputs.model)),
    ]
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { common, instances, vocab, dim, seed } => {
            let cfg = build_config(
                &common,
                &[
                    ("instances", instances.map(|v| v.to_string())),
                    ("vocab", vocab.map(|v| v.to_string())),
                    ("dim", dim.map(|v| v.to_string())),
                    ("data_seed", seed.map(|v| v.to_string())),
                ],
            )?;
            run_synth(&cfg, &common.out)?;
            println!("synthesized corpus in {}", common.out.display());
        }
        Command::Train { common, inputs, arch, epochs } => {
            let mut flags = input_flags(&inputs);
            flags.push(("arch", arch));
            flags.push(("epochs", epochs.map(|v| v.to_string())));
            let cfg = build_config(&common, &flags)?;
            run_train(&cfg, &common.out)?;
            println!("saved checkpoint to {}", common.out.join("model.json").display());
        }
        Command::Interpret { common, inputs, method, sample } => {
            let mut flags = input_flags(&inputs);
            flags.push(("sample", sample.map(|v| v.to_string())));
            let cfg = build_config(&common, &flags)?;
            let method = Method::parse(&method)?;
            run_interpret(&cfg, method, &common.out)?;
            println!(
                "wrote {} attributions to {}",
                method,
                common.out.join("attributions.jsonl").display()
            );
        }
        Command::Evaluate { common, inputs, metric, methods, sample } => {
            let mut flags = input_flags(&inputs);
            flags.push(("methods", methods));
            flags.push(("sample", sample.map(|v| v.to_string())));
            let mut cfg = build_config(&common, &flags)?;
            cfg.metrics = vec![DefKind::parse(&metric)?];
            run_experiment(&cfg, &common.out)?;
            println!("wrote {} curves to {}", metric, common.out.display());
        }
        Command::CrossEval { common, inputs, sample } => {
            let mut flags = input_flags(&inputs);
            flags.push(("sample", sample.map(|v| v.to_string())));
            let cfg = build_config(&common, &flags)?;
            run_experiment(&cfg, &common.out)?;
            println!("wrote cross-evaluation to {}", common.out.display());
        }
        Command::Align { common, inputs, rationale, rounds } => {
            let mut flags = input_flags(&inputs);
            flags.push(("rationale", path_flag(&rationale)));
            flags.push(("rounds", rounds.map(|v| v.to_string())));
            let cfg = build_config(&common, &flags)?;
            run_alignment(&cfg, &common.out)?;
            println!("wrote alignment report to {}", common.out.display());
        }
    }
    Ok(())
}
