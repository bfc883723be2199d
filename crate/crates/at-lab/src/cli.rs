//! Command-line surface: `train`, `eval`, and `landscape` subcommands.
//!
//! Every run writes a config-echo file next to its artifacts so any
//! output directory is reproducible on its own. Exit codes: 0 on
//! success, 2 for usage errors (unknown attack name, malformed
//! overrides), 1 for everything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attacks::AttackConfig;
use crate::config::{load_run_config, RunConfig};
use crate::data::{fmt_sig10, write_metrics_csv, write_metrics_json, Dataset};
use crate::diagnostics::{
    default_alpha_grid, landscape_probe, natural_accuracy, robust_accuracy, EvalAttack,
};
use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::trainer::{train, TrainedModel};

#[derive(Parser, Debug)]
#[command(name = "at-lab", about = "Adversarial-training laboratory", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from a JSON run config and write metrics plus
    /// last/best checkpoints.
    Train {
        /// Path to a JSON run config.
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `seed=7` or `attack.epsilon=0.05`.
        /// Bare keys address the training section. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Replaces the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under an attack and write a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One of: pgd10, pgd100, cw100, none.
        #[arg(long, default_value = "pgd10")]
        attack: String,
        /// Run config supplying the dataset section.
        #[arg(long)]
        config: PathBuf,
        /// Split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; defaults to stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe the adversarial weight loss landscape of a checkpoint and
    /// write an `alpha,loss` CSV.
    Landscape {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config supplying the dataset section.
        #[arg(long)]
        config: PathBuf,
        /// Split to probe: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Direction/attack seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; defaults to stdout only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps an attack name from the evaluation menu to an evaluator and its
/// configuration.
pub fn parse_attack(name: &str) -> Result<(EvalAttack, AttackConfig)> {
    match name {
        "none" => Ok((EvalAttack::None, AttackConfig::default())),
        "pgd10" => Ok((EvalAttack::Pgd, AttackConfig::eval(10))),
        "pgd100" => Ok((EvalAttack::Pgd, AttackConfig::eval(100))),
        "cw100" => Ok((EvalAttack::Cw, AttackConfig::eval(100))),
        other => Err(Error::UnknownAttack(other.to_string())),
    }
}

fn pick_split<'a>(train: &'a Dataset, test: &'a Dataset, split: &str) -> Result<&'a Dataset> {
    match split {
        "train" => Ok(train),
        "test" => Ok(test),
        other => Err(Error::InvalidConfig(format!(
            "unknown split {other:?} (expected train or test)"
        ))),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// The parameters a method reports and checkpoints: the EMA teacher for
/// mean-teacher methods, the student otherwise.
fn reported_params(cfg: &RunConfig, model: &TrainedModel) -> ModelParams {
    if cfg.train.method.uses_teacher() {
        model.teacher.clone()
    } else {
        model.student.clone()
    }
}

pub fn cmd_train(
    config_path: &Path,
    overrides: &[String],
    out_dir: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_run_config(config_path, overrides)?;
    if let Some(dir) = out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    let dir = PathBuf::from(&cfg.out_dir);
    ensure_dir(&dir)?;

    let config_echo = serde_json::to_value(&cfg)?;
    write_text(
        &dir.join("config_echo.json"),
        &serde_json::to_string_pretty(&config_echo)?,
    )?;

    let (train_set, test_set) = cfg.dataset.load()?;
    let model = train(&cfg.train, &train_set, &test_set)?;

    write_metrics_csv(&model.history, &dir.join("metrics.csv"))?;
    write_metrics_json(&model.history, &config_echo, &dir.join("metrics.json"))?;
    reported_params(&cfg, &model).save(&dir.join("checkpoint_last.json"))?;
    model.best_params.save(&dir.join("checkpoint_best.json"))?;

    let last = model.history.last().expect("epochs >= 1");
    println!(
        "{} {} {} {}",
        cfg.train.method.name(),
        fmt_sig10(last.nat_test),
        fmt_sig10(last.rob_test),
        fmt_sig10(last.robust_gap),
    );
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    attack_name: &str,
    config_path: &Path,
    split: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let (attack, attack_cfg) = parse_attack(attack_name)?;
    let cfg = load_run_config(config_path, &[])?;
    let params = ModelParams::load(checkpoint)?;
    let (train_set, test_set) = cfg.dataset.load()?;
    let dataset = pick_split(&train_set, &test_set, split)?;

    let natural = natural_accuracy(&params, dataset)?;
    let robust = robust_accuracy(&params, dataset, &attack_cfg, attack, seed)?;

    println!(
        "{} natural {} robust {}",
        attack_name,
        fmt_sig10(natural),
        fmt_sig10(robust)
    );
    if let Some(path) = out {
        let report = serde_json::json!({
            "checkpoint": checkpoint.display().to_string(),
            "attack": attack_name,
            "split": split,
            "seed": seed,
            "natural_accuracy": natural,
            "robust_accuracy": robust,
        });
        write_text(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn cmd_landscape(
    checkpoint: &Path,
    config_path: &Path,
    split: &str,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_run_config(config_path, &[])?;
    let params = ModelParams::load(checkpoint)?;
    let (train_set, test_set) = cfg.dataset.load()?;
    let dataset = pick_split(&train_set, &test_set, split)?;

    let series = landscape_probe(
        &params,
        dataset,
        &default_alpha_grid(),
        &cfg.train.attack,
        seed,
    )?;
    let csv = series.to_csv();
    match out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn run_command(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Train {
            config,
            overrides,
            out_dir,
        } => cmd_train(config, overrides, out_dir.as_deref()),
        Command::Eval {
            checkpoint,
            attack,
            config,
            split,
            seed,
            out,
        } => cmd_eval(checkpoint, attack, config, split, *seed, out.as_deref()),
        Command::Landscape {
            checkpoint,
            config,
            split,
            seed,
            out,
        } => cmd_landscape(checkpoint, config, split, *seed, out.as_deref()),
    }
}

/// Entry point for the binary: parses arguments, runs the subcommand,
/// and translates errors into exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(err @ (Error::UnknownAttack(_) | Error::InvalidConfig(_))) => {
            eprintln!("error: {err}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}
