//! `stgcl train`: run the optimization loop and write a checkpoint plus the
//! per-epoch metrics log.

use super::common;
use anyhow::{anyhow, bail, Result};
use clap::Args;
use std::io::Write;
use std::path::PathBuf;
use stgcl::net::{save_checkpoint, ModelMeta};
use stgcl::train::{train_run, LearningMode};

#[derive(Args)]
pub struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Learning mode override: scl|gcl|fsl|unsup.
    #[arg(long)]
    mode: Option<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch-count override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log (JSON lines, one record per epoch).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let (cfg, base) = common::load_config(Some(&args.config))?;
    let mut train_cfg = cfg.train_config();
    if let Some(mode) = &args.mode {
        train_cfg.mode = LearningMode::parse(mode)?;
    }
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        train_cfg.epochs = epochs;
    }

    let train_manifest = cfg
        .data
        .train_manifest
        .as_deref()
        .ok_or_else(|| anyhow!("config has no [data] train_manifest"))?;
    let dataset = common::load_dataset(&common::resolve(&base, train_manifest), &cfg)?;
    let val = match cfg.data.val_manifest.as_deref() {
        Some(m) => Some(common::load_dataset(&common::resolve(&base, m), &cfg)?),
        None => None,
    };

    eprintln!(
        "train: {} clips ({} labeled, {} unlabeled), mode {:?}, seed {}",
        dataset.len(),
        dataset.labeled.len(),
        dataset.unlabeled.len(),
        train_cfg.mode,
        train_cfg.seed
    );
    let outcome = train_run(&dataset, val.as_ref(), &train_cfg)?;

    let meta = ModelMeta { normalize: train_cfg.normalize, temperature: train_cfg.temperature };
    save_checkpoint(&args.out, &outcome.params, &meta)?;

    if let Some(metrics_path) = &args.metrics {
        let mut out = common::open_output(metrics_path)?;
        for record in &outcome.metrics {
            writeln!(out, "{}", serde_json::to_string(record)?)?;
        }
    }
    for record in &outcome.metrics {
        eprintln!(
            "epoch {:>3}: loss {:.4}, lr {:.5}{}",
            record.epoch,
            record.loss,
            record.lr,
            record
                .val_map
                .map(|m| format!(", val mAP {m:.4}"))
                .unwrap_or_default()
        );
    }
    if let Some(divergence) = outcome.diverged {
        bail!(
            "training diverged at epoch {} ({}); last finite checkpoint written to {}",
            divergence.epoch,
            divergence.detail,
            args.out.display()
        );
    }
    eprintln!("train: checkpoint written to {}", args.out.display());
    Ok(())
}
