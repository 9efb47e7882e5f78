//! `stgcl eval`: per-class average precision and overall mAP of a trained
//! model on a labeled manifest.

use super::common;
use anyhow::{anyhow, bail, Result};
use clap::{Args, ValueEnum};
use std::io::Write;
use std::path::PathBuf;
use stgcl::evalkit::classification_map;
use stgcl::net::{centroid_prototypes, forward, load_checkpoint, Checkpoint};
use stgcl::train::embed_all;

/// Where the class scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Probe {
    /// The checkpoint's learned prototypes.
    Learned,
    /// Class-mean embeddings of the labeled training clips.
    Centroid,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled manifest to score.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Class-score readout.
    #[arg(long, value_enum, default_value_t = Probe::Learned)]
    probe: Probe,
    /// Labeled manifest the centroid probe is fitted on.
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    /// AP table CSV, `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let Checkpoint { params, meta } = load_checkpoint(&args.checkpoint)?;
    let (cfg, _) = common::load_config(args.config.as_deref())?;
    let class_names = if cfg.data.classes.is_empty() {
        (0..params.dims.class_count).map(|c| format!("class{c}")).collect()
    } else {
        cfg.data.classes.clone()
    };
    if class_names.len() != params.dims.class_count {
        bail!(
            "config lists {} classes but the checkpoint was trained with {}",
            class_names.len(),
            params.dims.class_count
        );
    }

    let eval_set = common::load_dataset(&args.manifest, &cfg)?;
    if eval_set.labeled.is_empty() {
        bail!("evaluation manifest has no labeled clips");
    }
    let embeddings: Vec<Vec<f64>> = eval_set
        .labeled
        .iter()
        .map(|&i| forward(&eval_set.items[i].graph, &params, meta.normalize).0)
        .collect();
    let labels: Vec<usize> =
        eval_set.labeled.iter().map(|&i| eval_set.label_of(i).unwrap()).collect();

    let prototypes = match args.probe {
        Probe::Learned => params.prototypes.clone(),
        Probe::Centroid => {
            let train_manifest = args
                .train_manifest
                .as_ref()
                .ok_or_else(|| anyhow!("--probe centroid needs --train-manifest"))?;
            let train_set = common::load_dataset(train_manifest, &cfg)?;
            let train_embeddings = embed_all(&train_set, &params, meta.normalize);
            let train_labels: Vec<Option<usize>> =
                (0..train_set.len()).map(|i| train_set.label_of(i)).collect();
            centroid_prototypes(&train_embeddings, &train_labels, params.dims)
        }
    };

    let (per_class, map) = classification_map(
        &embeddings,
        &labels,
        &prototypes,
        params.dims.class_count,
        meta.temperature,
        meta.normalize,
    );

    let mut out = common::open_output(&args.out)?;
    writeln!(out, "class,ap")?;
    for (name, ap) in class_names.iter().zip(&per_class) {
        match ap {
            Some(v) => writeln!(out, "{name},{v}")?,
            None => writeln!(out, "{name},")?,
        }
    }
    match map {
        Some(m) => writeln!(out, "overall_map,{m}")?,
        None => writeln!(out, "overall_map,")?,
    }
    if let Some(m) = map {
        eprintln!("eval: overall mAP {m:.4} over {} clips", labels.len());
    }
    Ok(())
}
