//! `stgcl embed`: embeddings for every clip of a manifest or graph set.

use super::common;
use anyhow::{bail, Result};
use clap::Args;
use std::io::Write;
use std::path::PathBuf;
use stgcl::net::{forward, load_checkpoint, Checkpoint};
use stgcl::stgraph::io::read_graph_set;
use stgcl::StGraph;

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Clip manifest to embed (mutually exclusive with --graphs).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Prebuilt graph-set file to embed.
    #[arg(long)]
    graphs: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV (clip_id, then one column per embedding dimension).
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: EmbedArgs) -> Result<()> {
    let Checkpoint { params, meta } = load_checkpoint(&args.checkpoint)?;
    let graphs: Vec<StGraph> = match (&args.manifest, &args.graphs) {
        (Some(manifest), None) => {
            let (cfg, _) = common::load_config(args.config.as_deref())?;
            let clips = common::load_clips(manifest, &cfg)?;
            let graph_cfg = cfg.graph_config();
            clips
                .iter()
                .map(|c| stgcl::stgraph::build_graph(c, &graph_cfg))
                .collect::<stgcl::Result<_>>()?
        }
        (None, Some(graphs_path)) => {
            let mut reader = std::io::BufReader::new(std::fs::File::open(graphs_path)?);
            read_graph_set(&mut reader)?
        }
        _ => bail!("exactly one of --manifest and --graphs must be given"),
    };

    let mut out = common::open_output(&args.out)?;
    write!(out, "clip_id")?;
    for d in 0..params.dims.embed_dim {
        write!(out, ",e{d}")?;
    }
    writeln!(out)?;
    for graph in &graphs {
        let (z, _) = forward(graph, &params, meta.normalize);
        write!(out, "{}", graph.clip_id)?;
        for v in &z {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    eprintln!("embed: {} clips embedded", graphs.len());
    Ok(())
}
