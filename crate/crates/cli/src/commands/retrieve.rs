//! `stgcl retrieve`: nearest neighbors of each query clip in embedding space,
//! with the association distance of every reported pair.

use super::common;
use anyhow::Result;
use clap::Args;
use std::io::Write;
use std::path::PathBuf;
use stgcl::evalkit::retrieve_knn;
use stgcl::net::{forward, load_checkpoint, Checkpoint};
use stgcl::soia::{soia_distance, InstanceTracks};
use stgcl::stgraph::build_graph;

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest of query clips.
    #[arg(long)]
    queries: PathBuf,
    /// Manifest of the searchable corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Neighbors per query.
    #[arg(short, long, default_value_t = 1)]
    k: usize,
    /// Report CSV: query_id,rank,clip_id,cosine,soia_distance.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: RetrieveArgs) -> Result<()> {
    let Checkpoint { params, meta } = load_checkpoint(&args.checkpoint)?;
    let (cfg, _) = common::load_config(args.config.as_deref())?;
    let graph_cfg = cfg.graph_config();

    let queries = common::load_clips(&args.queries, &cfg)?;
    let corpus = common::load_clips(&args.corpus, &cfg)?;

    let corpus_embeddings: Vec<(String, Vec<f64>)> = corpus
        .iter()
        .map(|c| {
            let g = build_graph(c, &graph_cfg)?;
            Ok((c.clip_id.clone(), forward(&g, &params, meta.normalize).0))
        })
        .collect::<stgcl::Result<_>>()?;
    let corpus_tracks: Vec<InstanceTracks> =
        corpus.iter().map(InstanceTracks::from_clip).collect();

    let mut out = common::open_output(&args.out)?;
    writeln!(out, "query_id,rank,clip_id,cosine,soia_distance")?;
    let mut mean_top1 = 0.0;
    let mut counted = 0usize;
    for query in &queries {
        let g = build_graph(query, &graph_cfg)?;
        let (z, _) = forward(&g, &params, meta.normalize);
        let result = retrieve_knn(&query.clip_id, &z, &corpus_embeddings, args.k);
        let query_tracks = InstanceTracks::from_clip(query);
        for (rank, (clip_id, cosine)) in result.ranked.iter().enumerate() {
            let idx = corpus.iter().position(|c| &c.clip_id == clip_id).expect("corpus id");
            let d = soia_distance(&query_tracks, &corpus_tracks[idx])?;
            if rank == 0 {
                mean_top1 += d;
                counted += 1;
            }
            writeln!(out, "{},{},{},{},{}", query.clip_id, rank + 1, clip_id, cosine, d)?;
        }
    }
    if counted > 0 {
        eprintln!(
            "retrieve: {counted} queries, mean top-1 association distance {:.2}",
            mean_top1 / counted as f64
        );
    }
    Ok(())
}
