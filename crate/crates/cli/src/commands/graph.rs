//! `stgcl graph`: materialize spatio-temporal graphs into a graph-set file.

use super::common;
use anyhow::Result;
use clap::Args;
use std::path::PathBuf;
use stgcl::stgraph::{build_graph, io::write_graph_set};

#[derive(Args)]
pub struct GraphArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph-set output file.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: GraphArgs) -> Result<()> {
    let (cfg, _) = common::load_config(args.config.as_deref())?;
    let clips = common::load_clips(&args.manifest, &cfg)?;
    let graph_cfg = cfg.graph_config();
    let graphs = clips
        .iter()
        .map(|c| build_graph(c, &graph_cfg))
        .collect::<stgcl::Result<Vec<_>>>()?;
    let mut out = common::open_output(&args.out)?;
    write_graph_set(&mut out, &graphs)?;
    let nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
    let edges: usize = graphs.iter().map(|g| g.edge_count()).sum();
    eprintln!("graph: wrote {} graphs ({nodes} nodes, {edges} edges)", graphs.len());
    Ok(())
}
