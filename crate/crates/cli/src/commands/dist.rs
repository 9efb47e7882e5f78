//! `stgcl dist`: the pairwise association-distance matrix of a manifest.

use super::common;
use anyhow::Result;
use clap::Args;
use std::io::Write;
use std::path::PathBuf;
use stgcl::soia::{distance_matrix, InstanceTracks};

#[derive(Args)]
pub struct DistArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV, `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    /// Long format: one `clip_a,clip_b,distance` row per unordered pair.
    #[arg(long)]
    pairs: bool,
}

pub fn run(args: DistArgs) -> Result<()> {
    let (cfg, _) = common::load_config(args.config.as_deref())?;
    let clips = common::load_clips(&args.manifest, &cfg)?;
    let ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let tracks: Vec<InstanceTracks> = clips.iter().map(InstanceTracks::from_clip).collect();
    let matrix = distance_matrix(&tracks)?;
    let n = ids.len();

    let mut out = common::open_output(&args.out)?;
    if args.pairs {
        writeln!(out, "clip_a,clip_b,distance")?;
        for i in 0..n {
            for j in (i + 1)..n {
                writeln!(out, "{},{},{}", ids[i], ids[j], matrix[i * n + j])?;
            }
        }
    } else {
        write!(out, "clip_id")?;
        for id in &ids {
            write!(out, ",{id}")?;
        }
        writeln!(out)?;
        for i in 0..n {
            write!(out, "{}", ids[i])?;
            for j in 0..n {
                write!(out, ",{}", matrix[i * n + j])?;
            }
            writeln!(out)?;
        }
    }
    eprintln!("dist: {n} clips, {} pairs", n * n.saturating_sub(1) / 2);
    Ok(())
}
