//! `stgcl ingest`: validate a manifest end to end and write the normalized
//! one-row-per-clip manifest.

use super::common;
use anyhow::Result;
use clap::Args;
use std::path::PathBuf;
use stgcl::ingest::{
    frame_stride, read_manifest, write_manifest, ManifestEntry,
};

#[derive(Args)]
pub struct IngestArgs {
    /// Input manifest (rows may cover whole sessions).
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Normalized manifest output path, `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: IngestArgs) -> Result<()> {
    let (cfg, _) = common::load_config(args.config.as_deref())?;
    let ingest_cfg = cfg.ingest_config();

    // parse everything once so file errors surface with context
    let clips = common::load_clips(&args.manifest, &cfg)?;
    let object_count: usize = clips.iter().map(|c| c.objects.len()).sum();

    // one normalized row per sliced clip, ranges restated in source frames
    let entries = read_manifest(&args.manifest)?;
    let mut rows: Vec<ManifestEntry> = Vec::new();
    for entry in &entries {
        let stride = frame_stride(entry.fps, ingest_cfg.working_fps)?;
        let source_len = entry.frame_end - entry.frame_start;
        let working = source_len.div_ceil(stride);
        let window = ingest_cfg.clip_len * stride;
        let step = ingest_cfg.clip_stride * stride;
        let mut k = 0usize;
        let mut start = 0usize;
        let single = working >= ingest_cfg.clip_len
            && (working - ingest_cfg.clip_len) < ingest_cfg.clip_stride;
        while (start / stride) + ingest_cfg.clip_len <= working {
            rows.push(ManifestEntry {
                clip_id: if single {
                    entry.clip_id.clone()
                } else {
                    format!("{}#{k:03}", entry.clip_id)
                },
                track_path: entry.track_path.clone(),
                lane_path: entry.lane_path.clone(),
                frame_start: entry.frame_start + start,
                frame_end: (entry.frame_start + start + window).min(entry.frame_end),
                fps: entry.fps,
                width: entry.width,
                height: entry.height,
                label: entry.label.clone(),
            });
            k += 1;
            start += step;
        }
    }

    let mut out = common::open_output(&args.out)?;
    write_manifest(&mut out, &rows)?;
    eprintln!(
        "ingest: {} source rows -> {} clips, {object_count} detections",
        entries.len(),
        clips.len()
    );
    Ok(())
}
