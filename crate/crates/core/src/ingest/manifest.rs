//! Clip manifests: one CSV record per clip (or session) pointing at its track
//! and lane files, plus the end-to-end manifest ingestion routine.

use super::{
    downsampled_frame_count, frame_stride, lanes, slice_clips, tracks, Session, TrackedClip,
};
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// One manifest row. Paths are resolved relative to the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub track_path: String,
    /// Empty string means no lane geometry.
    pub lane_path: String,
    /// Source-frame range covered by this record, end exclusive.
    pub frame_start: usize,
    pub frame_end: usize,
    /// Source frame rate of the track file.
    pub fps: f64,
    pub width: f64,
    pub height: f64,
    pub label: Option<String>,
}

const MANIFEST_HEADER: &str = "clip_id,tracks,lanes,frame_start,frame_end,fps,width,height,label";

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (line_no == 1 && trimmed.starts_with("clip_id")) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 9 manifest fields, got {}", fields.len()),
            });
        }
        let int = |i: usize, name: &str| -> Result<usize> {
            fields[i].parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("field '{name}' is not a non-negative integer: '{}'", fields[i]),
            })
        };
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("field '{name}' is not a number: '{}'", fields[i]),
            })
        };
        entries.push(ManifestEntry {
            clip_id: fields[0].to_string(),
            track_path: fields[1].to_string(),
            lane_path: fields[2].to_string(),
            frame_start: int(3, "frame_start")?,
            frame_end: int(4, "frame_end")?,
            fps: num(5, "fps")?,
            width: num(6, "width")?,
            height: num(7, "height")?,
            label: if fields[8].is_empty() { None } else { Some(fields[8].to_string()) },
        });
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(mut writer: W, entries: &[ManifestEntry]) -> Result<()> {
    writeln!(writer, "{MANIFEST_HEADER}")?;
    for e in entries {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{},{}",
            e.clip_id,
            e.track_path,
            e.lane_path,
            e.frame_start,
            e.frame_end,
            e.fps,
            e.width,
            e.height,
            e.label.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Settings for turning manifest rows into working-rate clips.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub working_fps: f64,
    /// Clip length in working frames.
    pub clip_len: usize,
    /// Clip stride in working frames; equal to `clip_len` when non-overlapping.
    pub clip_stride: usize,
    pub score_threshold: f64,
    pub lane_raster_step: f64,
    /// Label strings in class-index order.
    pub classes: Vec<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            working_fps: 2.5,
            clip_len: 10,
            clip_stride: 10,
            score_threshold: 0.5,
            lane_raster_step: 4.0,
            classes: Vec::new(),
        }
    }
}

/// Read every manifest row, parse its files, downsample to the working rate
/// and slice into clips.
pub fn ingest_manifest<S: Scalar>(
    manifest_path: &Path,
    cfg: &IngestConfig,
) -> Result<Vec<TrackedClip<S>>> {
    let entries = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut clips = Vec::new();
    for entry in &entries {
        let session = load_session(base, entry, cfg)?;
        clips.extend(slice_clips(&session, cfg.clip_len, cfg.clip_stride)?);
    }
    Ok(clips)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_session<S: Scalar>(
    base: &Path,
    entry: &ManifestEntry,
    cfg: &IngestConfig,
) -> Result<Session<S>> {
    if entry.frame_end <= entry.frame_start {
        return Err(Error::data(format!("clip '{}': empty frame range", entry.clip_id)));
    }
    let parse_cfg = tracks::TrackParseConfig {
        frame_width: entry.width,
        frame_height: entry.height,
        score_threshold: cfg.score_threshold,
    };
    let track_file = resolve(base, &entry.track_path);
    let reader = BufReader::new(
        File::open(&track_file)
            .map_err(|e| Error::data(format!("cannot open '{}': {e}", track_file.display())))?,
    );
    let all = tracks::parse_track_file::<S, _>(reader, &parse_cfg)?;

    // restrict to the row's source-frame window, rebase, downsample
    let windowed: Vec<_> = all
        .into_iter()
        .filter(|o| o.frame >= entry.frame_start && o.frame < entry.frame_end)
        .map(|o| super::DetectedObject { frame: o.frame - entry.frame_start, ..o })
        .collect();
    let stride = frame_stride(entry.fps, cfg.working_fps)?;
    let objects = super::downsample_tracks(&windowed, entry.fps, cfg.working_fps)?;
    let source_frames = entry.frame_end - entry.frame_start;
    let frames = downsampled_frame_count(source_frames, stride);

    let lanes = if entry.lane_path.is_empty() {
        vec![Vec::new(); frames]
    } else {
        let lane_file = resolve(base, &entry.lane_path);
        let reader = BufReader::new(
            File::open(&lane_file)
                .map_err(|e| Error::data(format!("cannot open '{}': {e}", lane_file.display())))?,
        );
        let polylines = lanes::read_lane_file(reader, entry.width, entry.height)?;
        // rebase polyline frame ranges onto the row's window
        let rebased: Vec<_> = polylines
            .into_iter()
            .filter(|p| p.frame_end > entry.frame_start && p.frame_start < entry.frame_end)
            .map(|p| lanes::LanePolyline {
                frame_start: p.frame_start.saturating_sub(entry.frame_start),
                frame_end: (p.frame_end - entry.frame_start).min(source_frames),
                points: p.points,
            })
            .collect();
        lanes::rasterize_lanes(&rebased, cfg.lane_raster_step, frames, stride)
    };

    let label = match &entry.label {
        None => None,
        Some(name) => Some(
            cfg.classes.iter().position(|c| c == name).ok_or_else(|| {
                Error::data(format!("clip '{}': unknown label '{name}'", entry.clip_id))
            })?,
        ),
    };

    Ok(Session {
        session_id: entry.clip_id.clone(),
        width: real(entry.width),
        height: real(entry.height),
        frames,
        objects,
        lanes,
        label,
    })
}
