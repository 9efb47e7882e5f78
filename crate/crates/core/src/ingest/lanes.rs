//! Lane geometry: polylines per frame range, JSON file format, and
//! rasterization into per-frame point sets.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// A lane line as an ordered polyline, valid over a source-frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct LanePolyline {
    /// First source frame the polyline is visible in (inclusive).
    pub frame_start: usize,
    /// One past the last visible source frame.
    pub frame_end: usize,
    /// Pixel vertices, at least two.
    pub points: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct LaneEntry {
    frames: [usize; 2],
    points: Vec<[f64; 2]>,
}

/// Read a lane file: a JSON list of `{frames:[start,end], points:[[x,y],...]}`
/// entries. Coordinates are clamped into the frame.
pub fn read_lane_file<R: Read>(reader: R, frame_w: f64, frame_h: f64) -> Result<Vec<LanePolyline>> {
    let entries: Vec<LaneEntry> =
        serde_json::from_reader(reader).map_err(|e| Error::data(format!("lane file: {e}")))?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            if e.points.len() < 2 {
                return Err(Error::data(format!(
                    "lane entry {i}: a polyline needs at least 2 vertices"
                )));
            }
            if e.frames[1] <= e.frames[0] {
                return Err(Error::data(format!("lane entry {i}: empty frame range")));
            }
            Ok(LanePolyline {
                frame_start: e.frames[0],
                frame_end: e.frames[1],
                points: e
                    .points
                    .into_iter()
                    .map(|[x, y]| (x.clamp(0.0, frame_w), y.clamp(0.0, frame_h)))
                    .collect(),
            })
        })
        .collect()
}

pub fn write_lane_file<W: Write>(writer: W, polylines: &[LanePolyline]) -> Result<()> {
    let entries: Vec<LaneEntry> = polylines
        .iter()
        .map(|p| LaneEntry {
            frames: [p.frame_start, p.frame_end],
            points: p.points.iter().map(|&(x, y)| [x, y]).collect(),
        })
        .collect();
    serde_json::to_writer_pretty(writer, &entries)
        .map_err(|e| Error::data(format!("lane file: {e}")))
}

/// Sample a polyline at arc-length intervals of at most `step` pixels.
/// Vertices are always included.
pub fn rasterize_polyline<S: Scalar>(points: &[(f64, f64)], step: f64) -> Vec<(S, S)> {
    assert!(step > 0.0, "raster step must be positive");
    let mut out = Vec::new();
    if points.is_empty() {
        return out;
    }
    for seg in points.windows(2) {
        let (ax, ay) = seg[0];
        let (bx, by) = seg[1];
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let n = ((len / step).ceil() as usize).max(1);
        for i in 0..n {
            let t = i as f64 / n as f64;
            out.push((real(ax + (bx - ax) * t), real(ay + (by - ay) * t)));
        }
    }
    let (lx, ly) = *points.last().unwrap();
    out.push((real(lx), real(ly)));
    out
}

/// Rasterize polylines into one deduplicated point set per working frame.
/// Working frame `w` maps to source frame `w * frame_stride`.
pub fn rasterize_lanes<S: Scalar>(
    polylines: &[LanePolyline],
    step: f64,
    working_frames: usize,
    frame_stride: usize,
) -> Vec<Vec<(S, S)>> {
    let rastered: Vec<(usize, usize, Vec<(S, S)>)> = polylines
        .iter()
        .map(|p| (p.frame_start, p.frame_end, rasterize_polyline(&p.points, step)))
        .collect();
    (0..working_frames)
        .map(|w| {
            let source = w * frame_stride;
            let mut pts: Vec<(S, S)> = rastered
                .iter()
                .filter(|(start, end, _)| source >= *start && source < *end)
                .flat_map(|(_, _, pts)| pts.iter().copied())
                .collect();
            pts.sort_by(|a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap())
            });
            pts.dedup();
            pts
        })
        .collect()
}
