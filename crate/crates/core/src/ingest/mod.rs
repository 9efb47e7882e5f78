//! Parsing of tracking and lane files, frame-rate downsampling, and slicing
//! of sessions into fixed-length clips.

mod lanes;
mod manifest;
mod tracks;

pub use lanes::{rasterize_lanes, rasterize_polyline, read_lane_file, write_lane_file, LanePolyline};
pub use manifest::{ingest_manifest, read_manifest, write_manifest, IngestConfig, ManifestEntry};
pub use tracks::{parse_track_file, write_track_file, TrackParseConfig};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use std::collections::{BTreeMap, HashSet};

/// Number of object classes a detector may emit.
pub const OBJECT_CLASS_COUNT: usize = 8;

/// Class names in id order.
pub const OBJECT_CLASS_NAMES: [&str; OBJECT_CLASS_COUNT] = [
    "pedestrian",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// One detection in one frame of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedObject<S = f64> {
    /// 0-based frame index.
    pub frame: usize,
    /// Track id; all detections sharing it form one object instance.
    pub instance: i64,
    /// Object class in `[0, OBJECT_CLASS_COUNT)`.
    pub class: u8,
    pub bbox: BoundingBox<S>,
}

/// A fixed-length window of detections plus per-frame lane geometry; the unit
/// every video reduces to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedClip<S = f64> {
    pub clip_id: String,
    pub width: S,
    pub height: S,
    /// Frame count at the working rate.
    pub frames: usize,
    /// Sorted by (frame, instance).
    pub objects: Vec<DetectedObject<S>>,
    /// Rasterized lane points per frame; `lanes.len() == frames`.
    pub lanes: Vec<Vec<(S, S)>>,
    /// Class index, absent for unlabeled clips.
    pub label: Option<usize>,
}

impl<S: Scalar> TrackedClip<S> {
    /// Check the structural invariants: frame indices in range, at most one
    /// object per (frame, instance), boxes non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.lanes.len() != self.frames {
            return Err(Error::data(format!(
                "clip '{}': {} lane frames for {} clip frames",
                self.clip_id,
                self.lanes.len(),
                self.frames
            )));
        }
        let mut seen = HashSet::new();
        for obj in &self.objects {
            if obj.frame >= self.frames {
                return Err(Error::data(format!(
                    "clip '{}': object on frame {} but clip has {} frames",
                    self.clip_id, obj.frame, self.frames
                )));
            }
            if !seen.insert((obj.frame, obj.instance)) {
                return Err(Error::data(format!(
                    "clip '{}': duplicate detection for instance {} on frame {}",
                    self.clip_id, obj.instance, obj.frame
                )));
            }
            if obj.bbox.is_empty() {
                return Err(Error::data(format!(
                    "clip '{}': empty box for instance {} on frame {}",
                    self.clip_id, obj.instance, obj.frame
                )));
            }
        }
        Ok(())
    }

    /// Per-instance frame-indexed box tracks, ordered by instance id.
    pub fn instance_tracks(&self) -> BTreeMap<i64, Vec<Option<BoundingBox<S>>>> {
        let mut map: BTreeMap<i64, Vec<Option<BoundingBox<S>>>> = BTreeMap::new();
        for obj in &self.objects {
            map.entry(obj.instance)
                .or_insert_with(|| vec![None; self.frames])[obj.frame] = Some(obj.bbox);
        }
        map
    }

    pub fn instance_count(&self) -> usize {
        self.objects.iter().map(|o| o.instance).collect::<HashSet<_>>().len()
    }
}

/// A full recording at the working frame rate, before slicing into clips.
#[derive(Debug, Clone)]
pub struct Session<S = f64> {
    pub session_id: String,
    pub width: S,
    pub height: S,
    pub frames: usize,
    pub objects: Vec<DetectedObject<S>>,
    pub lanes: Vec<Vec<(S, S)>>,
    pub label: Option<usize>,
}

/// Keep every `fps_in / fps_out`-th frame and renumber the survivors
/// consecutively. Identity when the rates match.
pub fn downsample_tracks<S: Scalar>(
    objects: &[DetectedObject<S>],
    fps_in: f64,
    fps_out: f64,
) -> Result<Vec<DetectedObject<S>>> {
    let stride = frame_stride(fps_in, fps_out)?;
    Ok(objects
        .iter()
        .filter(|o| o.frame % stride == 0)
        .map(|o| DetectedObject { frame: o.frame / stride, ..o.clone() })
        .collect())
}

/// Integer frame stride between a source and a working rate.
pub fn frame_stride(fps_in: f64, fps_out: f64) -> Result<usize> {
    if !(fps_in > 0.0) || !(fps_out > 0.0) {
        return Err(Error::invalid("frame rates must be positive"));
    }
    if fps_out > fps_in {
        return Err(Error::invalid(format!(
            "cannot upsample tracks from {fps_in} fps to {fps_out} fps"
        )));
    }
    let stride = (fps_in / fps_out).round() as usize;
    Ok(stride.max(1))
}

/// Frame count that survives downsampling a range of `source_frames`.
pub fn downsampled_frame_count(source_frames: usize, stride: usize) -> usize {
    source_frames.div_ceil(stride)
}

/// Cut a session into windows of `clip_len` frames every `stride` frames.
/// The trailing partial window is discarded.
pub fn slice_clips<S: Scalar>(
    session: &Session<S>,
    clip_len: usize,
    stride: usize,
) -> Result<Vec<TrackedClip<S>>> {
    if clip_len == 0 {
        return Err(Error::invalid("clip length must be at least 1 frame"));
    }
    if stride == 0 {
        return Err(Error::invalid("clip stride must be at least 1 frame"));
    }
    let mut windows = Vec::new();
    let mut start = 0;
    while start + clip_len <= session.frames {
        windows.push(start);
        start += stride;
    }
    let single = windows.len() == 1;
    let mut clips = Vec::with_capacity(windows.len());
    for (k, start) in windows.into_iter().enumerate() {
        let end = start + clip_len;
        let mut objects: Vec<DetectedObject<S>> = session
            .objects
            .iter()
            .filter(|o| o.frame >= start && o.frame < end)
            .map(|o| DetectedObject { frame: o.frame - start, ..o.clone() })
            .collect();
        objects.sort_by_key(|o| (o.frame, o.instance));
        let clip = TrackedClip {
            clip_id: if single {
                session.session_id.clone()
            } else {
                format!("{}#{k:03}", session.session_id)
            },
            width: session.width,
            height: session.height,
            frames: clip_len,
            objects,
            lanes: session.lanes[start..end].to_vec(),
            label: session.label,
        };
        clip.validate()?;
        clips.push(clip);
    }
    Ok(clips)
}
