//! Video-to-video distance by object instance association: per-instance mIoU
//! similarity, Hungarian matching, the area-weighted distance, and
//! positive/negative selection with a margin.

mod hungarian;

pub use hungarian::{hungarian_max, Assignment};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::ingest::TrackedClip;
use crate::scalar::{count, Scalar};
use rayon::prelude::*;

/// Instance-to-instance similarity scores between two clips.
/// Rows index the first clip's instances, columns the second's.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<S = f64> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> SimilarityMatrix<S> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }
}

/// A clip reduced to per-instance, frame-indexed box tracks (instance ids in
/// ascending order). This is the only view the association needs.
#[derive(Debug, Clone)]
pub struct InstanceTracks<S = f64> {
    pub frames: usize,
    pub instances: Vec<(i64, Vec<Option<BoundingBox<S>>>)>,
}

impl<S: Scalar> InstanceTracks<S> {
    pub fn from_clip(clip: &TrackedClip<S>) -> Self {
        let map = clip.instance_tracks();
        Self { frames: clip.frames, instances: map.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Mean IoU of two instance tracks over all frames; a frame where either
/// instance is undetected contributes zero.
pub fn instance_similarity<S: Scalar>(
    a: &InstanceTracks<S>,
    b: &InstanceTracks<S>,
    row: usize,
    col: usize,
) -> Result<S> {
    if a.frames != b.frames {
        return Err(Error::invalid(format!(
            "clips must share a frame count ({} vs {})",
            a.frames, b.frames
        )));
    }
    let ta = &a.instances[row].1;
    let tb = &b.instances[col].1;
    let mut sum = S::zero();
    for t in 0..a.frames {
        if let (Some(u), Some(v)) = (&ta[t], &tb[t]) {
            sum += u.iou(v);
        }
    }
    Ok(sum / count(a.frames))
}

/// All pairwise instance similarities between two clips.
pub fn similarity_matrix<S: Scalar>(
    a: &InstanceTracks<S>,
    b: &InstanceTracks<S>,
) -> Result<SimilarityMatrix<S>> {
    let mut data = Vec::with_capacity(a.len() * b.len());
    for r in 0..a.len() {
        for c in 0..b.len() {
            data.push(instance_similarity(a, b, r, c)?);
        }
    }
    Ok(SimilarityMatrix { rows: a.len(), cols: b.len(), data })
}

fn area_at<S: Scalar>(track: &[Option<BoundingBox<S>>], t: usize) -> S {
    track[t].map(|b| b.area()).unwrap_or_else(S::zero)
}

/// Distance between two clips: matched instances contribute their
/// area-weighted (1 - IoU) per frame, unmatched instances from either clip
/// contribute their full box area. A frame where neither side is detected
/// contributes nothing. Unit: squared pixels.
pub fn soia_distance<S: Scalar>(a: &InstanceTracks<S>, b: &InstanceTracks<S>) -> Result<S> {
    if a.frames != b.frames {
        return Err(Error::invalid(format!(
            "clips must share a frame count ({} vs {})",
            a.frames, b.frames
        )));
    }
    let frames = count::<S>(a.frames.max(1));
    let sim = similarity_matrix(a, b)?;
    let assignment = hungarian_max(&sim);

    let mut total = S::zero();
    for &(r, c) in &assignment.matches {
        let ta = &a.instances[r].1;
        let tb = &b.instances[c].1;
        let mut pair = S::zero();
        for t in 0..a.frames {
            match (&ta[t], &tb[t]) {
                (Some(u), Some(v)) => {
                    pair += (S::one() - u.iou(v)) * u.area().max(v.area());
                }
                (Some(u), None) => pair += u.area(),
                (None, Some(v)) => pair += v.area(),
                (None, None) => {}
            }
        }
        total += pair / frames;
    }
    for &r in &assignment.unmatched_rows {
        let ta = &a.instances[r].1;
        let mut sum = S::zero();
        for t in 0..a.frames {
            sum += area_at(ta, t);
        }
        total += sum / frames;
    }
    for &c in &assignment.unmatched_cols {
        let tb = &b.instances[c].1;
        let mut sum = S::zero();
        for t in 0..b.frames {
            sum += area_at(tb, t);
        }
        total += sum / frames;
    }
    Ok(total)
}

/// Symmetric matrix of pairwise distances over a batch, row-major, zero
/// diagonal. Entries are computed in parallel; the output is independent of
/// the thread count.
pub fn distance_matrix<S: Scalar>(tracks: &[InstanceTracks<S>]) -> Result<Vec<S>> {
    let n = tracks.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let values: Vec<S> = pairs
        .par_iter()
        .map(|&(i, j)| soia_distance(&tracks[i], &tracks[j]))
        .collect::<Result<_>>()?;
    let mut out = vec![S::zero(); n * n];
    for (&(i, j), &d) in pairs.iter().zip(values.iter()) {
        out[i * n + j] = d;
        out[j * n + i] = d;
    }
    Ok(out)
}

/// Pick the positive and negative samples for an anchor from its distance
/// row. The non-anchor samples are sorted by ascending distance (ties toward
/// lower indices); the nearest is the positive, and a margin block of
/// `floor(margin_fraction * B)` leading samples (the positive counts toward
/// it) separates it from the negatives, which are everything after the block
/// and are returned in ascending batch order. So `B - 1 - floor(mf * B)`
/// negatives when the margin is non-zero, `B - 2` when it is zero.
pub fn select_pos_neg<S: Scalar>(
    anchor: usize,
    distances: &[S],
    margin_fraction: f64,
) -> Result<(usize, Vec<usize>)> {
    let batch = distances.len();
    if batch < 2 {
        return Err(Error::config("positive/negative selection needs a batch of at least 2"));
    }
    if anchor >= batch {
        return Err(Error::invalid(format!("anchor {anchor} outside batch of {batch}")));
    }
    if margin_fraction < 0.0 {
        return Err(Error::config("margin_fraction must be non-negative"));
    }
    let margin = (margin_fraction * batch as f64).floor() as usize;
    if 1 + margin > batch - 1 {
        return Err(Error::config(format!(
            "margin of {margin} consumes all {} non-anchor samples",
            batch - 1
        )));
    }
    let mut order: Vec<usize> = (0..batch).filter(|&i| i != anchor).collect();
    order.sort_by(|&i, &j| {
        distances[i].partial_cmp(&distances[j]).expect("finite distances").then(i.cmp(&j))
    });
    let positive = order[0];
    let mut negatives: Vec<usize> = order[margin.max(1)..].to_vec();
    negatives.sort_unstable();
    Ok((positive, negatives))
}
