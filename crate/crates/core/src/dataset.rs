//! A training/evaluation dataset: clips with their prebuilt graphs and
//! instance tracks.

use crate::error::{Error, Result};
use crate::ingest::TrackedClip;
use crate::scalar::Scalar;
use crate::soia::InstanceTracks;
use crate::stgraph::{build_graph, GraphConfig, StGraph};

#[derive(Debug)]
pub struct DatasetItem<S = f64> {
    pub clip: TrackedClip<S>,
    pub graph: StGraph<S>,
    pub tracks: InstanceTracks<S>,
}

#[derive(Debug)]
pub struct Dataset<S = f64> {
    pub items: Vec<DatasetItem<S>>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub class_count: usize,
}

impl<S: Scalar> Dataset<S> {
    /// Build graphs and instance tracks for every clip. All clips must share
    /// a frame count and labels must lie in `[0, class_count)`.
    pub fn from_clips(
        clips: Vec<TrackedClip<S>>,
        graph_cfg: &GraphConfig,
        class_count: usize,
    ) -> Result<Self> {
        if let Some(first) = clips.first() {
            if let Some(bad) = clips.iter().find(|c| c.frames != first.frames) {
                return Err(Error::data(format!(
                    "clip '{}' has {} frames, expected {}",
                    bad.clip_id, bad.frames, first.frames
                )));
            }
        }
        let mut items = Vec::with_capacity(clips.len());
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (idx, clip) in clips.into_iter().enumerate() {
            if let Some(label) = clip.label {
                if label >= class_count {
                    return Err(Error::data(format!(
                        "clip '{}' has label {label} but only {class_count} classes exist",
                        clip.clip_id
                    )));
                }
                labeled.push(idx);
            } else {
                unlabeled.push(idx);
            }
            let graph = build_graph(&clip, graph_cfg)?;
            let tracks = InstanceTracks::from_clip(&clip);
            items.push(DatasetItem { clip, graph, tracks });
        }
        Ok(Self { items, labeled, unlabeled, class_count })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label_of(&self, idx: usize) -> Option<usize> {
        self.items[idx].clip.label
    }

    /// Copy with every label removed; the unsupervised mode trains on this so
    /// it cannot read labels even by accident.
    pub fn stripped(&self) -> Self
    where
        S: Clone,
    {
        let items = self
            .items
            .iter()
            .map(|item| {
                let mut clip = item.clip.clone();
                clip.label = None;
                let mut graph = item.graph.clone();
                graph.label = None;
                DatasetItem { clip, graph, tracks: item.tracks.clone() }
            })
            .collect();
        Self {
            items,
            labeled: Vec::new(),
            unlabeled: (0..self.items.len()).collect(),
            class_count: self.class_count,
        }
    }
}
