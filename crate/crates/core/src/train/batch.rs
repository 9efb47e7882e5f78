//! Batch construction per learning mode.

use super::loss::{AnchorSpec, EmbRef};
use super::TrainConfig;
use crate::augment::augment_view;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::soia::{distance_matrix, select_pos_neg};
use crate::stgraph::StGraph;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How positives are generated and which data a run may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    /// Positives from the nearest batch member under the association
    /// distance; mixed labeled/unlabeled batches.
    #[default]
    Scl,
    /// Positives from graph augmentation; mixed batches.
    Gcl,
    /// Labeled data only; the class prototype is the only positive.
    Fsl,
    /// Labels stripped; otherwise the configured contrastive flavor.
    Unsup,
}

impl LearningMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scl" => Ok(Self::Scl),
            "gcl" => Ok(Self::Gcl),
            "fsl" => Ok(Self::Fsl),
            "unsup" => Ok(Self::Unsup),
            other => Err(Error::config(format!(
                "unknown learning mode '{other}' (expected scl|gcl|fsl|unsup)"
            ))),
        }
    }
}

/// A sampled batch: dataset indices, their labels as the mode sees them, the
/// per-anchor contrastive sets, and augmented views where the mode needs
/// them.
pub struct Batch<S = f64> {
    pub members: Vec<usize>,
    pub labels: Vec<Option<usize>>,
    pub anchors: Vec<AnchorSpec>,
    pub aug_views: Vec<Option<StGraph<S>>>,
}

/// Sample a batch without replacement and wire up each anchor's positive and
/// denominator sets for the configured mode.
pub fn make_batch<S: Scalar, R: Rng>(
    dataset: &Dataset<S>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch<S>> {
    let pool: Vec<usize> = match cfg.mode {
        LearningMode::Fsl => dataset.labeled.clone(),
        _ => (0..dataset.len()).collect(),
    };
    if cfg.mode == LearningMode::Fsl && pool.is_empty() {
        return Err(Error::config("the fully-supervised mode needs labeled data"));
    }
    if cfg.batch_size > pool.len() {
        return Err(Error::config(format!(
            "batch size {} exceeds the available pool of {}",
            cfg.batch_size,
            pool.len()
        )));
    }
    let mut members: Vec<usize> =
        sample(rng, pool.len(), cfg.batch_size).into_iter().map(|i| pool[i]).collect();
    members.sort_unstable();

    let labels: Vec<Option<usize>> = members
        .iter()
        .map(|&i| if cfg.mode == LearningMode::Unsup { None } else { dataset.label_of(i) })
        .collect();

    let b = members.len();
    let class_count = dataset.class_count;
    let mut anchors = Vec::with_capacity(b);
    let mut aug_views: Vec<Option<StGraph<S>>> = vec![None; b];

    let flavor = match cfg.mode {
        LearningMode::Unsup => cfg.unsup_flavor,
        other => other,
    };

    match flavor {
        LearningMode::Scl => {
            let tracks: Vec<_> =
                members.iter().map(|&i| dataset.items[i].tracks.clone()).collect();
            let dist = distance_matrix(&tracks)?;
            for n in 0..b {
                let row = &dist[n * b..(n + 1) * b];
                let (pos, negs) = select_pos_neg(n, row, cfg.margin_fraction)?;
                anchors.push(contrastive_anchor(
                    EmbRef::Member(pos),
                    &negs,
                    labels[n],
                    class_count,
                ));
            }
        }
        LearningMode::Gcl => {
            for n in 0..b {
                let view = augment_view(&dataset.items[members[n]].graph, &cfg.augment, rng);
                aug_views[n] = Some(view);
                let negs: Vec<usize> = (0..b).filter(|&m| m != n).collect();
                anchors.push(contrastive_anchor(
                    EmbRef::AugView(n),
                    &negs,
                    labels[n],
                    class_count,
                ));
            }
        }
        LearningMode::Fsl => {
            for label in &labels {
                let class = label.ok_or_else(|| {
                    Error::config("the fully-supervised mode needs labeled data")
                })?;
                anchors.push(AnchorSpec {
                    positives: vec![EmbRef::Prototype(class)],
                    denominator: (0..class_count).map(EmbRef::Prototype).collect(),
                    labeled: true,
                });
            }
        }
        LearningMode::Unsup => unreachable!("flavor is never Unsup"),
    }

    Ok(Batch { members, labels, anchors, aug_views })
}

fn contrastive_anchor(
    positive: EmbRef,
    negatives: &[usize],
    label: Option<usize>,
    class_count: usize,
) -> AnchorSpec {
    let mut positives = vec![positive];
    if let Some(class) = label {
        positives.push(EmbRef::Prototype(class));
    }
    let mut denominator: Vec<EmbRef> = negatives.iter().map(|&m| EmbRef::Member(m)).collect();
    denominator.push(positive);
    denominator.extend((0..class_count).map(EmbRef::Prototype));
    AnchorSpec { positives, denominator, labeled: label.is_some() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::ingest::{DetectedObject, TrackedClip};
    use crate::stgraph::GraphConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(id: &str, label: Option<usize>, x: f64) -> TrackedClip {
        let frames = 4;
        TrackedClip {
            clip_id: id.into(),
            width: 100.0,
            height: 100.0,
            frames,
            objects: (0..frames)
                .map(|f| DetectedObject {
                    frame: f,
                    instance: 1,
                    class: 2,
                    bbox: BoundingBox::new(x + f as f64, 20.0, 8.0, 8.0),
                })
                .collect(),
            lanes: vec![Vec::new(); frames],
            label,
        }
    }

    fn dataset() -> Dataset<f64> {
        let clips = vec![
            clip("a", Some(0), 10.0),
            clip("b", Some(1), 40.0),
            clip("c", None, 12.0),
            clip("d", None, 70.0),
            clip("e", Some(0), 11.0),
            clip("f", None, 42.0),
        ];
        Dataset::from_clips(clips, &GraphConfig::default(), 2).unwrap()
    }

    fn config(mode: LearningMode) -> TrainConfig {
        TrainConfig {
            mode,
            batch_size: 4,
            margin_fraction: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scl_positive_is_the_distance_argmin() {
        let ds = dataset();
        let cfg = config(LearningMode::Scl);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = make_batch(&ds, &cfg, &mut rng).unwrap();
        // recompute the batch distance matrix and cross-check every anchor
        let tracks: Vec<_> = batch.members.iter().map(|&i| ds.items[i].tracks.clone()).collect();
        let dist = distance_matrix(&tracks).unwrap();
        let b = batch.members.len();
        for (n, anchor) in batch.anchors.iter().enumerate() {
            let row = &dist[n * b..(n + 1) * b];
            let want = (0..b)
                .filter(|&m| m != n)
                .min_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap().then(i.cmp(&j)))
                .unwrap();
            assert_eq!(anchor.positives[0], EmbRef::Member(want));
        }
    }

    #[test]
    fn gcl_uses_all_other_members_as_negatives() {
        let ds = dataset();
        let cfg = config(LearningMode::Gcl);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = make_batch(&ds, &cfg, &mut rng).unwrap();
        for (n, anchor) in batch.anchors.iter().enumerate() {
            assert_eq!(anchor.positives[0], EmbRef::AugView(n));
            let negatives = anchor
                .denominator
                .iter()
                .filter(|r| matches!(r, EmbRef::Member(_)))
                .count();
            assert_eq!(negatives, cfg.batch_size - 1);
            assert!(batch.aug_views[n].is_some());
        }
    }

    #[test]
    fn fsl_draws_only_labeled_clips_with_prototype_positives() {
        let ds = dataset();
        let mut cfg = config(LearningMode::Fsl);
        cfg.batch_size = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = make_batch(&ds, &cfg, &mut rng).unwrap();
        for (&member, anchor) in batch.members.iter().zip(&batch.anchors) {
            assert!(ds.label_of(member).is_some());
            assert_eq!(anchor.positives.len(), 1);
            assert!(matches!(anchor.positives[0], EmbRef::Prototype(_)));
            assert_eq!(anchor.denominator.len(), 2);
        }
        assert!(batch.aug_views.iter().all(Option::is_none));
    }

    #[test]
    fn unsup_mode_sees_no_labels() {
        let ds = dataset();
        let cfg = config(LearningMode::Unsup);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = make_batch(&ds, &cfg, &mut rng).unwrap();
        assert!(batch.labels.iter().all(Option::is_none));
        assert!(batch.anchors.iter().all(|a| !a.labeled));
    }

    #[test]
    fn oversized_batch_is_a_config_error() {
        let ds = dataset();
        let mut cfg = config(LearningMode::Scl);
        cfg.batch_size = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(make_batch(&ds, &cfg, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn fsl_on_unlabeled_only_data_is_a_config_error() {
        let clips = vec![clip("a", None, 10.0), clip("b", None, 40.0)];
        let ds = Dataset::from_clips(clips, &GraphConfig::default(), 2).unwrap();
        let mut cfg = config(LearningMode::Fsl);
        cfg.batch_size = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(matches!(make_batch(&ds, &cfg, &mut rng), Err(Error::Config(_))));
    }
}
