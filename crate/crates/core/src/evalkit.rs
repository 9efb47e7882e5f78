//! Classification scoring, average precision, embedding-space retrieval, and
//! the retrieval/association diagnostic.

use crate::error::{Error, Result};
use crate::scalar::{count, real, Scalar};
use crate::soia::{soia_distance, InstanceTracks};

/// A precision-recall curve: one point per ranked prediction, recall
/// non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<S = f64> {
    pub points: Vec<(S, S)>,
}

/// Integration convention for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    /// Area under the raw step curve via rank summation.
    #[default]
    Continuous,
    /// Mean of the interpolated precision at recalls 0, 0.1, ..., 1.
    ElevenPoint,
}

/// Softmax class probabilities from prototype logits `z . c_k / tau`.
/// Prototypes are L2-normalized first when `normalize` is set.
pub fn class_scores<S: Scalar>(
    z: &[S],
    prototypes: &[S],
    class_count: usize,
    temperature: f64,
    normalize: bool,
) -> Vec<S> {
    let d = z.len();
    let tau = real::<S>(temperature);
    let mut logits = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let row = &prototypes[c * d..(c + 1) * d];
        let mut dot = S::zero();
        for (&p, &zi) in row.iter().zip(z) {
            dot += p * zi;
        }
        if normalize {
            let norm = row.iter().map(|v| *v * *v).sum::<S>().sqrt();
            if norm > S::zero() {
                dot /= norm;
            }
        }
        logits.push(dot / tau);
    }
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&u| (u - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Ranked item order: descending score, ties by ascending item index.
fn ranked_order<S: Scalar>(scores: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j].partial_cmp(&scores[i]).expect("finite scores").then(i.cmp(&j))
    });
    order
}

/// The full precision/recall trace down the ranking.
pub fn pr_curve<S: Scalar>(scores: &[S], labels: &[bool]) -> Option<PrCurve<S>> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let total = count::<S>(positives);
    let mut points = Vec::with_capacity(scores.len());
    let mut tp = 0usize;
    for (k, &idx) in ranked_order(scores).iter().enumerate() {
        if labels[idx] {
            tp += 1;
        }
        points.push((count::<S>(tp) / total, count::<S>(tp) / count(k + 1)));
    }
    Some(PrCurve { points })
}

/// Average precision by rank summation: `sum_k precision@k * delta recall@k`
/// down the ranking. Returns `None` when there is no positive label.
pub fn average_precision<S: Scalar>(scores: &[S], labels: &[bool]) -> Option<S> {
    average_precision_with_mode(scores, labels, ApMode::Continuous)
}

pub fn average_precision_with_mode<S: Scalar>(
    scores: &[S],
    labels: &[bool],
    mode: ApMode,
) -> Option<S> {
    if scores.len() != labels.len() {
        return None;
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    match mode {
        ApMode::Continuous => {
            let total = count::<S>(positives);
            let mut ap = S::zero();
            let mut tp = 0usize;
            let mut prev_recall = S::zero();
            for (k, &idx) in ranked_order(scores).iter().enumerate() {
                if labels[idx] {
                    tp += 1;
                    let recall = count::<S>(tp) / total;
                    let precision = count::<S>(tp) / count(k + 1);
                    ap += precision * (recall - prev_recall);
                    prev_recall = recall;
                }
            }
            Some(ap)
        }
        ApMode::ElevenPoint => {
            let curve = pr_curve(scores, labels)?;
            let mut sum = S::zero();
            for i in 0..=10 {
                let r = real::<S>(i as f64 / 10.0);
                let best = curve
                    .points
                    .iter()
                    .filter(|&&(recall, _)| recall >= r)
                    .map(|&(_, p)| p)
                    .fold(S::zero(), S::max);
                sum += best;
            }
            Some(sum / real(11.0))
        }
    }
}

/// Unweighted mean over the classes whose AP is defined; `None` when no
/// class has one.
pub fn mean_ap<S: Scalar>(per_class: &[Option<S>]) -> Option<S> {
    let defined: Vec<S> = per_class.iter().filter_map(|ap| *ap).collect();
    if defined.is_empty() {
        return None;
    }
    Some(defined.iter().copied().sum::<S>() / count(defined.len()))
}

/// Per-class AP plus its mean for a labeled evaluation set, scoring each item
/// against the prototypes.
pub fn classification_map<S: Scalar>(
    embeddings: &[Vec<S>],
    labels: &[usize],
    prototypes: &[S],
    class_count: usize,
    temperature: f64,
    normalize: bool,
) -> (Vec<Option<S>>, Option<S>) {
    let scores: Vec<Vec<S>> = embeddings
        .iter()
        .map(|z| class_scores(z, prototypes, class_count, temperature, normalize))
        .collect();
    let per_class: Vec<Option<S>> = (0..class_count)
        .map(|c| {
            let class_scores: Vec<S> = scores.iter().map(|s| s[c]).collect();
            let class_labels: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            average_precision(&class_scores, &class_labels)
        })
        .collect();
    let map = mean_ap(&per_class);
    (per_class, map)
}

/// A ranked nearest-neighbor query result.
#[derive(Debug, Clone)]
pub struct RetrievalResult<S = f64> {
    pub query_id: String,
    /// (clip id, cosine similarity), similarity non-increasing; the query
    /// itself never appears.
    pub ranked: Vec<(String, S)>,
}

pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|v| *v * *v).sum::<S>().sqrt();
    let nb = b.iter().map(|v| *v * *v).sum::<S>().sqrt();
    if na.is_zero() || nb.is_zero() {
        return S::zero();
    }
    dot / (na * nb)
}

/// Top-k corpus entries by cosine similarity, ties broken by clip id. If `k`
/// exceeds the corpus the full ranking is returned.
pub fn retrieve_knn<S: Scalar>(
    query_id: &str,
    query: &[S],
    corpus: &[(String, Vec<S>)],
    k: usize,
) -> RetrievalResult<S> {
    let mut ranked: Vec<(String, S)> = corpus
        .iter()
        .filter(|(id, _)| id != query_id)
        .map(|(id, z)| (id.clone(), cosine_similarity(query, z)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("finite similarity").then(a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    RetrievalResult { query_id: query_id.to_string(), ranked }
}

/// Mean association distance between each query and its retrieved clip.
pub fn avg_soia_of_retrievals<S: Scalar>(
    pairs: &[(&InstanceTracks<S>, &InstanceTracks<S>)],
) -> Result<S> {
    if pairs.is_empty() {
        return Err(Error::invalid("no retrieval pairs to average"));
    }
    let mut sum = S::zero();
    for (query, hit) in pairs {
        sum += soia_distance(query, hit)?;
    }
    Ok(sum / count(pairs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: build the explicit step PR curve over the whole
    /// ranking and integrate it.
    fn step_curve_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let curve = pr_curve(scores, labels)?;
        let mut ap = 0.0;
        let mut prev = 0.0;
        for &(recall, precision) in &curve.points {
            ap += (recall - prev) * precision;
            prev = recall;
        }
        Some(ap)
    }

    #[test]
    fn perfect_ranking_has_ap_one() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [true, true, true, false, false];
        assert_eq!(average_precision(&scores, &labels), Some(1.0));
    }

    #[test]
    fn single_positive_ranked_last_gives_one_over_n() {
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [false, false, false, true];
        assert_relative_eq!(average_precision(&scores, &labels).unwrap(), 0.25);
    }

    #[test]
    fn no_positive_labels_is_undefined() {
        assert_eq!(average_precision(&[0.5, 0.4], &[false, false]), None);
    }

    #[test]
    fn ties_resolve_by_item_index() {
        let scores = [0.5, 0.5, 0.5];
        let labels = [true, false, true];
        // order 0,1,2: precisions at hits are 1/1 and 2/3
        let want = 0.5 * (1.0 + 2.0 / 3.0);
        assert_relative_eq!(average_precision(&scores, &labels).unwrap(), want);
    }

    #[test]
    fn matches_the_step_curve_oracle_exactly_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(1..=50);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.4).collect();
            assert_eq!(average_precision(&scores, &labels), step_curve_ap(&scores, &labels));
        }
    }

    #[test]
    fn ap_is_invariant_under_monotone_score_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let n = rng.random_range(2..30);
            // distinct scores in (0,1) so the transform cannot saturate into ties
            let mut scores: Vec<f64> =
                (0..n).map(|i| (i as f64 + rng.random_range(0.1..0.9)) / n as f64).collect();
            use rand::seq::SliceRandom;
            scores.shuffle(&mut rng);
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).tanh()).collect();
            assert_eq!(
                average_precision(&scores, &labels),
                average_precision(&transformed, &labels)
            );
        }
    }

    #[test]
    fn eleven_point_mode_runs_and_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let n = rng.random_range(1..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
            if let Some(ap) = average_precision_with_mode(&scores, &labels, ApMode::ElevenPoint) {
                assert!((0.0..=1.0).contains(&ap));
            }
        }
    }

    #[test]
    fn mean_ap_averages_defined_classes_only() {
        assert_eq!(mean_ap(&[Some(1.0), Some(0.0)]), Some(0.5));
        assert_eq!(mean_ap(&[Some(0.7)]), Some(0.7));
        assert_eq!(mean_ap::<f64>(&[None, None]), None);
        let eleven: Vec<Option<f64>> = (0..11).map(|i| Some(i as f64 / 10.0)).collect();
        let want = (0..11).map(|i| i as f64 / 10.0).sum::<f64>() / 11.0;
        assert_relative_eq!(mean_ap(&eleven).unwrap(), want);
    }

    #[test]
    fn uniform_scores_for_equidistant_prototypes() {
        let z = vec![1.0, 0.0];
        // both prototypes orthogonal to z: logits equal, softmax uniform
        let prototypes = vec![0.0, 1.0, 0.0, -1.0];
        let scores = class_scores(&z, &prototypes, 2, 1.0, true);
        assert_relative_eq!(scores[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(scores[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn matching_prototype_wins_the_argmax() {
        let z = vec![1.0, 0.0, 0.0];
        let prototypes = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let scores = class_scores(&z, &prototypes, 3, 1.0, true);
        assert!(scores[0] > scores[1] && scores[0] > scores[2]);
        let sum: f64 = scores.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn retrieval_ranks_an_exact_duplicate_first() {
        let corpus = vec![
            ("far".to_string(), vec![0.0, 1.0]),
            ("dup".to_string(), vec![1.0, 0.0]),
            ("mid".to_string(), vec![0.7, 0.7]),
        ];
        let out = retrieve_knn("q", &[1.0, 0.0], &corpus, 2);
        assert_eq!(out.ranked.len(), 2);
        assert_eq!(out.ranked[0].0, "dup");
        assert_relative_eq!(out.ranked[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn retrieval_excludes_the_query_and_caps_at_corpus_size() {
        let corpus = vec![
            ("q".to_string(), vec![1.0, 0.0]),
            ("other".to_string(), vec![0.5, 0.5]),
        ];
        let out = retrieve_knn("q", &[1.0, 0.0], &corpus, 10);
        assert_eq!(out.ranked.len(), 1);
        assert_eq!(out.ranked[0].0, "other");
    }

    #[test]
    fn orthogonal_corpus_scores_zero_everywhere() {
        let corpus = vec![("a".to_string(), vec![0.0, 1.0])];
        let out = retrieve_knn("q", &[1.0, 0.0], &corpus, 1);
        assert_eq!(out.ranked[0].1, 0.0);
    }

    #[test]
    fn average_retrieval_distance_is_the_plain_mean() {
        use crate::geometry::BoundingBox;
        use crate::ingest::{DetectedObject, TrackedClip};
        let mk = |w: f64| {
            let frames = 5;
            let clip = TrackedClip {
                clip_id: format!("c{w}"),
                width: 100.0,
                height: 100.0,
                frames,
                objects: (0..frames)
                    .map(|f| DetectedObject {
                        frame: f,
                        instance: 1,
                        class: 2,
                        bbox: BoundingBox::new(10.0, 10.0, w, 1.0),
                    })
                    .collect(),
                lanes: vec![Vec::new(); frames],
                label: None,
            };
            InstanceTracks::from_clip(&clip)
        };
        let empty = {
            let clip = TrackedClip {
                clip_id: "empty".into(),
                width: 100.0,
                height: 100.0,
                frames: 5,
                objects: vec![],
                lanes: vec![Vec::new(); 5],
                label: None,
            };
            InstanceTracks::from_clip(&clip)
        };
        let a = mk(4.0);
        let b = mk(6.0);
        // distances to the empty clip are the box areas: 4 and 6
        let mean = avg_soia_of_retrievals(&[(&a, &empty), (&b, &empty)]).unwrap();
        assert_relative_eq!(mean, 5.0, max_relative = 1e-12);

        let same = avg_soia_of_retrievals(&[(&a, &a), (&b, &b)]).unwrap();
        assert_eq!(same, 0.0);
    }
}
