//! Graph augmentations generating positive views for contrastive learning:
//! node dropping, edge perturbation, and attribute masking.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::stgraph::{NodeAttr, StGraph};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// Which augmentations a view composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    /// Pick one of the three augmentations uniformly per view.
    #[default]
    PickOne,
    /// Apply node dropping, then edge perturbation, then attribute masking.
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub node_drop_ratio: f64,
    pub edge_perturb_ratio: f64,
    pub attr_mask_ratio: f64,
    pub policy: AugmentPolicy,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            node_drop_ratio: 0.1,
            edge_perturb_ratio: 0.1,
            attr_mask_ratio: 0.1,
            policy: AugmentPolicy::PickOne,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("node_drop_ratio", self.node_drop_ratio),
            ("edge_perturb_ratio", self.edge_perturb_ratio),
            ("attr_mask_ratio", self.attr_mask_ratio),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {r}")));
            }
        }
        Ok(())
    }
}

/// Generate one augmented view of a graph according to the policy.
pub fn augment_view<S: Scalar, R: Rng>(
    graph: &StGraph<S>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> StGraph<S> {
    match cfg.policy {
        AugmentPolicy::PickOne => match rng.random_range(0..3u8) {
            0 => node_drop(graph, cfg.node_drop_ratio, rng),
            1 => edge_perturb(graph, cfg.edge_perturb_ratio, rng),
            _ => attr_mask(graph, cfg.attr_mask_ratio, rng),
        },
        AugmentPolicy::All => {
            let g = node_drop(graph, cfg.node_drop_ratio, rng);
            let g = edge_perturb(&g, cfg.edge_perturb_ratio, rng);
            attr_mask(&g, cfg.attr_mask_ratio, rng)
        }
    }
}

/// Remove `floor(ratio * |V|)` nodes chosen uniformly, along with their
/// incident edges. Instances that lose all nodes disappear from the map.
pub fn node_drop<S: Scalar, R: Rng>(graph: &StGraph<S>, ratio: f64, rng: &mut R) -> StGraph<S> {
    let n = graph.nodes.len();
    let k = (ratio * n as f64).floor() as usize;
    if k == 0 {
        return graph.clone();
    }
    let dropped: HashSet<usize> = sample(rng, n, k).into_iter().collect();

    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::with_capacity(n - k);
    for (i, node) in graph.nodes.iter().enumerate() {
        if !dropped.contains(&i) {
            remap[i] = nodes.len();
            nodes.push(node.clone());
        }
    }
    let spatial_edges = graph
        .spatial_edges
        .iter()
        .filter(|(i, j, _)| !dropped.contains(i) && !dropped.contains(j))
        .map(|&(i, j, w)| (remap[i], remap[j], w))
        .collect();
    let temporal_edges = graph
        .temporal_edges
        .iter()
        .filter(|(i, j)| !dropped.contains(i) && !dropped.contains(j))
        .map(|&(i, j)| (remap[i], remap[j]))
        .collect();
    let mut instance_map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (idx, node) in nodes.iter().enumerate() {
        instance_map.entry(node.instance).or_default().push(idx);
    }
    StGraph {
        nodes,
        spatial_edges,
        temporal_edges,
        instance_map,
        ..graph_shell(graph)
    }
}

/// Rewire `floor(ratio * |E|)` edges: the selected edges (spatial or
/// temporal) are deleted and replaced by random spatial edges between
/// currently unconnected same-frame pairs, with weights recomputed from the
/// node geometry. When no such pair exists a deleted edge is restored
/// instead, so the edge count is always preserved.
pub fn edge_perturb<S: Scalar, R: Rng>(graph: &StGraph<S>, ratio: f64, rng: &mut R) -> StGraph<S> {
    let mut spatial = graph.spatial_edges.clone();
    let mut temporal = graph.temporal_edges.clone();
    let total = spatial.len() + temporal.len();
    let k = (ratio * total as f64).floor() as usize;
    if k == 0 {
        return graph.clone();
    }

    let mut connected: HashSet<(usize, usize)> =
        spatial.iter().map(|&(i, j, _)| (i.min(j), i.max(j))).collect();

    // nodes per frame, for enumerating candidate pairs
    let mut frames: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, node) in graph.nodes.iter().enumerate() {
        frames.entry(node.frame).or_default().push(idx);
    }

    let mut picked = sample(rng, total, k).into_vec();
    picked.sort_unstable();
    // delete from the back so indices stay valid; spatial slots come first
    for &slot in picked.iter().rev() {
        if slot < spatial.len() {
            let (i, j, _) = spatial.remove(slot);
            connected.remove(&(i.min(j), i.max(j)));
        } else {
            temporal.remove(slot - spatial.len());
        }
    }

    for _ in 0..k {
        // absent same-frame pairs, in canonical order
        let mut candidates = Vec::new();
        for members in frames.values() {
            for a in 0..members.len() {
                for b in (a + 1)..members.len() {
                    let pair = (members[a], members[b]);
                    if !connected.contains(&pair) {
                        candidates.push(pair);
                    }
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let (i, j) = candidates[rng.random_range(0..candidates.len())];
        let w = weight_from_attrs(graph, i, j);
        spatial.push((i, j, w));
        connected.insert((i, j));
    }

    // top up with restored deletions if the graph ran out of absent pairs
    while spatial.len() + temporal.len() < total {
        match graph
            .spatial_edges
            .iter()
            .find(|&&(i, j, _)| !connected.contains(&(i.min(j), i.max(j))))
        {
            Some(&(i, j, w)) => {
                spatial.push((i, j, w));
                connected.insert((i.min(j), i.max(j)));
            }
            None => {
                let have: HashSet<(usize, usize)> = temporal.iter().copied().collect();
                let missing = graph
                    .temporal_edges
                    .iter()
                    .find(|e| !have.contains(e))
                    .expect("a deleted temporal edge can always be restored");
                temporal.push(*missing);
            }
        }
    }
    temporal.sort_unstable();

    StGraph {
        nodes: graph.nodes.clone(),
        spatial_edges: spatial,
        temporal_edges: temporal,
        instance_map: graph.instance_map.clone(),
        ..graph_shell(graph)
    }
}

/// Zero the full attribute vector of `floor(ratio * |V|)` random nodes.
/// Topology is untouched.
pub fn attr_mask<S: Scalar, R: Rng>(graph: &StGraph<S>, ratio: f64, rng: &mut R) -> StGraph<S> {
    let n = graph.nodes.len();
    let k = (ratio * n as f64).floor() as usize;
    let mut out = graph.clone();
    if k == 0 {
        return out;
    }
    for idx in sample(rng, n, k) {
        out.nodes[idx].attr = NodeAttr::zeros();
    }
    out
}

fn graph_shell<S: Scalar>(graph: &StGraph<S>) -> StGraph<S> {
    StGraph {
        clip_id: graph.clip_id.clone(),
        width: graph.width,
        height: graph.height,
        frames: graph.frames,
        nodes: Vec::new(),
        spatial_edges: Vec::new(),
        temporal_edges: Vec::new(),
        instance_map: BTreeMap::new(),
        label: graph.label,
    }
}

/// Spatial weight recomputed from the stored geometric attributes
/// (centroid = (g0 * W, g1 * H)).
fn weight_from_attrs<S: Scalar>(graph: &StGraph<S>, i: usize, j: usize) -> S {
    let centroid = |idx: usize| {
        let g = &graph.nodes[idx].attr.geometric;
        (g[0] * graph.width, g[1] * graph.height)
    };
    let (ax, ay) = centroid(i);
    let (bx, by) = centroid(j);
    let d2 = (ax - bx).powi(2) + (ay - by).powi(2);
    let sigma = crate::stgraph::default_sigma(graph.width, graph.height);
    (-d2 / (real::<S>(2.0) * sigma * sigma)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::ingest::{DetectedObject, TrackedClip};
    use crate::stgraph::{build_graph, GraphConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_clip(frames: usize, per_frame: usize) -> TrackedClip {
        let mut objects = Vec::new();
        for f in 0..frames {
            for k in 0..per_frame {
                objects.push(DetectedObject {
                    frame: f,
                    instance: k as i64,
                    class: (k % 8) as u8,
                    bbox: BoundingBox::new(
                        5.0 + 20.0 * k as f64 + f as f64,
                        10.0 + 7.0 * k as f64,
                        8.0,
                        6.0,
                    ),
                });
            }
        }
        TrackedClip {
            clip_id: "aug".into(),
            width: 100.0,
            height: 100.0,
            frames,
            objects,
            lanes: vec![vec![(0.0, 50.0), (10.0, 50.0)]; frames],
            label: Some(1),
        }
    }

    fn graph() -> StGraph<f64> {
        build_graph(&grid_clip(5, 4), &GraphConfig::default()).unwrap()
    }

    #[test]
    fn zero_ratio_is_the_identity_for_all_three() {
        let g = graph();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(node_drop(&g, 0.0, &mut rng), g);
        assert_eq!(edge_perturb(&g, 0.0, &mut rng), g);
        assert_eq!(attr_mask(&g, 0.0, &mut rng), g);
    }

    #[test]
    fn node_drop_removes_the_floor_count() {
        let g = graph(); // 20 nodes
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = node_drop(&g, 0.1, &mut rng);
        assert_eq!(out.nodes.len(), 18);
        out.check_invariants().unwrap();
    }

    #[test]
    fn node_drop_leaves_no_dangling_edges() {
        let g = graph();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = node_drop(&g, 0.35, &mut rng);
            out.check_invariants().unwrap();
            for &(i, j, _) in &out.spatial_edges {
                assert!(i < out.nodes.len() && j < out.nodes.len());
            }
        }
    }

    #[test]
    fn node_drop_forgets_empty_instances() {
        let g = graph();
        let mut saw_removal = false;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = node_drop(&g, 0.45, &mut rng);
            out.check_invariants().unwrap();
            if out.instance_map.len() < g.instance_map.len() {
                saw_removal = true;
            }
            for indices in out.instance_map.values() {
                assert!(!indices.is_empty());
            }
        }
        assert!(saw_removal, "45% drops over 50 seeds never emptied an instance");
    }

    #[test]
    fn edge_perturb_preserves_the_edge_count() {
        let g = graph();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = edge_perturb(&g, 0.3, &mut rng);
            assert_eq!(out.edge_count(), g.edge_count(), "seed {seed}");
            out.check_invariants().unwrap();
        }
    }

    #[test]
    fn edge_perturb_never_invents_temporal_edges() {
        let g = graph();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = edge_perturb(&g, 0.4, &mut rng);
            let original: HashSet<(usize, usize)> = g.temporal_edges.iter().copied().collect();
            for e in &out.temporal_edges {
                assert!(original.contains(e), "new temporal edge {e:?}");
            }
        }
    }

    #[test]
    fn edge_perturb_restores_when_no_spatial_pair_exists() {
        // a single instance over 6 frames: only temporal edges exist and no
        // same-frame pair is available, so rewiring falls back to restoring
        let clip = grid_clip(6, 1);
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        assert!(g.spatial_edges.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = edge_perturb(&g, 0.5, &mut rng);
        assert_eq!(out.edge_count(), g.edge_count());
        out.check_invariants().unwrap();
    }

    #[test]
    fn attr_mask_zeroes_attributes_and_keeps_topology() {
        let g = graph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = attr_mask(&g, 0.25, &mut rng);
        assert_eq!(out.spatial_edges, g.spatial_edges);
        assert_eq!(out.temporal_edges, g.temporal_edges);
        let masked = out.nodes.iter().filter(|n| n.attr.is_zero()).count();
        assert_eq!(masked, 5);
    }

    #[test]
    fn augmentations_are_reproducible_from_the_seed() {
        let g = graph();
        let cfg = AugmentConfig::default();
        for seed in 0..10 {
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(augment_view(&g, &cfg, &mut r1), augment_view(&g, &cfg, &mut r2));
        }
    }

    #[test]
    fn composed_policy_still_satisfies_graph_invariants() {
        let g = graph();
        let cfg = AugmentConfig {
            node_drop_ratio: 0.2,
            edge_perturb_ratio: 0.2,
            attr_mask_ratio: 0.2,
            policy: AugmentPolicy::All,
        };
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_view(&g, &cfg, &mut rng).check_invariants().unwrap();
        }
    }

    #[test]
    fn ratios_outside_range_fail_validation() {
        let cfg = AugmentConfig { node_drop_ratio: 1.0, ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
