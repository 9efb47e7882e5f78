//! Spatio-temporal graph construction: per-object node attribute vectors
//! (semantic one-hot, box geometry, lane interaction) and weighted
//! spatial/temporal edges.

pub mod io;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::ingest::{TrackedClip, OBJECT_CLASS_COUNT};
use crate::scalar::{real, Scalar};
use std::collections::BTreeMap;

pub const SEMANTIC_DIM: usize = OBJECT_CLASS_COUNT;
pub const GEOMETRIC_DIM: usize = 5;
pub const LANE_DIM: usize = 10;
pub const ATTR_DIM: usize = SEMANTIC_DIM + GEOMETRIC_DIM + LANE_DIM;

/// Node attribute vector, kept in its three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAttr<S = f64> {
    /// One-hot class indicator, 8-dim.
    pub semantic: Vec<S>,
    /// Normalized box geometry, 5-dim.
    pub geometric: Vec<S>,
    /// Lane interaction at the four corners and the center, 10-dim.
    pub lane: Vec<S>,
}

impl<S: Scalar> NodeAttr<S> {
    pub fn zeros() -> Self {
        Self {
            semantic: vec![S::zero(); SEMANTIC_DIM],
            geometric: vec![S::zero(); GEOMETRIC_DIM],
            lane: vec![S::zero(); LANE_DIM],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.semantic.iter().chain(&self.geometric).chain(&self.lane).all(|v| v.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode<S = f64> {
    pub frame: usize,
    pub instance: i64,
    pub attr: NodeAttr<S>,
}

/// The spatio-temporal graph of one clip. Edges are undirected and stored
/// once; spatial edges connect same-frame nodes, temporal edges connect the
/// same instance on adjacent frames with implicit weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StGraph<S = f64> {
    pub clip_id: String,
    pub width: S,
    pub height: S,
    pub frames: usize,
    pub nodes: Vec<GraphNode<S>>,
    pub spatial_edges: Vec<(usize, usize, S)>,
    pub temporal_edges: Vec<(usize, usize)>,
    /// instance id -> indices of its nodes, in frame order.
    pub instance_map: BTreeMap<i64, Vec<usize>>,
    pub label: Option<usize>,
}

/// Construction settings; `sigma_lane` falls back to the edge-weight scale
/// `sqrt(W^2 + H^2) / 4` when unset.
#[derive(Debug, Clone, Default)]
pub struct GraphConfig {
    pub sigma_lane: Option<f64>,
    /// Divide the lane interaction sum by the lane point count.
    pub lane_sum_normalized: bool,
}

/// Centroid/size features of a box relative to the frame:
/// `(a/W, b/H, w/W, h/H, w*h/sqrt(W*H))`.
pub fn geometric_feature<S: Scalar>(bbox: &BoundingBox<S>, width: S, height: S) -> Vec<S> {
    let (a, b) = bbox.centroid();
    vec![
        a / width,
        b / height,
        bbox.width / width,
        bbox.height / height,
        bbox.width * bbox.height / (width * height).sqrt(),
    ]
}

/// Gaussian-weighted sum of unit vectors from `anchor` to every lane point.
/// A point coincident with the anchor contributes nothing.
pub fn lane_interaction<S: Scalar>(anchor: (S, S), points: &[(S, S)], sigma: S) -> (S, S) {
    let mut fx = S::zero();
    let mut fy = S::zero();
    let denom = real::<S>(2.0) * sigma * sigma;
    for &(px, py) in points {
        let vx = px - anchor.0;
        let vy = py - anchor.1;
        let norm = (vx * vx + vy * vy).sqrt();
        if norm.is_zero() {
            continue;
        }
        let w = (-(norm * norm) / denom).exp();
        fx += w * vx / norm;
        fy += w * vy / norm;
    }
    (fx, fy)
}

/// Lane interaction at the five box anchors (top-left, top-right, bottom-left,
/// bottom-right, center), concatenated into a 10-vector.
pub fn lane_feature<S: Scalar>(
    bbox: &BoundingBox<S>,
    points: &[(S, S)],
    sigma: S,
    normalized: bool,
) -> Vec<S> {
    let anchors = [
        (bbox.x_min, bbox.y_min),
        (bbox.x_max(), bbox.y_min),
        (bbox.x_min, bbox.y_max()),
        (bbox.x_max(), bbox.y_max()),
        bbox.centroid(),
    ];
    let scale = if normalized && !points.is_empty() {
        S::one() / S::from_usize(points.len()).unwrap()
    } else {
        S::one()
    };
    let mut out = Vec::with_capacity(LANE_DIM);
    for anchor in anchors {
        let (fx, fy) = lane_interaction(anchor, points, sigma);
        out.push(fx * scale);
        out.push(fy * scale);
    }
    out
}

/// Scale parameter shared by spatial edge weights and (by default) the lane
/// interaction: `sqrt(W^2 + H^2) / 4`.
pub fn default_sigma<S: Scalar>(width: S, height: S) -> S {
    (width * width + height * height).sqrt() / real(4.0)
}

/// Gaussian kernel of the centroid distance between two same-frame boxes.
pub fn spatial_edge_weight<S: Scalar>(
    a: &BoundingBox<S>,
    b: &BoundingBox<S>,
    width: S,
    height: S,
) -> S {
    let sigma = default_sigma(width, height);
    let d = a.centroid_distance(b);
    (-(d * d) / (real::<S>(2.0) * sigma * sigma)).exp()
}

/// Build the spatio-temporal graph of a clip. Nodes are ordered by
/// (frame, instance); all same-frame pairs get a spatial edge, and temporal
/// edges link an instance's nodes on adjacent frames.
pub fn build_graph<S: Scalar>(clip: &TrackedClip<S>, cfg: &GraphConfig) -> Result<StGraph<S>> {
    clip.validate()?;
    let sigma_lane = cfg
        .sigma_lane
        .map(real::<S>)
        .unwrap_or_else(|| default_sigma(clip.width, clip.height));
    if sigma_lane <= S::zero() {
        return Err(Error::invalid("sigma_lane must be positive"));
    }

    let mut objects: Vec<_> = clip.objects.iter().collect();
    objects.sort_by_key(|o| (o.frame, o.instance));

    let mut nodes = Vec::with_capacity(objects.len());
    for obj in &objects {
        let mut semantic = vec![S::zero(); SEMANTIC_DIM];
        semantic[obj.class as usize] = S::one();
        let attr = NodeAttr {
            semantic,
            geometric: geometric_feature(&obj.bbox, clip.width, clip.height),
            lane: lane_feature(
                &obj.bbox,
                &clip.lanes[obj.frame],
                sigma_lane,
                cfg.lane_sum_normalized,
            ),
        };
        nodes.push(GraphNode { frame: obj.frame, instance: obj.instance, attr });
    }

    // spatial edges: all pairs within a frame (nodes are frame-sorted)
    let mut spatial_edges = Vec::new();
    let mut start = 0;
    while start < objects.len() {
        let frame = objects[start].frame;
        let mut end = start;
        while end < objects.len() && objects[end].frame == frame {
            end += 1;
        }
        for i in start..end {
            for j in (i + 1)..end {
                let w = spatial_edge_weight(
                    &objects[i].bbox,
                    &objects[j].bbox,
                    clip.width,
                    clip.height,
                );
                spatial_edges.push((i, j, w));
            }
        }
        start = end;
    }

    // temporal edges: same instance on adjacent frames
    let mut instance_map: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (idx, obj) in objects.iter().enumerate() {
        instance_map.entry(obj.instance).or_default().push(idx);
    }
    let mut temporal_edges = Vec::new();
    for indices in instance_map.values() {
        for pair in indices.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            if objects[j].frame == objects[i].frame + 1 {
                temporal_edges.push((i, j));
            }
        }
    }
    temporal_edges.sort_unstable();

    Ok(StGraph {
        clip_id: clip.clip_id.clone(),
        width: clip.width,
        height: clip.height,
        frames: clip.frames,
        nodes,
        spatial_edges,
        temporal_edges,
        instance_map,
        label: clip.label,
    })
}

impl<S: Scalar> StGraph<S> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.spatial_edges.len() + self.temporal_edges.len()
    }

    /// Symmetric adjacency with weights, neighbor lists sorted by index.
    pub fn adjacency(&self) -> Vec<Vec<(usize, S)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j, w) in &self.spatial_edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for &(i, j) in &self.temporal_edges {
            adj[i].push((j, S::one()));
            adj[j].push((i, S::one()));
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
        }
        adj
    }

    /// Check every structural invariant; used by tests and after augmentation.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut seen = std::collections::HashSet::new();
        for &(i, j, w) in &self.spatial_edges {
            if i >= n || j >= n || i == j {
                return Err(Error::data(format!("bad spatial edge ({i},{j})")));
            }
            if self.nodes[i].frame != self.nodes[j].frame {
                return Err(Error::data(format!("spatial edge ({i},{j}) crosses frames")));
            }
            if !(w > S::zero() && w <= S::one()) {
                return Err(Error::data(format!("spatial weight {w} outside (0,1]")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::data(format!("duplicate edge ({i},{j})")));
            }
        }
        for &(i, j) in &self.temporal_edges {
            if i >= n || j >= n || i == j {
                return Err(Error::data(format!("bad temporal edge ({i},{j})")));
            }
            let (a, b) = (&self.nodes[i], &self.nodes[j]);
            if a.instance != b.instance {
                return Err(Error::data(format!("temporal edge ({i},{j}) mixes instances")));
            }
            if a.frame.abs_diff(b.frame) != 1 {
                return Err(Error::data(format!("temporal edge ({i},{j}) is not adjacent")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::data(format!("duplicate edge ({i},{j})")));
            }
        }
        for (id, indices) in &self.instance_map {
            if indices.is_empty() {
                return Err(Error::data(format!("instance {id} maps to no nodes")));
            }
            for &i in indices {
                if i >= n || self.nodes[i].instance != *id {
                    return Err(Error::data(format!("instance map entry {id} -> {i} is wrong")));
                }
            }
        }
        let mapped: usize = self.instance_map.values().map(Vec::len).sum();
        if mapped != n {
            return Err(Error::data("instance map does not cover all nodes"));
        }
        for node in &self.nodes {
            if node.frame >= self.frames {
                return Err(Error::data("node frame outside the clip"));
            }
            let finite = node
                .attr
                .semantic
                .iter()
                .chain(&node.attr.geometric)
                .chain(&node.attr.lane)
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::data("non-finite node attribute"));
            }
        }
        Ok(())
    }
}
