//! The graph network: encoder MLPs for the attribute blocks, three local
//! extrema convolution (LEConv) layers over the weighted graph, and an
//! instance-level pooling aggregator producing one embedding per clip.
//! Forward evaluation caches every intermediate so the hand-written backward
//! pass can produce exact gradients.

mod checkpoint;
mod linear;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelMeta};
pub use linear::{Linear, Mlp};

use crate::scalar::{count, real, Scalar};
use crate::stgraph::{StGraph, GEOMETRIC_DIM, LANE_DIM, SEMANTIC_DIM};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Width of each encoder output block; the node state is their concatenation.
pub const ENCODER_OUT: usize = 32;
/// Node state width through the propagation layers.
pub const NODE_WIDTH: usize = 2 * ENCODER_OUT;
/// Geometry plus lane-interaction encoder input width.
pub const GEO_IN: usize = GEOMETRIC_DIM + LANE_DIM;
/// Number of propagation layers.
pub const PROP_LAYERS: usize = 3;
/// Hidden width of the aggregator MLPs.
pub const AGG_HIDDEN: usize = 64;

/// One LEConv layer: `x_i' = relu(x_i W_self + sum_j e_ij (x_i W_center - x_j W_neighbor))`.
/// All three weights are `NODE_WIDTH x NODE_WIDTH`, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LeConv<S = f64> {
    pub w_self: Vec<S>,
    pub w_center: Vec<S>,
    pub w_neighbor: Vec<S>,
}

impl<S: Scalar> LeConv<S> {
    fn zeros() -> Self {
        let n = NODE_WIDTH * NODE_WIDTH;
        Self { w_self: vec![S::zero(); n], w_center: vec![S::zero(); n], w_neighbor: vec![S::zero(); n] }
    }

    fn glorot<R: Rng>(rng: &mut R) -> Self {
        let mk = |rng: &mut R| {
            let bound = (6.0 / (2 * NODE_WIDTH) as f64).sqrt();
            (0..NODE_WIDTH * NODE_WIDTH)
                .map(|_| real(rng.random_range(-bound..bound)))
                .collect()
        };
        Self { w_self: mk(rng), w_center: mk(rng), w_neighbor: mk(rng) }
    }
}

/// Shape parameters that vary per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub class_count: usize,
}

/// Every learnable tensor of the model, including the class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S = f64> {
    pub dims: ModelDims,
    /// 8 -> 32 -> 32 over the one-hot semantic block.
    pub sem_encoder: Mlp<S>,
    /// 15 -> 32 -> 32 over the concatenated geometry and lane blocks.
    pub geo_encoder: Mlp<S>,
    pub prop: Vec<LeConv<S>>,
    /// Innermost aggregator MLP, applied per node.
    pub node_mlp: Mlp<S>,
    /// Applied to each instance's node sum.
    pub instance_mlp: Mlp<S>,
    /// Applied to the instance sum; outputs the embedding.
    pub graph_mlp: Mlp<S>,
    /// `class_count * embed_dim`, row per class.
    pub prototypes: Vec<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            dims,
            sem_encoder: Mlp::zeros(SEMANTIC_DIM, ENCODER_OUT, ENCODER_OUT),
            geo_encoder: Mlp::zeros(GEO_IN, ENCODER_OUT, ENCODER_OUT),
            prop: (0..PROP_LAYERS).map(|_| LeConv::zeros()).collect(),
            node_mlp: Mlp::zeros(NODE_WIDTH, AGG_HIDDEN, NODE_WIDTH),
            instance_mlp: Mlp::zeros(NODE_WIDTH, AGG_HIDDEN, NODE_WIDTH),
            graph_mlp: Mlp::zeros(NODE_WIDTH, AGG_HIDDEN, dims.embed_dim),
            prototypes: vec![S::zero(); dims.class_count * dims.embed_dim],
        }
    }

    /// Glorot-uniform weights, zero biases, unit-Gaussian prototypes
    /// normalized to unit length.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let mut p = Self {
            dims,
            sem_encoder: Mlp::glorot(SEMANTIC_DIM, ENCODER_OUT, ENCODER_OUT, rng),
            geo_encoder: Mlp::glorot(GEO_IN, ENCODER_OUT, ENCODER_OUT, rng),
            prop: (0..PROP_LAYERS).map(|_| LeConv::glorot(rng)).collect(),
            node_mlp: Mlp::glorot(NODE_WIDTH, AGG_HIDDEN, NODE_WIDTH, rng),
            instance_mlp: Mlp::glorot(NODE_WIDTH, AGG_HIDDEN, NODE_WIDTH, rng),
            graph_mlp: Mlp::glorot(NODE_WIDTH, AGG_HIDDEN, dims.embed_dim, rng),
            prototypes: (0..dims.class_count * dims.embed_dim)
                .map(|_| real(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
                .collect(),
        };
        for c in 0..dims.class_count {
            let row = &mut p.prototypes[c * dims.embed_dim..(c + 1) * dims.embed_dim];
            let norm = row.iter().map(|v| *v * *v).sum::<S>().sqrt();
            if norm > S::zero() {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// Visit every tensor in a fixed order.
    pub fn visit(&self) -> Vec<(String, &[S])> {
        let mut out: Vec<(String, &[S])> = Vec::with_capacity(26);
        for (name, mlp) in [
            ("sem_encoder", &self.sem_encoder),
            ("geo_encoder", &self.geo_encoder),
        ] {
            out.push((format!("{name}.hidden.weight"), &mlp.hidden.weight));
            out.push((format!("{name}.hidden.bias"), &mlp.hidden.bias));
            out.push((format!("{name}.output.weight"), &mlp.output.weight));
            out.push((format!("{name}.output.bias"), &mlp.output.bias));
        }
        for (l, layer) in self.prop.iter().enumerate() {
            out.push((format!("prop.{l}.w_self"), &layer.w_self));
            out.push((format!("prop.{l}.w_center"), &layer.w_center));
            out.push((format!("prop.{l}.w_neighbor"), &layer.w_neighbor));
        }
        for (name, mlp) in [
            ("node_mlp", &self.node_mlp),
            ("instance_mlp", &self.instance_mlp),
            ("graph_mlp", &self.graph_mlp),
        ] {
            out.push((format!("{name}.hidden.weight"), &mlp.hidden.weight));
            out.push((format!("{name}.hidden.bias"), &mlp.hidden.bias));
            out.push((format!("{name}.output.weight"), &mlp.output.weight));
            out.push((format!("{name}.output.bias"), &mlp.output.bias));
        }
        out.push(("prototypes".into(), &self.prototypes));
        out
    }

    /// Same order as [`ModelParams::visit`], mutably.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut out: Vec<(String, &mut [S])> = Vec::with_capacity(26);
        for (name, mlp) in [
            ("sem_encoder", &mut self.sem_encoder),
            ("geo_encoder", &mut self.geo_encoder),
        ] {
            out.push((format!("{name}.hidden.weight"), mlp.hidden.weight.as_mut_slice()));
            out.push((format!("{name}.hidden.bias"), mlp.hidden.bias.as_mut_slice()));
            out.push((format!("{name}.output.weight"), mlp.output.weight.as_mut_slice()));
            out.push((format!("{name}.output.bias"), mlp.output.bias.as_mut_slice()));
        }
        for (l, layer) in self.prop.iter_mut().enumerate() {
            out.push((format!("prop.{l}.w_self"), layer.w_self.as_mut_slice()));
            out.push((format!("prop.{l}.w_center"), layer.w_center.as_mut_slice()));
            out.push((format!("prop.{l}.w_neighbor"), layer.w_neighbor.as_mut_slice()));
        }
        for (name, mlp) in [
            ("node_mlp", &mut self.node_mlp),
            ("instance_mlp", &mut self.instance_mlp),
            ("graph_mlp", &mut self.graph_mlp),
        ] {
            out.push((format!("{name}.hidden.weight"), mlp.hidden.weight.as_mut_slice()));
            out.push((format!("{name}.hidden.bias"), mlp.hidden.bias.as_mut_slice()));
            out.push((format!("{name}.output.weight"), mlp.output.weight.as_mut_slice()));
            out.push((format!("{name}.output.bias"), mlp.output.bias.as_mut_slice()));
        }
        out.push(("prototypes".into(), self.prototypes.as_mut_slice()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.visit().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.visit() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[S]) {
        let mut offset = 0;
        for (_, t) in self.visit_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }

    /// Accumulate `other` scaled by `alpha` into every tensor.
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        let src = other.visit();
        for ((_, dst), (_, s)) in self.visit_mut().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(s) {
                *d += alpha * v;
            }
        }
    }

    pub fn prototype(&self, class: usize) -> &[S] {
        &self.prototypes[class * self.dims.embed_dim..(class + 1) * self.dims.embed_dim]
    }
}

/// Gradient accumulators shaped exactly like the parameters.
pub type GradientTape<S> = ModelParams<S>;

/// Everything the backward pass needs from a forward evaluation.
pub struct NetCache<S = f64> {
    n: usize,
    sem_in: Vec<S>,
    geo_in: Vec<S>,
    sem_pre: Vec<S>,
    sem_act: Vec<S>,
    geo_pre: Vec<S>,
    geo_act: Vec<S>,
    /// node states per layer: x[0] is the encoder output, x[PROP_LAYERS] the
    /// final node representation
    x: Vec<Vec<S>>,
    pre: Vec<Vec<S>>,
    /// canonical adjacency with edge weights, each list sorted
    adj: Vec<Vec<(usize, S)>>,
    deg: Vec<S>,
    nbr_sum: Vec<Vec<S>>,
    /// instances as (id, canonical node indices), ascending
    instances: Vec<(i64, Vec<usize>)>,
    node_pre: Vec<S>,
    node_act: Vec<S>,
    inst_sum: Vec<S>,
    inst_pre: Vec<S>,
    inst_act: Vec<S>,
    total: Vec<S>,
    graph_pre: Vec<S>,
    graph_act: Vec<S>,
    y_norm: S,
    normalized: bool,
    /// final embedding
    pub z: Vec<S>,
}

/// Forward pass over one graph. Internally the nodes are visited in the
/// canonical (frame, instance) order, so any relabeling of the input produces
/// a bit-identical embedding. Returns the embedding (unit length when
/// `normalize` is set and the pre-image is non-zero) plus the cache for
/// [`backward`].
pub fn forward<S: Scalar>(
    graph: &StGraph<S>,
    params: &ModelParams<S>,
    normalize: bool,
) -> (Vec<S>, NetCache<S>) {
    let n = graph.nodes.len();
    let d = params.dims.embed_dim;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by_key(|&i| (graph.nodes[i].frame, graph.nodes[i].instance, i));
    let mut inv = vec![0usize; n];
    for (k, &orig) in perm.iter().enumerate() {
        inv[orig] = k;
    }

    let mut adj: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
    for &(i, j, w) in &graph.spatial_edges {
        adj[inv[i]].push((inv[j], w));
        adj[inv[j]].push((inv[i], w));
    }
    for &(i, j) in &graph.temporal_edges {
        adj[inv[i]].push((inv[j], S::one()));
        adj[inv[j]].push((inv[i], S::one()));
    }
    for list in &mut adj {
        list.sort_by_key(|&(j, _)| j);
    }

    let mut instances_map: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for (k, &orig) in perm.iter().enumerate() {
        instances_map.entry(graph.nodes[orig].instance).or_default().push(k);
    }
    let instances: Vec<(i64, Vec<usize>)> = instances_map.into_iter().collect();
    let m = instances.len();

    // encoder
    let mut sem_in = vec![S::zero(); n * SEMANTIC_DIM];
    let mut geo_in = vec![S::zero(); n * GEO_IN];
    for (k, &orig) in perm.iter().enumerate() {
        let attr = &graph.nodes[orig].attr;
        sem_in[k * SEMANTIC_DIM..(k + 1) * SEMANTIC_DIM].copy_from_slice(&attr.semantic);
        geo_in[k * GEO_IN..k * GEO_IN + GEOMETRIC_DIM].copy_from_slice(&attr.geometric);
        geo_in[k * GEO_IN + GEOMETRIC_DIM..(k + 1) * GEO_IN].copy_from_slice(&attr.lane);
    }
    let mut sem_pre = vec![S::zero(); n * ENCODER_OUT];
    let mut sem_act = vec![S::zero(); n * ENCODER_OUT];
    let mut sem_out = vec![S::zero(); n * ENCODER_OUT];
    let mut geo_pre = vec![S::zero(); n * ENCODER_OUT];
    let mut geo_act = vec![S::zero(); n * ENCODER_OUT];
    let mut geo_out = vec![S::zero(); n * ENCODER_OUT];
    let mut x0 = vec![S::zero(); n * NODE_WIDTH];
    for k in 0..n {
        let e = ENCODER_OUT;
        params.sem_encoder.forward(
            &sem_in[k * SEMANTIC_DIM..(k + 1) * SEMANTIC_DIM],
            &mut sem_pre[k * e..(k + 1) * e],
            &mut sem_act[k * e..(k + 1) * e],
            &mut sem_out[k * e..(k + 1) * e],
        );
        params.geo_encoder.forward(
            &geo_in[k * GEO_IN..(k + 1) * GEO_IN],
            &mut geo_pre[k * e..(k + 1) * e],
            &mut geo_act[k * e..(k + 1) * e],
            &mut geo_out[k * e..(k + 1) * e],
        );
        // node state is [geo', sem']
        x0[k * NODE_WIDTH..k * NODE_WIDTH + e].copy_from_slice(&geo_out[k * e..(k + 1) * e]);
        x0[k * NODE_WIDTH + e..(k + 1) * NODE_WIDTH].copy_from_slice(&sem_out[k * e..(k + 1) * e]);
    }

    // propagation: sum_j e_ij (x_i W_c - x_j W_n) is evaluated as
    // deg_i (x_i W_c) - (sum_j e_ij x_j) W_n
    let mut deg = vec![S::zero(); n];
    for k in 0..n {
        deg[k] = adj[k].iter().map(|&(_, w)| w).sum();
    }
    let w = NODE_WIDTH;
    let mut x = vec![x0];
    let mut pre = Vec::new();
    let mut nbr_sum_layers = Vec::new();
    for layer in &params.prop {
        let prev = x.last().unwrap();
        let mut nbr_sum = vec![S::zero(); n * w];
        for k in 0..n {
            let dst = k * w;
            for &(j, e) in &adj[k] {
                let src = &prev[j * w..(j + 1) * w];
                for (t, &s) in nbr_sum[dst..dst + w].iter_mut().zip(src) {
                    *t += e * s;
                }
            }
        }
        let mut layer_pre = vec![S::zero(); n * w];
        let mut layer_out = vec![S::zero(); n * w];
        let mut self_term = vec![S::zero(); w];
        let mut center_term = vec![S::zero(); w];
        let mut nbr_term = vec![S::zero(); w];
        for k in 0..n {
            let xi = &prev[k * w..(k + 1) * w];
            matvec(&layer.w_self, xi, &mut self_term);
            matvec(&layer.w_center, xi, &mut center_term);
            matvec(&layer.w_neighbor, &nbr_sum[k * w..(k + 1) * w], &mut nbr_term);
            let p = &mut layer_pre[k * w..(k + 1) * w];
            for i in 0..w {
                p[i] = self_term[i] + deg[k] * center_term[i] - nbr_term[i];
            }
            linear::relu_into(p, &mut layer_out[k * w..(k + 1) * w]);
        }
        pre.push(layer_pre);
        nbr_sum_layers.push(nbr_sum);
        x.push(layer_out);
    }

    // aggregator
    let x_last = x.last().unwrap().clone();
    let mut node_pre = vec![S::zero(); n * AGG_HIDDEN];
    let mut node_act = vec![S::zero(); n * AGG_HIDDEN];
    let mut node_out = vec![S::zero(); n * w];
    for k in 0..n {
        params.node_mlp.forward(
            &x_last[k * w..(k + 1) * w],
            &mut node_pre[k * AGG_HIDDEN..(k + 1) * AGG_HIDDEN],
            &mut node_act[k * AGG_HIDDEN..(k + 1) * AGG_HIDDEN],
            &mut node_out[k * w..(k + 1) * w],
        );
    }
    let mut inst_sum = vec![S::zero(); m * w];
    let mut inst_pre = vec![S::zero(); m * AGG_HIDDEN];
    let mut inst_act = vec![S::zero(); m * AGG_HIDDEN];
    let mut inst_out = vec![S::zero(); m * w];
    let mut total = vec![S::zero(); w];
    for (u, (_, members)) in instances.iter().enumerate() {
        for &k in members {
            for (t, &s) in inst_sum[u * w..(u + 1) * w].iter_mut().zip(&node_out[k * w..(k + 1) * w]) {
                *t += s;
            }
        }
        params.instance_mlp.forward(
            &inst_sum[u * w..(u + 1) * w],
            &mut inst_pre[u * AGG_HIDDEN..(u + 1) * AGG_HIDDEN],
            &mut inst_act[u * AGG_HIDDEN..(u + 1) * AGG_HIDDEN],
            &mut inst_out[u * w..(u + 1) * w],
        );
        for (t, &s) in total.iter_mut().zip(&inst_out[u * w..(u + 1) * w]) {
            *t += s;
        }
    }
    let mut graph_pre = vec![S::zero(); AGG_HIDDEN];
    let mut graph_act = vec![S::zero(); AGG_HIDDEN];
    let mut y = vec![S::zero(); d];
    params.graph_mlp.forward(&total, &mut graph_pre, &mut graph_act, &mut y);

    let y_norm = y.iter().map(|v| *v * *v).sum::<S>().sqrt();
    let z: Vec<S> = if normalize && y_norm > S::zero() {
        y.iter().map(|v| *v / y_norm).collect()
    } else {
        y.clone()
    };

    let cache = NetCache {
        n,
        sem_in,
        geo_in,
        sem_pre,
        sem_act,
        geo_pre,
        geo_act,
        x,
        pre,
        adj,
        deg,
        nbr_sum: nbr_sum_layers,
        instances,
        node_pre,
        node_act,
        inst_sum,
        inst_pre,
        inst_act,
        total,
        graph_pre,
        graph_act,
        y_norm,
        normalized: normalize && y_norm > S::zero(),
        z: z.clone(),
    };
    (z, cache)
}

/// `out = x W` for a row-major square or rectangular weight.
fn matvec<S: Scalar>(weight: &[S], x: &[S], out: &mut [S]) {
    let cols = out.len();
    out.iter_mut().for_each(|v| *v = S::zero());
    for (i, &xi) in x.iter().enumerate() {
        if xi.is_zero() {
            continue;
        }
        let row = &weight[i * cols..(i + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
}

/// `d_x += d_out W^T`, `d_w += outer(x, d_out)`.
fn matvec_backward<S: Scalar>(
    weight: &[S],
    x: &[S],
    d_out: &[S],
    d_weight: &mut [S],
    d_x: Option<&mut [S]>,
) {
    let cols = d_out.len();
    for (i, &xi) in x.iter().enumerate() {
        if !xi.is_zero() {
            let row = &mut d_weight[i * cols..(i + 1) * cols];
            for (g, &d) in row.iter_mut().zip(d_out) {
                *g += xi * d;
            }
        }
    }
    if let Some(d_x) = d_x {
        for (i, dx) in d_x.iter_mut().enumerate() {
            let row = &weight[i * cols..(i + 1) * cols];
            let mut acc = S::zero();
            for (&w, &d) in row.iter().zip(d_out) {
                acc += w * d;
            }
            *dx += acc;
        }
    }
}

/// Exact gradients of a scalar loss with gradient `d_z` w.r.t. the cached
/// forward pass; accumulates into `tape` (prototype gradients are the loss
/// side's business and are not touched here).
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    cache: &NetCache<S>,
    d_z: &[S],
    tape: &mut GradientTape<S>,
) {
    let n = cache.n;
    let w = NODE_WIDTH;
    let d = params.dims.embed_dim;
    debug_assert_eq!(d_z.len(), d);

    // through the normalization z = y / |y|
    let mut d_y = vec![S::zero(); d];
    if cache.normalized {
        let dot: S = d_z.iter().zip(&cache.z).map(|(&a, &b)| a * b).sum();
        for i in 0..d {
            d_y[i] = (d_z[i] - dot * cache.z[i]) / cache.y_norm;
        }
    } else {
        d_y.copy_from_slice(d_z);
    }

    // graph-level MLP
    let mut d_total = vec![S::zero(); w];
    let mut scratch = vec![S::zero(); AGG_HIDDEN];
    params.graph_mlp.backward(
        &cache.total,
        &cache.graph_pre,
        &cache.graph_act,
        &d_y,
        &mut tape.graph_mlp,
        Some(&mut d_total),
        &mut scratch,
    );

    // instance level: every instance output receives d_total
    let m = cache.instances.len();
    let mut d_node_out = vec![S::zero(); n * w];
    for u in 0..m {
        let mut d_inst_sum = vec![S::zero(); w];
        params.instance_mlp.backward(
            &cache.inst_sum[u * w..(u + 1) * w],
            &cache.inst_pre[u * AGG_HIDDEN..(u + 1) * AGG_HIDDEN],
            &cache.inst_act[u * AGG_HIDDEN..(u + 1) * AGG_HIDDEN],
            &d_total,
            &mut tape.instance_mlp,
            Some(&mut d_inst_sum),
            &mut scratch,
        );
        for &k in &cache.instances[u].1 {
            for (dst, &s) in d_node_out[k * w..(k + 1) * w].iter_mut().zip(&d_inst_sum) {
                *dst += s;
            }
        }
    }

    // per-node MLP back to the final node states
    let mut d_x = vec![S::zero(); n * w];
    for k in 0..n {
        let mut d_xk = vec![S::zero(); w];
        params.node_mlp.backward(
            &cache.x[PROP_LAYERS][k * w..(k + 1) * w],
            &cache.node_pre[k * AGG_HIDDEN..(k + 1) * AGG_HIDDEN],
            &cache.node_act[k * AGG_HIDDEN..(k + 1) * AGG_HIDDEN],
            &d_node_out[k * w..(k + 1) * w],
            &mut tape.node_mlp,
            Some(&mut d_xk),
            &mut scratch,
        );
        d_x[k * w..(k + 1) * w].copy_from_slice(&d_xk);
    }

    // propagation layers in reverse
    for l in (0..PROP_LAYERS).rev() {
        let layer = &params.prop[l];
        let grad = &mut tape.prop[l];
        let prev = &cache.x[l];
        let mut d_prev = vec![S::zero(); n * w];
        let mut d_pre = vec![S::zero(); w];
        let mut nbr_path = vec![S::zero(); w];
        for k in 0..n {
            let pre = &cache.pre[l][k * w..(k + 1) * w];
            for i in 0..w {
                d_pre[i] = if pre[i] > S::zero() { d_x[k * w + i] } else { S::zero() };
            }
            let xi = &prev[k * w..(k + 1) * w];

            matvec_backward(
                &layer.w_self,
                xi,
                &d_pre,
                &mut grad.w_self,
                Some(&mut d_prev[k * w..(k + 1) * w]),
            );

            // center path carries the degree factor
            let mut d_center = vec![S::zero(); w];
            for i in 0..w {
                d_center[i] = cache.deg[k] * d_pre[i];
            }
            matvec_backward(
                &layer.w_center,
                xi,
                &d_center,
                &mut grad.w_center,
                Some(&mut d_prev[k * w..(k + 1) * w]),
            );

            // neighbor path: pre -= (sum_j e_ij x_j) W_n
            let mut d_nbr = vec![S::zero(); w];
            for i in 0..w {
                d_nbr[i] = -d_pre[i];
            }
            let nbr = &cache.nbr_sum[l][k * w..(k + 1) * w];
            matvec_backward(&layer.w_neighbor, nbr, &d_nbr, &mut grad.w_neighbor, None);
            // d(sum_j e_ij x_j) = d_nbr W_n^T, spread over the neighbors
            nbr_path.iter_mut().for_each(|v| *v = S::zero());
            matvec_backward_input_only(&layer.w_neighbor, &d_nbr, &mut nbr_path);
            for &(j, e) in &cache.adj[k] {
                for (dst, &v) in d_prev[j * w..(j + 1) * w].iter_mut().zip(&nbr_path) {
                    *dst += e * v;
                }
            }
        }
        d_x = d_prev;
    }

    // encoder: node state was [geo', sem']
    let e = ENCODER_OUT;
    for k in 0..n {
        let d_geo = &d_x[k * w..k * w + e];
        let d_sem = &d_x[k * w + e..(k + 1) * w];
        params.geo_encoder.backward(
            &cache.geo_in[k * GEO_IN..(k + 1) * GEO_IN],
            &cache.geo_pre[k * e..(k + 1) * e],
            &cache.geo_act[k * e..(k + 1) * e],
            d_geo,
            &mut tape.geo_encoder,
            None,
            &mut scratch[..e],
        );
        params.sem_encoder.backward(
            &cache.sem_in[k * SEMANTIC_DIM..(k + 1) * SEMANTIC_DIM],
            &cache.sem_pre[k * e..(k + 1) * e],
            &cache.sem_act[k * e..(k + 1) * e],
            d_sem,
            &mut tape.sem_encoder,
            None,
            &mut scratch[..e],
        );
    }
}

/// `d_x += d_out W^T` without touching weight gradients.
fn matvec_backward_input_only<S: Scalar>(weight: &[S], d_out: &[S], d_x: &mut [S]) {
    let cols = d_out.len();
    for (i, dx) in d_x.iter_mut().enumerate() {
        let row = &weight[i * cols..(i + 1) * cols];
        let mut acc = S::zero();
        for (&w, &d) in row.iter().zip(d_out) {
            acc += w * d;
        }
        *dx += acc;
    }
}

/// Mean of the labeled embeddings per class, each normalized to unit length;
/// a drop-in prototype matrix for evaluation without trained prototypes.
pub fn centroid_prototypes<S: Scalar>(
    embeddings: &[Vec<S>],
    labels: &[Option<usize>],
    dims: ModelDims,
) -> Vec<S> {
    let d = dims.embed_dim;
    let mut sums = vec![S::zero(); dims.class_count * d];
    let mut counts = vec![0usize; dims.class_count];
    for (z, label) in embeddings.iter().zip(labels) {
        if let Some(c) = *label {
            counts[c] += 1;
            for (dst, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(z) {
                *dst += v;
            }
        }
    }
    for c in 0..dims.class_count {
        let row = &mut sums[c * d..(c + 1) * d];
        if counts[c] > 0 {
            let inv = S::one() / count(counts[c]);
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let norm = row.iter().map(|v| *v * *v).sum::<S>().sqrt();
        if norm > S::zero() {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::ingest::{DetectedObject, TrackedClip};
    use crate::stgraph::{build_graph, GraphConfig};
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_clip(rng: &mut ChaCha8Rng, max_nodes: usize) -> TrackedClip {
        let frames = rng.random_range(1..5usize);
        let mut objects = Vec::new();
        let instances = rng.random_range(1..4usize);
        'outer: for inst in 0..instances {
            for f in 0..frames {
                if objects.len() >= max_nodes {
                    break 'outer;
                }
                if rng.random_range(0.0..1.0) < 0.75 {
                    objects.push(DetectedObject {
                        frame: f,
                        instance: inst as i64,
                        class: rng.random_range(0..8u8),
                        bbox: BoundingBox::new(
                            rng.random_range(0.0..80.0),
                            rng.random_range(0.0..80.0),
                            rng.random_range(2.0..18.0),
                            rng.random_range(2.0..18.0),
                        ),
                    });
                }
            }
        }
        let lanes = (0..frames)
            .map(|_| {
                (0..rng.random_range(0..6usize))
                    .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                    .collect()
            })
            .collect();
        TrackedClip {
            clip_id: "rand".into(),
            width: 100.0,
            height: 100.0,
            frames,
            objects,
            lanes,
            label: None,
        }
    }

    fn dims() -> ModelDims {
        ModelDims { embed_dim: 16, class_count: 3 }
    }

    fn random_params(seed: u64) -> ModelParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(dims(), &mut rng);
        // randomize biases too so no pre-activation sits exactly on the kink
        for (_, t) in p.visit_mut() {
            for v in t.iter_mut() {
                if *v == 0.0 {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
        p
    }

    #[test]
    fn embedding_has_unit_norm_when_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(9);
        for _ in 0..20 {
            let clip = random_clip(&mut rng, 12);
            let g = build_graph(&clip, &GraphConfig::default()).unwrap();
            let (z, _) = forward(&g, &params, true);
            let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = random_params(10);
        let clip = random_clip(&mut rng, 12);
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let (z1, _) = forward(&g, &params, true);
        let (z2, _) = forward(&g, &params, true);
        assert_eq!(z1, z2);
    }

    #[test]
    fn node_relabeling_leaves_the_embedding_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(11);
        for round in 0..30 {
            let clip = random_clip(&mut rng, 12);
            let g = build_graph(&clip, &GraphConfig::default()).unwrap();
            if g.nodes.is_empty() {
                continue;
            }
            let (z1, _) = forward(&g, &params, true);

            // permute node storage order and remap edges/instance map
            let n = g.nodes.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut inv = vec![0usize; n];
            for (new, &old) in order.iter().enumerate() {
                inv[old] = new;
            }
            let permuted = StGraph {
                clip_id: g.clip_id.clone(),
                width: g.width,
                height: g.height,
                frames: g.frames,
                nodes: order.iter().map(|&old| g.nodes[old].clone()).collect(),
                spatial_edges: g
                    .spatial_edges
                    .iter()
                    .map(|&(i, j, w)| (inv[i], inv[j], w))
                    .collect(),
                temporal_edges: g.temporal_edges.iter().map(|&(i, j)| (inv[i], inv[j])).collect(),
                instance_map: g
                    .instance_map
                    .iter()
                    .map(|(id, v)| (*id, v.iter().map(|&i| inv[i]).collect()))
                    .collect(),
                label: g.label,
            };
            let (z2, _) = forward(&permuted, &params, true);
            assert_eq!(z1, z2, "round {round}");
        }
    }

    #[test]
    fn empty_graph_embeds_through_the_graph_mlp_alone() {
        let params = random_params(12);
        let clip = TrackedClip {
            clip_id: "empty".into(),
            width: 100.0,
            height: 100.0,
            frames: 4,
            objects: vec![],
            lanes: vec![Vec::new(); 4],
            label: None,
        };
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let (z, _) = forward(&g, &params, false);
        // same result by hand: graph_mlp applied to the zero vector
        let mut pre = vec![0.0; AGG_HIDDEN];
        let mut act = vec![0.0; AGG_HIDDEN];
        let mut want = vec![0.0; dims().embed_dim];
        params.graph_mlp.forward(&vec![0.0; NODE_WIDTH], &mut pre, &mut act, &mut want);
        assert_eq!(z, want);
    }

    #[test]
    fn propagation_outputs_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = random_params(13);
        let clip = random_clip(&mut rng, 12);
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let (_, cache) = forward(&g, &params, true);
        for layer in 1..=PROP_LAYERS {
            assert!(cache.x[layer].iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn isolated_node_uses_only_the_self_weight() {
        let params = random_params(14);
        let clip = TrackedClip {
            clip_id: "iso".into(),
            width: 100.0,
            height: 100.0,
            frames: 1,
            objects: vec![DetectedObject {
                frame: 0,
                instance: 1,
                class: 2,
                bbox: BoundingBox::new(10.0, 10.0, 5.0, 5.0),
            }],
            lanes: vec![Vec::new()],
            label: None,
        };
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let (_, cache) = forward(&g, &params, true);
        // first layer pre-activation must equal x0 W_self
        let mut want = vec![0.0; NODE_WIDTH];
        matvec(&params.prop[0].w_self, &cache.x[0][..NODE_WIDTH], &mut want);
        assert_eq!(&cache.pre[0][..NODE_WIDTH], want.as_slice());
    }

    #[test]
    fn equal_features_cancel_in_the_difference_term() {
        // two nodes, unit edge weight, W_center == W_neighbor, zero W_self:
        // the pre-activation is deg * x W_c - (x W_c) = 0
        let mut params = ModelParams::<f64>::zeros(dims());
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let shared: Vec<f64> =
            (0..NODE_WIDTH * NODE_WIDTH).map(|_| rng.random_range(-0.5..0.5)).collect();
        params.prop[0].w_center = shared.clone();
        params.prop[0].w_neighbor = shared;

        let n = 2;
        let w = NODE_WIDTH;
        let x0: Vec<f64> = (0..w).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut x = vec![0.0; n * w];
        x[..w].copy_from_slice(&x0);
        x[w..].copy_from_slice(&x0);

        // evaluate the first propagation layer by hand
        let adj = vec![vec![(1usize, 1.0f64)], vec![(0usize, 1.0f64)]];
        for k in 0..n {
            let mut nbr = vec![0.0; w];
            for &(j, e) in &adj[k] {
                for i in 0..w {
                    nbr[i] += e * x[j * w + i];
                }
            }
            let mut self_term = vec![0.0; w];
            let mut center = vec![0.0; w];
            let mut nbr_term = vec![0.0; w];
            matvec(&params.prop[0].w_self, &x[k * w..(k + 1) * w], &mut self_term);
            matvec(&params.prop[0].w_center, &x[k * w..(k + 1) * w], &mut center);
            matvec(&params.prop[0].w_neighbor, &nbr, &mut nbr_term);
            for i in 0..w {
                let pre: f64 = self_term[i] + 1.0 * center[i] - nbr_term[i];
                assert_relative_eq!(pre, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn masked_node_sends_no_gradient_into_encoder_weights() {
        let params = random_params(16);
        let clip = TrackedClip {
            clip_id: "mask".into(),
            width: 100.0,
            height: 100.0,
            frames: 1,
            objects: vec![DetectedObject {
                frame: 0,
                instance: 1,
                class: 2,
                bbox: BoundingBox::new(10.0, 10.0, 5.0, 5.0),
            }],
            lanes: vec![Vec::new()],
            label: None,
        };
        let mut g = build_graph(&clip, &GraphConfig::default()).unwrap();
        g.nodes[0].attr = crate::stgraph::NodeAttr::zeros();
        let (z, cache) = forward(&g, &params, true);
        let d_z = vec![1.0; z.len()];
        let mut tape = params.zeros_like();
        backward(&params, &cache, &d_z, &mut tape);
        assert!(tape.sem_encoder.hidden.weight.iter().all(|v| *v == 0.0));
        assert!(tape.geo_encoder.hidden.weight.iter().all(|v| *v == 0.0));
        // bias gradients still flow
        assert!(tape.sem_encoder.hidden.bias.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn doubling_the_output_gradient_doubles_the_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = random_params(17);
        let clip = random_clip(&mut rng, 10);
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let (z, cache) = forward(&g, &params, true);
        let d1: Vec<f64> = (0..z.len()).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        let d2: Vec<f64> = d1.iter().map(|v| 2.0 * v).collect();
        let mut t1 = params.zeros_like();
        let mut t2 = params.zeros_like();
        backward(&params, &cache, &d1, &mut t1);
        backward(&params, &cache, &d2, &mut t2);
        for ((_, a), (_, b)) in t1.visit().into_iter().zip(t2.visit()) {
            for (x, y) in a.iter().zip(b) {
                assert_relative_eq!(2.0 * x, *y, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences_on_a_small_graph() {
        // full-model check against central differences of z . d for a fixed d
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = random_params(18);
        let clip = random_clip(&mut rng, 6);
        let g = build_graph(&clip, &GraphConfig::default()).unwrap();
        let d_z: Vec<f64> = (0..dims().embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

        let objective = |p: &ModelParams<f64>| -> f64 {
            let (z, _) = forward(&g, p, true);
            z.iter().zip(&d_z).map(|(a, b)| a * b).sum()
        };

        let (_, cache) = forward(&g, &params, true);
        let mut tape = params.zeros_like();
        backward(&params, &cache, &d_z, &mut tape);
        let analytic = tape.flatten();

        let flat = params.flatten();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        // check a deterministic subsample of parameters (full sweep is the
        // acceptance suite's job)
        let step = (flat.len() / 600).max(1);
        let mut probe = params.clone();
        for i in (0..flat.len()).step_by(step) {
            let mut fp = flat.clone();
            fp[i] += eps;
            probe.assign_flat(&fp);
            let up = objective(&probe);
            fp[i] = flat[i] - eps;
            probe.assign_flat(&fp);
            let down = objective(&probe);
            fp[i] = flat[i];
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max((fd - analytic[i]).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn f32_forward_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params32: ModelParams<f32> =
            ModelParams::init(ModelDims { embed_dim: 8, class_count: 2 }, &mut rng);
        let clip = random_clip(&mut rng, 10);
        let clip32 = TrackedClip::<f32> {
            clip_id: clip.clip_id.clone(),
            width: clip.width as f32,
            height: clip.height as f32,
            frames: clip.frames,
            objects: clip
                .objects
                .iter()
                .map(|o| DetectedObject {
                    frame: o.frame,
                    instance: o.instance,
                    class: o.class,
                    bbox: BoundingBox::new(
                        o.bbox.x_min as f32,
                        o.bbox.y_min as f32,
                        o.bbox.width as f32,
                        o.bbox.height as f32,
                    ),
                })
                .collect(),
            lanes: clip
                .lanes
                .iter()
                .map(|f| f.iter().map(|&(x, y)| (x as f32, y as f32)).collect())
                .collect(),
            label: None,
        };
        let g = build_graph(&clip32, &GraphConfig::default()).unwrap();
        let (z, _) = forward(&g, &params32, true);
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fuzzed_forward_never_produces_non_finite_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = random_params(19);
        for _ in 0..1000 {
            let clip = random_clip(&mut rng, 12);
            let g = build_graph(&clip, &GraphConfig::default()).unwrap();
            let (z, _) = forward(&g, &params, true);
            assert!(z.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn centroid_prototypes_average_and_normalize() {
        let d = ModelDims { embed_dim: 2, class_count: 2 };
        let embeddings = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 4.0]];
        let labels = vec![Some(0), Some(0), Some(1)];
        let protos = centroid_prototypes(&embeddings, &labels, d);
        let inv = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(protos[0], inv, max_relative = 1e-12);
        assert_relative_eq!(protos[1], inv, max_relative = 1e-12);
        assert_relative_eq!(protos[2], 0.6, max_relative = 1e-12);
        assert_relative_eq!(protos[3], 0.8, max_relative = 1e-12);
    }
}
