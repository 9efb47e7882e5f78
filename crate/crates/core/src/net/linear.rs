//! Dense layers and the two-layer MLP block used throughout the network.

use crate::scalar::{real, Scalar};
use rand::Rng;

/// Fully-connected layer; the weight is row-major by input index, so a
/// forward pass accumulates scaled weight rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S = f64> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in_dim * out_dim` values, `weight[i * out_dim + j]`.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![S::zero(); in_dim * out_dim], bias: vec![S::zero(); out_dim] }
    }

    /// Uniform initialization in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| real(rng.random_range(-bound..bound)))
            .collect();
        Self { in_dim, out_dim, weight, bias: vec![S::zero(); out_dim] }
    }

    /// `out = x W + b`.
    pub fn forward(&self, x: &[S], out: &mut [S]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }

    /// Accumulate gradients for `out = x W + b`: the weight/bias gradients go
    /// into `grad`, and the input gradient (if requested) is accumulated into
    /// `d_x`.
    pub fn backward(&self, x: &[S], d_out: &[S], grad: &mut Linear<S>, d_x: Option<&mut [S]>) {
        for (i, &xi) in x.iter().enumerate() {
            if !xi.is_zero() {
                let row = &mut grad.weight[i * self.out_dim..(i + 1) * self.out_dim];
                for (g, &d) in row.iter_mut().zip(d_out) {
                    *g += xi * d;
                }
            }
        }
        for (g, &d) in grad.bias.iter_mut().zip(d_out) {
            *g += d;
        }
        if let Some(d_x) = d_x {
            for (i, dx) in d_x.iter_mut().enumerate() {
                let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
                let mut acc = S::zero();
                for (&w, &d) in row.iter().zip(d_out) {
                    acc += w * d;
                }
                *dx += acc;
            }
        }
    }
}

/// Two dense layers with a ReLU between them; the output stays linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S = f64> {
    pub hidden: Linear<S>,
    pub output: Linear<S>,
}

impl<S: Scalar> Mlp<S> {
    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self { hidden: Linear::zeros(in_dim, hidden_dim), output: Linear::zeros(hidden_dim, out_dim) }
    }

    pub fn glorot<R: Rng>(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::glorot(in_dim, hidden_dim, rng),
            output: Linear::glorot(hidden_dim, out_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    /// Forward pass writing the hidden pre-activation, the activated hidden
    /// state, and the output into caller-provided buffers.
    pub fn forward(&self, x: &[S], pre: &mut [S], act: &mut [S], out: &mut [S]) {
        self.hidden.forward(x, pre);
        for (a, &p) in act.iter_mut().zip(pre.iter()) {
            *a = p.max(S::zero());
        }
        self.output.forward(act, out);
    }

    /// Backward pass matching [`Mlp::forward`]; accumulates into `grad` and
    /// optionally into the input gradient.
    pub fn backward(
        &self,
        x: &[S],
        pre: &[S],
        act: &[S],
        d_out: &[S],
        grad: &mut Mlp<S>,
        d_x: Option<&mut [S]>,
        scratch: &mut [S],
    ) {
        debug_assert_eq!(scratch.len(), self.hidden.out_dim);
        scratch.iter_mut().for_each(|v| *v = S::zero());
        self.output.backward(act, d_out, &mut grad.output, Some(scratch));
        for (s, &p) in scratch.iter_mut().zip(pre) {
            if p <= S::zero() {
                *s = S::zero();
            }
        }
        self.hidden.backward(x, scratch, &mut grad.hidden, d_x);
    }
}

/// ReLU applied out of place.
pub fn relu_into<S: Scalar>(src: &[S], dst: &mut [S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = s.max(S::zero());
    }
}
