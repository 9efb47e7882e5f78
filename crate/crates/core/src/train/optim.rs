//! Adam with bias correction and the cosine-annealed learning rate.

use crate::error::{Error, Result};
use crate::net::{GradientTape, ModelParams};
use crate::scalar::{real, Scalar};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates, flat over the fixed parameter order.
#[derive(Debug, Clone)]
pub struct AdamState<S = f64> {
    pub step: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(param_count: usize) -> Self {
        Self { step: 0, m: vec![S::zero(); param_count], v: vec![S::zero(); param_count] }
    }
}

/// One Adam update. Gradients are checked for non-finite values first; the
/// error names the offending tensor and the parameters stay untouched.
pub fn adam_step<S: Scalar>(
    params: &mut ModelParams<S>,
    grads: &GradientTape<S>,
    lr: f64,
    state: &mut AdamState<S>,
) -> Result<()> {
    for (name, tensor) in grads.visit() {
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let beta1 = real::<S>(BETA1);
    let beta2 = real::<S>(BETA2);
    let eps = real::<S>(EPS);
    let bc1 = S::one() - beta1.powi(t);
    let bc2 = S::one() - beta2.powi(t);
    let lr = real::<S>(lr);

    let grad_tensors = grads.visit();
    let mut offset = 0;
    for ((_, p), (_, g)) in params.visit_mut().into_iter().zip(grad_tensors) {
        for (k, (pv, &gv)) in p.iter_mut().zip(g.iter()).enumerate() {
            let i = offset + k;
            state.m[i] = beta1 * state.m[i] + (S::one() - beta1) * gv;
            state.v[i] = beta2 * state.v[i] + (S::one() - beta2) * gv * gv;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += g.len();
    }
    Ok(())
}

/// Cosine annealing from `lr_init` at step 0 down to `lr_min` at
/// `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return lr_min;
    }
    let progress = step as f64 / total_steps as f64;
    lr_min + (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelDims;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_params(seed: u64) -> ModelParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(ModelDims { embed_dim: 4, class_count: 2 }, &mut rng)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = small_params(1);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(params.param_count());
        adam_step(&mut params, &grads, 0.01, &mut state).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_against_the_gradient_sign() {
        let mut params = small_params(2);
        let before = params.flatten();
        let mut grads = params.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (_, t) in grads.visit_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let g = grads.flatten();
        let mut state = AdamState::new(params.param_count());
        adam_step(&mut params, &grads, 0.01, &mut state).unwrap();
        let after = params.flatten();
        for i in 0..before.len() {
            if g[i] != 0.0 {
                // with bias correction the first step is -lr * g / (|g| + eps)
                let want = before[i] - 0.01 * g[i] / (g[i].abs() + 1e-8);
                assert_relative_eq!(after[i], want, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_trajectories() {
        let run = || {
            let mut params = small_params(4);
            let mut state = AdamState::new(params.param_count());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..5 {
                let mut grads = params.zeros_like();
                for (_, t) in grads.visit_mut() {
                    for v in t.iter_mut() {
                        *v = rng.random_range(-1.0..1.0);
                    }
                }
                adam_step(&mut params, &grads, 0.005, &mut state).unwrap();
            }
            params.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut params = small_params(6);
        let mut grads = params.zeros_like();
        grads.prototypes[0] = f64::NAN;
        let mut state = AdamState::new(params.param_count());
        let err = adam_step(&mut params, &grads, 0.01, &mut state).unwrap_err();
        match err {
            Error::NonFiniteGradient { tensor } => assert_eq!(tensor, "prototypes"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn cosine_schedule_hits_its_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 0.01, 0.0), 0.01);
        assert_eq!(cosine_lr(100, 100, 0.01, 0.0), 0.0);
        assert_relative_eq!(cosine_lr(50, 100, 0.01, 0.002), (0.01 + 0.002) / 2.0);
    }
}
