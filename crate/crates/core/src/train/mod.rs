//! Batch sampling, the contrastive loss, and the optimization loop.

mod batch;
mod loss;
mod optim;

pub use batch::{make_batch, Batch, LearningMode};
pub use loss::{sscl_loss, AnchorSpec, EmbRef, LossBreakdown, LossConfig};
pub use optim::{adam_step, cosine_lr, AdamState};

use crate::augment::AugmentConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::classification_map;
use crate::net::{backward, forward, GradientTape, ModelDims, ModelParams, NetCache};
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Everything one training run needs to know.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: LearningMode,
    /// Contrastive flavor the unsupervised mode runs with.
    pub unsup_flavor: LearningMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub margin_fraction: f64,
    /// Loss weight of unlabeled anchors, in (0, 1].
    pub unlabeled_weight: f64,
    pub temperature: f64,
    pub normalize: bool,
    pub seed: u64,
    pub embed_dim: usize,
    /// Epoch interval for validation scoring.
    pub eval_every: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: LearningMode::Scl,
            unsup_flavor: LearningMode::Scl,
            batch_size: 16,
            epochs: 30,
            lr_init: 0.01,
            lr_min: 0.0,
            margin_fraction: 0.25,
            unlabeled_weight: 1.0,
            temperature: 1.0,
            normalize: true,
            seed: 0,
            embed_dim: 64,
            eval_every: 1,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.lr_init <= 0.0 {
            return Err(Error::config("lr_init must be positive"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_weight) || self.unlabeled_weight == 0.0 {
            return Err(Error::config("unlabeled_weight must lie in (0, 1]"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if matches!(self.unsup_flavor, LearningMode::Fsl | LearningMode::Unsup) {
            return Err(Error::config("unsup_flavor must be scl or gcl"));
        }
        self.augment.validate()
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            normalize: self.normalize,
            unlabeled_weight: self.unlabeled_weight,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean weighted batch loss over the epoch.
    pub loss: f64,
    /// Mean gradient norm over the epoch.
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_map: Option<f64>,
}

/// Why a run stopped early.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub epoch: usize,
    pub detail: String,
}

pub struct TrainOutcome<S = f64> {
    /// Final parameters, or the last finite ones if the run diverged.
    pub params: ModelParams<S>,
    pub metrics: Vec<EpochRecord>,
    pub diverged: Option<Divergence>,
}

/// Run the optimization loop: sample a batch, embed every member (and view),
/// evaluate the loss, backpropagate, and apply one Adam update per step, with
/// the learning rate cosine-annealed over all steps. Deterministic for a
/// fixed seed regardless of thread count.
pub fn train_run<S: Scalar>(
    dataset: &Dataset<S>,
    val: Option<&Dataset<S>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }

    // the unsupervised mode trains on a label-free copy, making label access
    // structurally impossible
    let stripped;
    let working: &Dataset<S> = if cfg.mode == LearningMode::Unsup {
        stripped = dataset.stripped();
        &stripped
    } else {
        dataset
    };

    let pool_len = match cfg.mode {
        LearningMode::Fsl => working.labeled.len(),
        _ => working.len(),
    };
    if cfg.mode == LearningMode::Fsl && pool_len == 0 {
        return Err(Error::config("the fully-supervised mode needs labeled data"));
    }
    if cfg.batch_size > pool_len {
        return Err(Error::config(format!(
            "batch size {} exceeds the available pool of {pool_len}",
            cfg.batch_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = ModelDims { embed_dim: cfg.embed_dim, class_count: working.class_count };
    let mut params = ModelParams::init(dims, &mut rng);
    let mut adam = AdamState::new(params.param_count());

    let batches_per_epoch = (pool_len / cfg.batch_size).max(1);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let epoch_lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_min);
        for _ in 0..batches_per_epoch {
            let lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_min);
            let batch = make_batch(working, cfg, &mut rng)?;
            match train_step(&mut params, working, &batch, cfg, lr, &mut adam) {
                Ok(step) => {
                    loss_sum += step.loss;
                    norm_sum += step.grad_norm;
                }
                Err(StepFailure::Diverged(detail)) => {
                    return Ok(TrainOutcome {
                        params,
                        metrics,
                        diverged: Some(Divergence { epoch, detail }),
                    });
                }
                Err(StepFailure::Fatal(e)) => return Err(e),
            }
            global_step += 1;
        }

        let val_map = match (val, cfg.mode) {
            (Some(val), mode)
                if mode != LearningMode::Unsup && epoch % cfg.eval_every == 0 =>
            {
                validation_map(&params, val, cfg)
            }
            _ => None,
        };
        metrics.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            loss: loss_sum / batches_per_epoch as f64,
            grad_norm: norm_sum / batches_per_epoch as f64,
            val_map,
        });
    }

    Ok(TrainOutcome { params, metrics, diverged: None })
}

struct StepStats {
    loss: f64,
    grad_norm: f64,
}

enum StepFailure {
    Diverged(String),
    Fatal(Error),
}

impl From<Error> for StepFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteGradient { tensor } => {
                StepFailure::Diverged(format!("non-finite gradient in tensor '{tensor}'"))
            }
            other => StepFailure::Fatal(other),
        }
    }
}

fn train_step<S: Scalar>(
    params: &mut ModelParams<S>,
    dataset: &Dataset<S>,
    batch: &Batch<S>,
    cfg: &TrainConfig,
    lr: f64,
    adam: &mut AdamState<S>,
) -> std::result::Result<StepStats, StepFailure> {
    // embed members and augmented views; order-preserving parallel map
    let member_states: Vec<(Vec<S>, NetCache<S>)> = batch
        .members
        .par_iter()
        .map(|&i| forward(&dataset.items[i].graph, params, cfg.normalize))
        .collect();
    let aug_states: Vec<Option<(Vec<S>, NetCache<S>)>> = batch
        .aug_views
        .par_iter()
        .map(|view| view.as_ref().map(|g| forward(g, params, cfg.normalize)))
        .collect();

    let member_z: Vec<Vec<S>> = member_states.iter().map(|(z, _)| z.clone()).collect();
    let aug_z: Vec<Option<Vec<S>>> =
        aug_states.iter().map(|s| s.as_ref().map(|(z, _)| z.clone())).collect();

    let breakdown = sscl_loss(
        &member_z,
        &aug_z,
        &params.prototypes,
        params.dims.embed_dim,
        &batch.anchors,
        &cfg.loss_config(),
    )
    .map_err(StepFailure::Fatal)?;
    let loss = breakdown.weighted_total.to_f64().unwrap_or(f64::NAN);
    if !loss.is_finite() {
        return Err(StepFailure::Diverged(format!("loss became {loss}")));
    }

    // per-member tapes in parallel, then a deterministic ordered reduction
    let tapes: Vec<GradientTape<S>> = (0..batch.members.len())
        .into_par_iter()
        .map(|i| {
            let mut tape = params.zeros_like();
            backward(params, &member_states[i].1, &breakdown.d_members[i], &mut tape);
            if let (Some((_, cache)), Some(d)) = (&aug_states[i], &breakdown.d_aug[i]) {
                backward(params, cache, d, &mut tape);
            }
            tape
        })
        .collect();
    let mut tape = params.zeros_like();
    for t in &tapes {
        tape.axpy(S::one(), t);
    }
    for (dst, &src) in tape.prototypes.iter_mut().zip(&breakdown.d_prototypes) {
        *dst += src;
    }

    let mut norm_sq = S::zero();
    for (_, t) in tape.visit() {
        for v in t {
            norm_sq += *v * *v;
        }
    }
    let grad_norm = norm_sq.sqrt().to_f64().unwrap_or(f64::NAN);

    adam_step(params, &tape, lr, adam)?;
    Ok(StepStats { loss, grad_norm })
}

/// Mean average precision of a labeled dataset under the learned prototypes.
fn validation_map<S: Scalar>(
    params: &ModelParams<S>,
    val: &Dataset<S>,
    cfg: &TrainConfig,
) -> Option<f64> {
    let labeled: Vec<usize> = val.labeled.clone();
    if labeled.is_empty() {
        return None;
    }
    let embeddings: Vec<Vec<S>> = labeled
        .par_iter()
        .map(|&i| forward(&val.items[i].graph, params, cfg.normalize).0)
        .collect();
    let labels: Vec<usize> = labeled.iter().map(|&i| val.label_of(i).unwrap()).collect();
    let (_, map) = classification_map(
        &embeddings,
        &labels,
        &params.prototypes,
        params.dims.class_count,
        cfg.temperature,
        cfg.normalize,
    );
    map.and_then(|m| m.to_f64())
}

/// Embed every item of a dataset (order preserved).
pub fn embed_all<S: Scalar>(
    dataset: &Dataset<S>,
    params: &ModelParams<S>,
    normalize: bool,
) -> Vec<Vec<S>> {
    dataset
        .items
        .par_iter()
        .map(|item| forward(&item.graph, params, normalize).0)
        .collect()
}

/// Convenience wrapper: loss weighted per the weighting scheme with the given
/// unlabeled weight, evaluated on embeddings produced by the current model.
/// Exposed for the equivalence checks between the weighted and plain totals.
pub fn batch_loss<S: Scalar>(
    dataset: &Dataset<S>,
    batch: &Batch<S>,
    params: &ModelParams<S>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown<S>> {
    let member_z: Vec<Vec<S>> = batch
        .members
        .iter()
        .map(|&i| forward(&dataset.items[i].graph, params, cfg.normalize).0)
        .collect();
    let aug_z: Vec<Option<Vec<S>>> = batch
        .aug_views
        .iter()
        .map(|view| view.as_ref().map(|g| forward(g, params, cfg.normalize).0))
        .collect();
    sscl_loss(
        &member_z,
        &aug_z,
        &params.prototypes,
        params.dims.embed_dim,
        &batch.anchors,
        &cfg.loss_config(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::ingest::{DetectedObject, TrackedClip};
    use crate::stgraph::GraphConfig;

    /// Two motion patterns at separable positions, some labeled.
    fn toy_clips() -> Vec<TrackedClip<f64>> {
        let frames = 6;
        let mut clips = Vec::new();
        for k in 0..12 {
            let cluster = k % 2;
            let base_x = if cluster == 0 { 10.0 } else { 60.0 };
            let drift = if cluster == 0 { 2.0 } else { -2.0 };
            let jitter = (k / 2) as f64 * 0.8;
            let objects = (0..frames)
                .map(|f| DetectedObject {
                    frame: f,
                    instance: 1,
                    class: 2,
                    bbox: BoundingBox::new(
                        base_x + jitter + drift * f as f64,
                        40.0 + 0.3 * jitter,
                        12.0,
                        9.0,
                    ),
                })
                .collect();
            clips.push(TrackedClip {
                clip_id: format!("toy{k}"),
                width: 100.0,
                height: 100.0,
                frames,
                objects,
                lanes: vec![Vec::new(); frames],
                label: if k < 8 { Some(cluster) } else { None },
            });
        }
        clips
    }

    fn toy_dataset() -> Dataset<f64> {
        Dataset::from_clips(toy_clips(), &GraphConfig::default(), 2).unwrap()
    }

    fn quick_config(mode: LearningMode) -> TrainConfig {
        TrainConfig {
            mode,
            batch_size: 4,
            epochs: 5,
            embed_dim: 16,
            temperature: 0.2,
            margin_fraction: 0.0,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_smoke_run_produces_finite_metrics() {
        let ds = toy_dataset();
        let mut cfg = quick_config(LearningMode::Scl);
        cfg.epochs = 1;
        let out = train_run(&ds, None, &cfg).unwrap();
        assert!(out.diverged.is_none());
        assert_eq!(out.metrics.len(), 1);
        assert!(out.metrics[0].loss.is_finite());
        assert!(out.metrics[0].grad_norm.is_finite());
        assert_eq!(out.metrics[0].lr, 0.01);
    }

    #[test]
    fn loss_decreases_over_a_short_run() {
        let ds = toy_dataset();
        let cfg = quick_config(LearningMode::Scl);
        let out = train_run(&ds, None, &cfg).unwrap();
        assert!(out.diverged.is_none());
        let first = out.metrics.first().unwrap().loss;
        let last = out.metrics.last().unwrap().loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn training_is_bit_deterministic_for_a_seed() {
        let ds = toy_dataset();
        let cfg = quick_config(LearningMode::Gcl);
        let a = train_run(&ds, None, &cfg).unwrap();
        let b = train_run(&ds, None, &cfg).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        let la: Vec<f64> = a.metrics.iter().map(|m| m.loss).collect();
        let lb: Vec<f64> = b.metrics.iter().map(|m| m.loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn unsupervised_run_ignores_labels_entirely() {
        let ds = toy_dataset();
        let bare = ds.stripped();
        let cfg = quick_config(LearningMode::Unsup);
        let with_labels = train_run(&ds, None, &cfg).unwrap();
        let without = train_run(&bare, None, &cfg).unwrap();
        assert_eq!(with_labels.params.flatten(), without.params.flatten());
    }

    #[test]
    fn fsl_mode_requires_labels() {
        let ds = toy_dataset().stripped();
        let cfg = quick_config(LearningMode::Fsl);
        assert!(matches!(train_run(&ds, None, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn validation_map_is_logged_for_supervised_modes() {
        let ds = toy_dataset();
        let cfg = quick_config(LearningMode::Scl);
        let out = train_run(&ds, Some(&ds), &cfg).unwrap();
        assert!(out.metrics.iter().all(|m| m.val_map.is_some()));
        let final_map = out.metrics.last().unwrap().val_map.unwrap();
        assert!((0.0..=1.0).contains(&final_map));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.unlabeled_weight = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.unsup_flavor = LearningMode::Fsl;
        assert!(cfg.validate().is_err());
    }
}
