//! The semi-supervised contrastive loss over a batch.
//!
//! Per anchor n the loss is
//! `L_n = -sum_{z+ in P_n} log(exp(z+ . z_n / tau) / sum_{k in A_n} exp(z_k . z_n / tau))`
//! where the positive set `P_n` holds the selected positive (plus the class
//! prototype for labeled anchors, or only the prototype in the
//! fully-supervised mode), and the denominator set `A_n` holds the
//! negatives, the positive, and every class prototype. The weighted variant
//! scales unlabeled anchors' terms by `unlabeled_weight`; at weight 1 the two
//! totals are bit-identical.

use crate::error::{Error, Result};
use crate::scalar::{count, real, Scalar};

/// Where an embedding in the loss comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbRef {
    /// A batch member, by batch-local index.
    Member(usize),
    /// The augmented view of a batch member.
    AugView(usize),
    /// A class prototype.
    Prototype(usize),
}

/// One anchor's positive set and denominator set. The denominator lists the
/// negatives in ascending batch order, then the positive, then every
/// prototype; each positive also appears in it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub positives: Vec<EmbRef>,
    pub denominator: Vec<EmbRef>,
    pub labeled: bool,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub temperature: f64,
    pub normalize: bool,
    pub unlabeled_weight: f64,
}

/// Loss values and gradients for one batch.
pub struct LossBreakdown<S = f64> {
    /// Unweighted per-anchor terms.
    pub per_anchor: Vec<S>,
    /// Plain sum of the per-anchor terms.
    pub total: S,
    /// Sum with unlabeled anchors scaled by the unlabeled weight; this is the
    /// training objective and the gradients below belong to it.
    pub weighted_total: S,
    pub d_members: Vec<Vec<S>>,
    pub d_aug: Vec<Option<Vec<S>>>,
    /// Gradient w.r.t. the raw prototype parameters.
    pub d_prototypes: Vec<S>,
}

/// Evaluate the loss and its gradients. Member and augmented-view embeddings
/// arrive exactly as the network produced them (already unit length when
/// normalization is on); prototypes are raw parameters and are normalized
/// here when the flag is set, with gradients chained through.
pub fn sscl_loss<S: Scalar>(
    member_z: &[Vec<S>],
    aug_z: &[Option<Vec<S>>],
    prototypes: &[S],
    embed_dim: usize,
    anchors: &[AnchorSpec],
    cfg: &LossConfig,
) -> Result<LossBreakdown<S>> {
    let class_count = prototypes.len() / embed_dim.max(1);
    let tau = real::<S>(cfg.temperature);
    if cfg.temperature <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }

    // normalized prototype rows (or raw copies) plus their norms for backward
    let mut protos = prototypes.to_vec();
    let mut proto_norms = vec![S::one(); class_count];
    if cfg.normalize {
        for c in 0..class_count {
            let row = &mut protos[c * embed_dim..(c + 1) * embed_dim];
            let norm = row.iter().map(|v| *v * *v).sum::<S>().sqrt();
            if norm > S::zero() {
                row.iter_mut().for_each(|v| *v /= norm);
                proto_norms[c] = norm;
            }
        }
    }

    let resolve = |r: EmbRef| -> Result<&[S]> {
        match r {
            EmbRef::Member(i) => Ok(member_z[i].as_slice()),
            EmbRef::AugView(i) => aug_z[i]
                .as_deref()
                .ok_or_else(|| Error::data(format!("anchor {i} has no augmented view"))),
            EmbRef::Prototype(c) => {
                if c >= class_count {
                    return Err(Error::data(format!(
                        "prototype {c} out of range for {class_count} classes"
                    )));
                }
                Ok(&protos[c * embed_dim..(c + 1) * embed_dim])
            }
        }
    };

    let mut per_anchor = Vec::with_capacity(anchors.len());
    let mut d_members: Vec<Vec<S>> = member_z.iter().map(|z| vec![S::zero(); z.len()]).collect();
    let mut d_aug: Vec<Option<Vec<S>>> =
        aug_z.iter().map(|z| z.as_ref().map(|z| vec![S::zero(); z.len()])).collect();
    let mut d_protos_hat = vec![S::zero(); protos.len()];

    for (n, anchor) in anchors.iter().enumerate() {
        if anchor.positives.is_empty() || anchor.denominator.is_empty() {
            return Err(Error::data(format!("anchor {n} has an empty positive or denominator set")));
        }
        let z_n = &member_z[n];
        // logits over the denominator set
        let mut logits = Vec::with_capacity(anchor.denominator.len());
        for &r in &anchor.denominator {
            let v = resolve(r)?;
            let dot: S = v.iter().zip(z_n).map(|(&a, &b)| a * b).sum();
            logits.push(dot / tau);
        }
        let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
        let sum_exp: S = logits.iter().map(|&u| (u - max).exp()).sum();
        let lse = max + sum_exp.ln();

        // each positive must sit in the denominator; locate its slot
        let mut pos_slots = Vec::with_capacity(anchor.positives.len());
        for &p in &anchor.positives {
            let slot = anchor
                .denominator
                .iter()
                .position(|&r| r == p)
                .ok_or_else(|| Error::data(format!("anchor {n}: positive missing from denominator")))?;
            pos_slots.push(slot);
        }

        let mut loss_n = S::zero();
        for &slot in &pos_slots {
            loss_n += lse - logits[slot];
        }
        per_anchor.push(loss_n);

        // gradient coefficients on the logits, scaled by the anchor weight
        let alpha =
            if anchor.labeled { S::one() } else { real::<S>(cfg.unlabeled_weight) };
        let p_count = count::<S>(anchor.positives.len());
        let mut coeff = vec![S::zero(); logits.len()];
        for (c, &u) in coeff.iter_mut().zip(&logits) {
            *c = alpha * p_count * (u - lse).exp();
        }
        for &slot in &pos_slots {
            coeff[slot] -= alpha;
        }

        // route d/d logit into the participating vectors
        let mut d_zn = vec![S::zero(); z_n.len()];
        for (slot, &r) in anchor.denominator.iter().enumerate() {
            let g = coeff[slot] / tau;
            if g.is_zero() {
                continue;
            }
            let v = resolve(r)?.to_vec();
            for (dz, &vi) in d_zn.iter_mut().zip(&v) {
                *dz += g * vi;
            }
            let target: &mut [S] = match r {
                EmbRef::Member(i) => &mut d_members[i],
                EmbRef::AugView(i) => d_aug[i].as_mut().expect("resolved above").as_mut_slice(),
                EmbRef::Prototype(c) => &mut d_protos_hat[c * embed_dim..(c + 1) * embed_dim],
            };
            for (t, &zi) in target.iter_mut().zip(z_n.iter()) {
                *t += g * zi;
            }
        }
        for (t, &d) in d_members[n].iter_mut().zip(&d_zn) {
            *t += d;
        }
    }

    // chain prototype gradients through the normalization
    let mut d_prototypes = d_protos_hat.clone();
    if cfg.normalize {
        for c in 0..class_count {
            let hat = &protos[c * embed_dim..(c + 1) * embed_dim];
            let dh = &d_protos_hat[c * embed_dim..(c + 1) * embed_dim];
            let dot: S = dh.iter().zip(hat).map(|(&a, &b)| a * b).sum();
            let out = &mut d_prototypes[c * embed_dim..(c + 1) * embed_dim];
            for i in 0..embed_dim {
                out[i] = (dh[i] - dot * hat[i]) / proto_norms[c];
            }
        }
    }

    let total: S = per_anchor.iter().copied().sum();
    let mut weighted_total = S::zero();
    for (anchor, &l) in anchors.iter().zip(&per_anchor) {
        let alpha = if anchor.labeled { S::one() } else { real::<S>(cfg.unlabeled_weight) };
        weighted_total += alpha * l;
    }

    Ok(LossBreakdown { per_anchor, total, weighted_total, d_members, d_aug, d_prototypes })
}
