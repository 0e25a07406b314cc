//! Loss functions for the latent embeddings: the missing-modality loss for
//! the per-modality branches, the triplet hard loss for the joint branch, and
//! their sum. Each loss comes with its analytic gradient with respect to the
//! input embeddings, used by the manual backprop in [`crate::model`].

use ndarray::Array2;

use crate::error::{AvtError, Result};
use crate::mining::{
    build_masks, loss_components_with_mode, pairwise_distances, MinMode, MiniBatch,
};

/// The four loss terms of one training step and their sum.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_t: f64,
    pub l_s: f64,
    pub l_j: f64,
    pub l_total: f64,
}

/// Options for the missing-modality loss.
#[derive(Debug, Clone, Copy)]
pub struct LossOpts {
    /// Row-minimum semantics, see [`MinMode`].
    pub min_mode: MinMode,
    /// Optional cap on the nearest-missing distance before it enters the
    /// exponent, so an already-distant missing point stops dominating.
    pub d_am_cap: Option<f64>,
}

impl Default for LossOpts {
    fn default() -> Self {
        Self {
            min_mode: MinMode::CandidateSet,
            d_am_cap: None,
        }
    }
}

/// Numerically stable log(1 + e^a).
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Missing-modality loss over one mini-batch of per-modality embeddings.
///
/// Per valid anchor the exponent is
/// `alpha = d(a,hard valid positive) - d(a,hard valid negative) - d(a,nearest missing)`
/// and the per-anchor loss `log(1 + e^alpha)`; anchors with `b = false` are
/// masked out and the rest averaged. Returns 0 for a batch with no valid
/// anchors.
pub fn missing_modality_loss(batch: &MiniBatch) -> f64 {
    missing_modality_loss_impl(batch, LossOpts::default(), None)
}

/// As [`missing_modality_loss`] but also returns dL/dX.
pub fn missing_modality_loss_grad(batch: &MiniBatch) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(batch.x.raw_dim());
    let loss = missing_modality_loss_impl(batch, LossOpts::default(), Some(&mut grad));
    (loss, grad)
}

pub fn missing_modality_loss_with(batch: &MiniBatch, opts: LossOpts) -> f64 {
    missing_modality_loss_impl(batch, opts, None)
}

fn missing_modality_loss_impl(
    batch: &MiniBatch,
    opts: LossOpts,
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let k = batch.len();
    let n_valid = batch.b.iter().filter(|&&v| v).count();
    if k == 0 || n_valid == 0 {
        return 0.0;
    }
    let p = pairwise_distances(&batch.x);
    let masks = build_masks(&batch.y, &batch.b);
    let comps = loss_components_with_mode(&p, &masks, &batch.b, opts.min_mode);

    let inv_n = 1.0 / n_valid as f64;
    let mut total = 0.0;
    for i in 0..k {
        if !batch.b[i] {
            continue;
        }
        let (d_am, am_capped) = match opts.d_am_cap {
            Some(cap) if comps.d_am[i] > cap => (cap, true),
            _ => (comps.d_am[i], false),
        };
        let alpha = comps.d_ap[i] - comps.d_an[i] - d_am;
        total += softplus(alpha);
        if let Some(g) = grad.as_deref_mut() {
            let coeff = sigmoid(alpha) * inv_n;
            if let Some(j) = comps.idx_ap[i] {
                add_pair_distance_grad(g, &batch.x, &p.0, i, j, coeff);
            }
            if let Some(j) = comps.idx_an[i] {
                add_pair_distance_grad(g, &batch.x, &p.0, i, j, -coeff);
            }
            if let Some(j) = comps.idx_am[i] {
                if !am_capped {
                    add_pair_distance_grad(g, &batch.x, &p.0, i, j, -coeff);
                }
            }
        }
    }
    total * inv_n
}

/// Accumulate `coeff * d||x_i - x_j|| / dX` into `grad`. At coincident points
/// the distance is not differentiable; the subgradient 0 is used.
fn add_pair_distance_grad(
    grad: &mut Array2<f64>,
    x: &Array2<f64>,
    p: &Array2<f64>,
    i: usize,
    j: usize,
    coeff: f64,
) {
    let d = p[[i, j]];
    if d < 1e-12 {
        return;
    }
    let scale = coeff / d;
    for c in 0..x.ncols() {
        let diff = x[[i, c]] - x[[j, c]];
        grad[[i, c]] += scale * diff;
        grad[[j, c]] -= scale * diff;
    }
}

/// Triplet loss with online hard mining: per anchor the farthest same-class
/// and nearest different-class points, hinged at `margin`, averaged over
/// anchors that have at least one positive and one negative. Degenerate
/// batches (single class, singleton classes) contribute 0.
pub fn triplet_hard_loss(x: &Array2<f64>, y: &[u32], margin: f64) -> f64 {
    triplet_hard_loss_impl(x, y, margin, None)
}

/// As [`triplet_hard_loss`] but also returns dL/dX.
pub fn triplet_hard_loss_grad(x: &Array2<f64>, y: &[u32], margin: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(x.raw_dim());
    let loss = triplet_hard_loss_impl(x, y, margin, Some(&mut grad));
    (loss, grad)
}

fn triplet_hard_loss_impl(
    x: &Array2<f64>,
    y: &[u32],
    margin: f64,
    mut grad: Option<&mut Array2<f64>>,
) -> f64 {
    let k = x.nrows();
    debug_assert_eq!(y.len(), k);
    if k == 0 {
        return 0.0;
    }
    let p = pairwise_distances(x);
    // (anchor, hard positive, hard negative) for anchors with both available
    let mut triplets: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..k {
        let mut jp: Option<usize> = None;
        let mut jn: Option<usize> = None;
        for j in 0..k {
            if j == i {
                continue;
            }
            let d = p.0[[i, j]];
            if y[j] == y[i] {
                if jp.map_or(true, |b| d > p.0[[i, b]]) {
                    jp = Some(j);
                }
            } else if jn.map_or(true, |b| d < p.0[[i, b]]) {
                jn = Some(j);
            }
        }
        if let (Some(jp), Some(jn)) = (jp, jn) {
            triplets.push((i, jp, jn));
        }
    }
    if triplets.is_empty() {
        if k > 1 {
            log::warn!("triplet_hard_loss: no usable anchors (single-class batch?)");
        }
        return 0.0;
    }
    let inv_n = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for &(i, jp, jn) in &triplets {
        let hinge = p.0[[i, jp]] - p.0[[i, jn]] + margin;
        if hinge > 0.0 {
            total += hinge;
            if let Some(g) = grad.as_deref_mut() {
                add_pair_distance_grad(g, x, &p.0, i, jp, inv_n);
                add_pair_distance_grad(g, x, &p.0, i, jn, -inv_n);
            }
        }
    }
    total * inv_n
}

/// Total loss of one step: missing-modality losses on the visible, thermal
/// and audio embeddings plus the triplet hard loss on the joint embeddings.
/// The joint branch carries no validity mask (never are all three modalities
/// missing at once).
pub fn total_loss(
    visible: &MiniBatch,
    thermal: &MiniBatch,
    audio: &MiniBatch,
    joint_x: &Array2<f64>,
    joint_y: &[u32],
    margin: f64,
) -> Result<LossBreakdown> {
    check_aligned(visible, thermal, audio, joint_y)?;
    let l_c = missing_modality_loss(visible);
    let l_t = missing_modality_loss(thermal);
    let l_s = missing_modality_loss(audio);
    let l_j = triplet_hard_loss(joint_x, joint_y, margin);
    Ok(LossBreakdown {
        l_c,
        l_t,
        l_s,
        l_j,
        l_total: l_c + l_t + l_s + l_j,
    })
}

/// Gradients of the total loss with respect to each of the four embedding
/// matrices, in the order (visible, thermal, audio, joint).
#[allow(clippy::type_complexity)]
pub fn total_loss_grad(
    visible: &MiniBatch,
    thermal: &MiniBatch,
    audio: &MiniBatch,
    joint_x: &Array2<f64>,
    joint_y: &[u32],
    margin: f64,
) -> Result<(LossBreakdown, [Array2<f64>; 4])> {
    check_aligned(visible, thermal, audio, joint_y)?;
    let (l_c, g_c) = missing_modality_loss_grad(visible);
    let (l_t, g_t) = missing_modality_loss_grad(thermal);
    let (l_s, g_s) = missing_modality_loss_grad(audio);
    let (l_j, g_j) = triplet_hard_loss_grad(joint_x, joint_y, margin);
    Ok((
        LossBreakdown {
            l_c,
            l_t,
            l_s,
            l_j,
            l_total: l_c + l_t + l_s + l_j,
        },
        [g_c, g_t, g_s, g_j],
    ))
}

fn check_aligned(
    visible: &MiniBatch,
    thermal: &MiniBatch,
    audio: &MiniBatch,
    joint_y: &[u32],
) -> Result<()> {
    let y = &visible.y;
    if thermal.y != *y || audio.y != *y || joint_y != y.as_slice() {
        return Err(AvtError::invalid(
            "per-modality and joint batches must hold the same samples in the same order",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn batch(x: Array2<f64>, y: &[u32], b: &[bool]) -> MiniBatch {
        MiniBatch::new(x, y.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn all_zero_distances_give_ln2() {
        // every sample at the same point, all valid, two classes, plus a
        // missing point also at that point: d_ap = d_an = d_am = 0.
        let x = Array2::zeros((4, 3));
        let b = batch(x, &[0, 0, 1, 1], &[true, true, true, false]);
        let loss = missing_modality_loss(&b);
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn all_missing_batch_is_zero_loss() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let b = batch(x, &[0, 1], &[false, false]);
        assert_eq!(missing_modality_loss(&b), 0.0);
    }

    #[test]
    fn loss_is_nonnegative_and_positive_with_valid_anchors() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]];
        let b = batch(x, &[0, 1, 0], &[true, true, true]);
        assert!(missing_modality_loss(&b) > 0.0);
    }

    #[test]
    fn d_am_cap_limits_the_exponent() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.2], [9.0, 0.0]];
        let y = [0, 0, 1, 1];
        let b = [true, true, true, false];
        let mb = batch(x, &y, &b);
        let uncapped = missing_modality_loss(&mb);
        let capped = missing_modality_loss_with(
            &mb,
            LossOpts {
                d_am_cap: Some(0.5),
                ..LossOpts::default()
            },
        );
        assert!(capped > uncapped);
    }

    #[test]
    fn separated_clusters_have_zero_triplet_loss() {
        let x = array![[0.0, 0.0], [0.0, 0.0], [2.0, 0.0], [2.0, 0.0]];
        let y = [0, 0, 1, 1];
        assert_eq!(triplet_hard_loss(&x, &y, 0.2), 0.0);
    }

    #[test]
    fn coincident_points_hit_the_margin() {
        let x = Array2::zeros((4, 2));
        let y = [0, 0, 1, 1];
        assert_abs_diff_eq!(triplet_hard_loss(&x, &y, 0.2), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn single_class_batch_is_zero() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(triplet_hard_loss(&x, &[5, 5], 0.2), 0.0);
    }

    #[test]
    fn total_loss_is_the_sum_of_terms() {
        let x = array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]];
        let y = [0u32, 0, 1, 1];
        let bv = [true, true, false, true];
        let bt = [true, false, true, true];
        let bs = [true, true, true, true];
        let vis = batch(x.clone(), &y, &bv);
        let th = batch(x.clone(), &y, &bt);
        let au = batch(x.clone(), &y, &bs);
        let bd = total_loss(&vis, &th, &au, &x, &y, 0.2).unwrap();
        assert_abs_diff_eq!(
            bd.l_total,
            bd.l_c + bd.l_t + bd.l_s + bd.l_j,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(bd.l_c, missing_modality_loss(&vis), epsilon = 1e-12);
        assert_abs_diff_eq!(bd.l_j, triplet_hard_loss(&x, &y, 0.2), epsilon = 1e-12);
    }

    #[test]
    fn misaligned_batches_are_rejected() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let a = batch(x.clone(), &[0, 1], &[true, true]);
        let b_ = batch(x.clone(), &[1, 0], &[true, true]);
        assert!(total_loss(&a, &b_, &a, &x, &[0, 1], 0.2).is_err());
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
    }
}
