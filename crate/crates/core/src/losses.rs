//! Training losses: per-frame detection with Hungarian-matched pairs,
//! identity-fixed supervision of tracked queries, the clip-level temporal
//! loss, recognition cross-entropy, and their weighted combination.
//!
//! The class term of the losses is `-log p_hat` while matching uses the
//! linear probability; both read the same two-way logits (class 0 = text,
//! class 1 = no object).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::geometry::RotatedBox;
use crate::tensor::Tensor;

/// Class index of a real text instance in the two-way score head.
pub const TEXT_CLASS: usize = 0;
/// Class index of the no-object outcome.
pub const NO_OBJECT_CLASS: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    /// Coefficient of the cosine angle term; 1 matches the loss as written,
    /// 0 disables orientation supervision for the matching ablation.
    pub lambda_angle: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub no_object_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_iou: 2.0,
            lambda_l1: 5.0,
            lambda_angle: 1.0,
            sigma1: 1.0,
            sigma2: 1.0,
            no_object_weight: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_iou", self.lambda_iou),
            ("lambda_l1", self.lambda_l1),
            ("lambda_angle", self.lambda_angle),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("no_object_weight", self.no_object_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Differentiable per-query outputs entering a loss.
#[derive(Debug, Clone)]
pub struct PredictionTerms {
    /// `[2]` class logits.
    pub logits: Tensor,
    /// `[4]` box as (cx, cy, w, h), already squashed into (0, 1).
    pub bbox: Tensor,
    /// `[1]` canonical angle.
    pub theta: Tensor,
}

/// A tracked query's outputs, bound to its inherited identity.
#[derive(Debug, Clone)]
pub struct TrackedTerm {
    pub terms: PredictionTerms,
    pub track_id: u64,
}

fn zero() -> Tensor {
    Tensor::scalar(0.0)
}

/// Differentiable GIoU of a `[4]` box tensor against a constant box.
pub fn giou_term(pred: &Tensor, gt: &RotatedBox<f64>) -> Result<Tensor> {
    let half = 0.5;
    let cx = pred.element(0)?;
    let cy = pred.element(1)?;
    let w = pred.element(2)?;
    let h = pred.element(3)?;
    let ax1 = cx.sub(&w.scale(half));
    let ax2 = cx.add(&w.scale(half));
    let ay1 = cy.sub(&h.scale(half));
    let ay2 = cy.add(&h.scale(half));
    let (bx1v, bx2v) = (gt.cx() - gt.w() * half, gt.cx() + gt.w() * half);
    let (by1v, by2v) = (gt.cy() - gt.h() * half, gt.cy() + gt.h() * half);
    let bx1 = Tensor::scalar(bx1v);
    let bx2 = Tensor::scalar(bx2v);
    let by1 = Tensor::scalar(by1v);
    let by2 = Tensor::scalar(by2v);

    let iw = ax2.minimum(&bx2).sub(&ax1.maximum(&bx1)).relu();
    let ih = ay2.minimum(&by2).sub(&ay1.maximum(&by1)).relu();
    let inter = iw.mul(&ih);
    // areas from the same corner differences, so identical boxes give exactly 1
    let area_a = ax2.sub(&ax1).mul(&ay2.sub(&ay1));
    let area_b = (bx2v - bx1v) * (by2v - by1v);
    let union = area_a.add_scalar(area_b).sub(&inter);
    let iou = inter.div(&union);
    let encl_w = ax2.maximum(&bx2).sub(&ax1.minimum(&bx1));
    let encl_h = ay2.maximum(&by2).sub(&ay1.minimum(&by1));
    let encl = encl_w.mul(&encl_h);
    Ok(iou.sub(&encl.sub(&union).div(&encl)))
}

/// Differentiable L1 distance of a `[4]` box tensor against a constant box.
pub fn box_l1_term(pred: &Tensor, gt: &RotatedBox<f64>) -> Tensor {
    let gt_t = Tensor::from_vec(&[4], vec![gt.cx(), gt.cy(), gt.w(), gt.h()]).expect("4 values");
    pred.sub(&gt_t).abs().sum()
}

/// Differentiable cosine angle loss `1 - cos(theta_hat - a)`.
pub fn angle_term(theta_hat: &Tensor, gt_theta: f64) -> Tensor {
    theta_hat.add_scalar(-gt_theta).cos().neg().add_scalar(1.0)
}

/// Box/angle residuals of a matched pair: `lambda_iou (1 - giou) +
/// lambda_l1 l1 + lambda_angle (1 - cos da)`.
fn matched_residuals(terms: &PredictionTerms, gt: &RotatedBox<f64>, w: &LossWeights) -> Result<Tensor> {
    let giou = giou_term(&terms.bbox, gt)?;
    let box_part = giou.neg().add_scalar(1.0).scale(w.lambda_iou);
    let l1_part = box_l1_term(&terms.bbox, gt).scale(w.lambda_l1);
    let angle_part = angle_term(&terms.theta, gt.theta()).scale(w.lambda_angle);
    Ok(box_part.add(&l1_part).add(&angle_part))
}

/// Detection loss of one frame over the empty-query slots: matched slots pay
/// the full class/box/angle terms, unmatched slots pay the down-weighted
/// no-object class term.
pub fn frame_detection_loss(
    preds: &[PredictionTerms],
    gts: &[RotatedBox<f64>],
    assignment: &Assignment<f64>,
    weights: &LossWeights,
) -> Result<Tensor> {
    if assignment.len() != gts.len() || assignment.rows() != preds.len() {
        return Err(Error::Contract(format!(
            "assignment covers {} ground truths over {} rows, got {} / {}",
            assignment.len(),
            assignment.rows(),
            gts.len(),
            preds.len()
        )));
    }
    let gt_of = assignment.gt_for_pred();
    let mut total = zero();
    for (slot, terms) in preds.iter().enumerate() {
        match gt_of[slot] {
            Some(col) => {
                let class = terms.logits.cross_entropy_logits(TEXT_CLASS, 1.0)?;
                let residuals = matched_residuals(terms, &gts[col], weights)?;
                total = total.add(&class).add(&residuals);
            }
            None => {
                let class = terms
                    .logits
                    .cross_entropy_logits(NO_OBJECT_CLASS, weights.no_object_weight)?;
                total = total.add(&class);
            }
        }
    }
    Ok(total)
}

/// Same per-term form as [`frame_detection_loss`], but with the assignment
/// fixed by inherited track identity: a tracked query whose id is present in
/// this frame's ground truth pays the full terms against that box, one whose
/// id is absent is supervised toward no-object.
pub fn tracked_query_loss(
    tracked: &[TrackedTerm],
    gts: &[(u64, RotatedBox<f64>)],
    weights: &LossWeights,
) -> Tensor {
    let by_id: BTreeMap<u64, &RotatedBox<f64>> = gts.iter().map(|(id, b)| (*id, b)).collect();
    let mut total = zero();
    for tq in tracked {
        match by_id.get(&tq.track_id) {
            Some(gt) => {
                let class = tq
                    .terms
                    .logits
                    .cross_entropy_logits(TEXT_CLASS, 1.0)
                    .expect("two-way logits");
                let residuals =
                    matched_residuals(&tq.terms, gt, weights).expect("valid ground-truth box");
                total = total.add(&class).add(&residuals);
            }
            None => {
                let class = tq
                    .terms
                    .logits
                    .cross_entropy_logits(NO_OBJECT_CLASS, weights.no_object_weight)
                    .expect("two-way logits");
                total = total.add(&class);
            }
        }
    }
    total
}

/// Clip-level loss: the per-frame detection and tracked-query terms summed
/// over frames, normalized by the total ground-truth count (clamped to 1 so
/// an empty clip stays defined).
pub fn temporal_tracking_loss(per_frame: &[(Tensor, Tensor)], gt_counts: &[usize]) -> Tensor {
    assert!(
        !per_frame.is_empty() && per_frame.len() == gt_counts.len(),
        "one (detection, tracked) pair and one ground-truth count per frame"
    );
    let mut total = zero();
    for (det, trk) in per_frame {
        total = total.add(det).add(trk);
    }
    let denom: usize = gt_counts.iter().sum();
    total.scale(1.0 / denom.max(1) as f64)
}

/// Mean cross-entropy over all supervised character positions; an empty
/// batch yields a constant zero with no gradient.
pub fn recognition_loss(logit_steps: &[Vec<Tensor>], targets: &[Vec<usize>]) -> Result<Tensor> {
    if logit_steps.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} logit sequences vs {} target sequences",
            logit_steps.len(),
            targets.len()
        )));
    }
    let mut total = zero();
    let mut positions = 0usize;
    for (steps, target) in logit_steps.iter().zip(targets) {
        if steps.len() != target.len() {
            return Err(Error::Contract(format!(
                "logit sequence of length {} vs target of length {}",
                steps.len(),
                target.len()
            )));
        }
        for (logits, &class) in steps.iter().zip(target) {
            total = total.add(&logits.cross_entropy_logits(class, 1.0)?);
            positions += 1;
        }
    }
    if positions == 0 {
        return Ok(zero());
    }
    Ok(total.scale(1.0 / positions as f64))
}

/// `sigma1 * track + sigma2 * rec`.
pub fn total_loss(track: &Tensor, rec: &Tensor, weights: &LossWeights) -> Tensor {
    track
        .scale(weights.sigma1)
        .add(&rec.scale(weights.sigma2))
}
