//! Training losses of the detector with analytic gradients.
//!
//! Every loss returns its value together with the gradient with respect to
//! its prediction inputs. Gradients stop there; nothing is propagated into
//! network layers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RBoxDist;
use crate::sequence::ProbSeq;
use crate::targets::RegressionTarget;

pub mod gradcheck;

/// Smoothing term of the dice ratio.
pub const DICE_EPS: f64 = 1e-6;
/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;
/// Floor applied to predicted box extents in the IoU loss.
pub const EXTENT_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: prediction has {pred} entries, target has {target}")]
    ShapeMismatch { pred: usize, target: usize },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("CTC label of length {label_len} needs at least {required} frames, got {frames}")]
    CtcInfeasible {
        label_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("CTC label contains the blank class or an out-of-range class {0}")]
    CtcBadLabel(usize),
    #[error("CTC likelihood underflowed to zero")]
    CtcZeroLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_obj: f64,
    pub lambda_reg: f64,
    pub lambda_theta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_obj: 0.01,
            lambda_reg: 1.0,
            lambda_theta: 20.0,
        }
    }
}

/// Dice loss `1 - (2 * sum(p * g) + eps) / (sum(p) + sum(g) + eps)`.
pub fn dice_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::ShapeMismatch {
            pred: pred.len(),
            target: gt.len(),
        });
    }
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let denom = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() + DICE_EPS;
    let numer = 2.0 * inter + DICE_EPS;
    let loss = 1.0 - numer / denom;
    let grad = gt
        .iter()
        .map(|g| -(2.0 * g * denom - numer) / (denom * denom))
        .collect();
    Ok((loss, grad))
}

/// How the dice loss treats multiple pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DiceMode {
    /// One dice ratio over the concatenation of all level maps.
    #[default]
    Joint,
    /// Mean of per-level dice losses.
    PerLevel,
}

/// Dice loss over several level maps given as `(pred, gt)` pairs. The
/// returned gradients follow the input layout.
pub fn dice_loss_levels(
    levels: &[(&[f64], &[f64])],
    mode: DiceMode,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    match mode {
        DiceMode::Joint => {
            let pred: Vec<f64> = levels.iter().flat_map(|(p, _)| p.iter().copied()).collect();
            let gt: Vec<f64> = levels.iter().flat_map(|(_, g)| g.iter().copied()).collect();
            for (p, g) in levels {
                if p.len() != g.len() {
                    return Err(LossError::ShapeMismatch {
                        pred: p.len(),
                        target: g.len(),
                    });
                }
            }
            let (loss, flat) = dice_loss(&pred, &gt)?;
            let mut grads = Vec::with_capacity(levels.len());
            let mut offset = 0;
            for (p, _) in levels {
                grads.push(flat[offset..offset + p.len()].to_vec());
                offset += p.len();
            }
            Ok((loss, grads))
        }
        DiceMode::PerLevel => {
            if levels.is_empty() {
                return Ok((0.0, Vec::new()));
            }
            let n = levels.len() as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(levels.len());
            for (p, g) in levels {
                let (l, gr) = dice_loss(p, g)?;
                total += l;
                grads.push(gr.into_iter().map(|x| x / n).collect());
            }
            Ok((total / n, grads))
        }
    }
}

/// Prediction/target pair at one positive location of the regression map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtrbSample {
    pub pred: RBoxDist,
    pub gt: RBoxDist,
}

pub type LtrbField = [LtrbSample];

/// IoU regression loss `-ln IoU(B_gt, B_pred) + lambda_theta * |theta_gt - theta_pred|`
/// over positive locations, averaged.
///
/// The overlap of two ltrb boxes sharing the same grid point is
/// `(min(l,l*) + min(r,r*)) * (min(t,t*) + min(b,b*))`. Gradients are with
/// respect to the predicted `(l, t, r, b, theta)`.
pub fn iou_ltrb_loss(field: &LtrbField, lambda_theta: f64) -> (f64, Vec<[f64; 5]>) {
    if field.is_empty() {
        return (0.0, Vec::new());
    }
    let n = field.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(field.len());
    for s in field {
        let (value, grad) = iou_ltrb_single(s, lambda_theta);
        total += value;
        grads.push(grad.map(|g| g / n));
    }
    (total / n, grads)
}

fn iou_ltrb_single(s: &LtrbSample, lambda_theta: f64) -> (f64, [f64; 5]) {
    let raw = [s.pred.l, s.pred.t, s.pred.r, s.pred.b];
    let p = raw.map(|x| x.max(EXTENT_CLAMP));
    let live = raw.map(|x| x > EXTENT_CLAMP);
    let g = [s.gt.l, s.gt.t, s.gt.r, s.gt.b];

    // which side of each min is the prediction
    let pick = [p[0] < g[0], p[1] < g[1], p[2] < g[2], p[3] < g[3]];
    let iw = p[0].min(g[0]) + p[2].min(g[2]);
    let ih = p[1].min(g[1]) + p[3].min(g[3]);
    let inter = (iw * ih).max(LOG_CLAMP);
    let pw = p[0] + p[2];
    let ph = p[1] + p[3];
    let area_p = pw * ph;
    let area_g = (g[0] + g[2]) * (g[1] + g[3]);
    let union = area_p + area_g - inter;
    let mut value = union.ln() - inter.ln();

    let mut grad = [0.0; 5];
    for k in 0..4 {
        if !live[k] {
            continue;
        }
        let horizontal = k % 2 == 0;
        let d_area = if horizontal { ph } else { pw };
        let d_inter = if pick[k] {
            if horizontal {
                ih
            } else {
                iw
            }
        } else {
            0.0
        };
        let d_union = d_area - d_inter;
        grad[k] = d_union / union - d_inter / inter;
    }
    let dtheta = s.pred.theta - s.gt.theta;
    value += lambda_theta * dtheta.abs();
    grad[4] = lambda_theta * sign(dtheta);
    (value, grad)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Smooth-L1 summed over the five regression terms; the gradient is with
/// respect to `v`.
pub fn smooth_l1(v: &RegressionTarget, vstar: &RegressionTarget) -> (f64, [f64; 5]) {
    let a = v.to_array();
    let b = vstar.to_array();
    let mut value = 0.0;
    let mut grad = [0.0; 5];
    for k in 0..5 {
        let d = a[k] - b[k];
        if d.abs() < 1.0 {
            value += 0.5 * d * d;
            grad[k] = d;
        } else {
            value += d.abs() - 0.5;
            grad[k] = sign(d);
        }
    }
    (value, grad)
}

/// Smooth-L1 averaged over the positive samples.
pub fn smooth_l1_batch(pairs: &[(RegressionTarget, RegressionTarget)]) -> (f64, Vec<[f64; 5]>) {
    if pairs.is_empty() {
        return (0.0, Vec::new());
    }
    let n = pairs.len() as f64;
    let mut total = 0.0;
    let grads = pairs
        .iter()
        .map(|(v, vs)| {
            let (l, g) = smooth_l1(v, vs);
            total += l;
            g.map(|x| x / n)
        })
        .collect();
    (total / n, grads)
}

/// `-ln c[class]`, with the probability clamped at [`LOG_CLAMP`].
pub fn cross_entropy(probs: &[f64], class: usize) -> Result<(f64, Vec<f64>), LossError> {
    let Some(&p) = probs.get(class) else {
        return Err(LossError::ClassOutOfRange {
            class,
            classes: probs.len(),
        });
    };
    let mut grad = vec![0.0; probs.len()];
    if p > LOG_CLAMP {
        grad[class] = -1.0 / p;
    }
    Ok((-(p.max(LOG_CLAMP)).ln(), grad))
}

/// Cross-entropy averaged over the batch of `N` samples.
pub fn cross_entropy_batch(
    probs: &[Vec<f64>],
    classes: &[usize],
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if probs.len() != classes.len() {
        return Err(LossError::ShapeMismatch {
            pred: probs.len(),
            target: classes.len(),
        });
    }
    if probs.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(probs.len());
    for (p, &c) in probs.iter().zip(classes) {
        let (l, g) = cross_entropy(p, c)?;
        total += l;
        grads.push(g.into_iter().map(|x| x / n).collect());
    }
    Ok((total / n, grads))
}

/// Minimum number of frames a CTC alignment of `label` needs: one per
/// symbol plus a blank between each pair of equal neighbours.
pub fn ctc_min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Negative log-likelihood of `label` (class indices, blank = 0 excluded)
/// under the CTC model, and its gradient with respect to every entry of
/// `seq`.
///
/// Runs the forward and backward recursions over the blank-expanded label
/// in log space. With `a_t(s)` the forward mass arriving at state `s` before
/// emitting frame `t` and `b_t(s)` the backward mass after it,
/// `p = sum_s a_t(s) y_t(s) b_t(s)` for every `t`, so
/// `dp/dy_t(k) = sum_{s: label(s) = k} a_t(s) b_t(s)`.
pub fn ctc_nll(seq: &ProbSeq, label: &[usize]) -> Result<(f64, Vec<f64>), LossError> {
    let classes = seq.num_classes();
    if let Some(&bad) = label.iter().find(|&&k| k == 0 || k >= classes) {
        return Err(LossError::CtcBadLabel(bad));
    }
    let frames = seq.len();
    let required = ctc_min_frames(label);
    if frames < required || frames == 0 {
        return Err(LossError::CtcInfeasible {
            label_len: label.len(),
            required: required.max(1),
            frames,
        });
    }

    let states = 2 * label.len() + 1;
    let ext: Vec<usize> = (0..states)
        .map(|s| if s % 2 == 0 { 0 } else { label[s / 2] })
        .collect();
    let can_skip = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];
    let log_y = |t: usize, s: usize| seq.row(t)[ext[s]].ln();

    let neg = f64::NEG_INFINITY;
    // log a_t(s): mass entering s at t, before emission
    let mut log_a = vec![neg; frames * states];
    log_a[0] = 0.0;
    if states > 1 {
        log_a[1] = 0.0;
    }
    for t in 1..frames {
        for s in 0..states {
            let prev = |q: usize| log_a[(t - 1) * states + q] + log_y(t - 1, q);
            let mut acc = prev(s);
            if s >= 1 {
                acc = log_add(acc, prev(s - 1));
            }
            if can_skip(s) {
                acc = log_add(acc, prev(s - 2));
            }
            log_a[t * states + s] = acc;
        }
    }
    // log b_t(s): mass leaving s after emitting t
    let mut log_b = vec![neg; frames * states];
    let last = (frames - 1) * states;
    log_b[last + states - 1] = 0.0;
    if states > 1 {
        log_b[last + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = |q: usize| log_b[(t + 1) * states + q] + log_y(t + 1, q);
            let mut acc = next(s);
            if s + 1 < states {
                acc = log_add(acc, next(s + 1));
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_add(acc, next(s + 2));
            }
            log_b[t * states + s] = acc;
        }
    }

    let mut log_p = neg;
    for s in 0..states {
        log_p = log_add(log_p, log_a[s] + log_y(0, s) + log_b[s]);
    }
    if log_p == neg || !log_p.is_finite() {
        return Err(LossError::CtcZeroLikelihood);
    }

    let mut grad = vec![0.0; seq.as_slice().len()];
    for t in 0..frames {
        for s in 0..states {
            let w = log_a[t * states + s] + log_b[t * states + s] - log_p;
            if w > neg {
                grad[t * classes + ext[s]] -= w.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss averaged over the positive samples.
pub fn ctc_batch(items: &[(&ProbSeq, &[usize])]) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if items.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = items.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(items.len());
    for (seq, label) in items {
        let (l, g) = ctc_nll(seq, label)?;
        total += l;
        grads.push(g.into_iter().map(|x| x / n).collect());
    }
    Ok((total / n, grads))
}

/// Proposal-stage loss `lambda_obj * L_obj + lambda_reg * L_reg`.
pub fn appn_total(obj_loss: f64, reg_loss: f64, weights: &LossWeights) -> f64 {
    weights.lambda_obj * obj_loss + weights.lambda_reg * reg_loss
}

/// Multi-task total: proposal-stage loss plus the second-stage
/// classification, regression and recognition losses.
pub fn total_loss(appn: f64, fcls: f64, freg: f64, frec: f64) -> f64 {
    appn + fcls + freg + frec
}
