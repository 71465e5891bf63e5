//! Central finite-difference verification of the analytic loss gradients.
//!
//! Inputs are drawn away from the non-smooth points of each loss (the
//! `|d| = 1` kink of smooth-L1, `min` switches and `theta` ties of the IoU
//! loss) so the central difference is a valid reference.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    cross_entropy, ctc_min_frames, ctc_nll, dice_loss, iou_ltrb_loss, smooth_l1, LossWeights,
    LtrbSample,
};
use crate::geometry::RBoxDist;
use crate::sequence::ProbSeq;
use crate::targets::RegressionTarget;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;
/// Denominator floor of the relative error, so exactly-zero gradient
/// entries are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    IouLtrb,
    SmoothL1,
    CrossEntropy,
    Ctc,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Dice,
        LossKind::IouLtrb,
        LossKind::SmoothL1,
        LossKind::CrossEntropy,
        LossKind::Ctc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::IouLtrb => "iou_ltrb",
            LossKind::SmoothL1 => "smooth_l1",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Ctc => "ctc",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub loss: LossKind,
    pub cases: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= MAX_REL_ERROR
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Largest relative error between `analytic` and the central difference
/// of `f` around `x`.
pub fn compare_fd(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    worst
}

/// Runs `cases` random checks per loss. `corrupt` scales the analytic
/// gradient of one loss by 1.01, for exercising the failure path.
pub fn run(seed: u64, cases: usize, corrupt: Option<LossKind>) -> Vec<GradCheck> {
    LossKind::ALL
        .into_iter()
        .map(|kind| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (kind as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let scale = if corrupt == Some(kind) { 1.01 } else { 1.0 };
            let max_rel_error = (0..cases)
                .map(|_| check_one(kind, &mut rng, scale))
                .fold(0.0, f64::max);
            GradCheck {
                loss: kind,
                cases,
                max_rel_error,
            }
        })
        .collect()
}

fn check_one(kind: LossKind, rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    match kind {
        LossKind::Dice => check_dice(rng, scale),
        LossKind::IouLtrb => check_iou(rng, scale),
        LossKind::SmoothL1 => check_smooth_l1(rng, scale),
        LossKind::CrossEntropy => check_cross_entropy(rng, scale),
        LossKind::Ctc => check_ctc(rng, scale),
    }
}

fn scaled(g: impl IntoIterator<Item = f64>, scale: f64) -> Vec<f64> {
    g.into_iter().map(|x| x * scale).collect()
}

fn check_dice(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let n = rng.gen_range(4..64);
    let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
    let gt: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
        .collect();
    let (_, g) = dice_loss(&pred, &gt).expect("equal shapes");
    compare_fd(&pred, &scaled(g, scale), |p| {
        dice_loss(p, &gt).expect("equal shapes").0
    })
}

// factor away from 1 keeps pred and gt extents from tying in a min
fn off_unity(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let f: f64 = rng.gen_range(0.5..1.5);
        if (f - 1.0).abs() > 0.02 {
            return f;
        }
    }
}

fn check_iou(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let n = rng.gen_range(1..6);
    let lambda = LossWeights::default().lambda_theta;
    let field: Vec<LtrbSample> = (0..n)
        .map(|_| {
            let gt: [f64; 4] = std::array::from_fn(|_| rng.gen_range(2.0..50.0));
            let gtheta = rng.gen_range(-0.7..2.3);
            let dtheta = loop {
                let d: f64 = rng.gen_range(-0.5..0.5);
                if d.abs() > 1e-3 {
                    break d;
                }
            };
            LtrbSample {
                gt: RBoxDist::new(gt[0], gt[1], gt[2], gt[3], gtheta),
                pred: RBoxDist::new(
                    gt[0] * off_unity(rng),
                    gt[1] * off_unity(rng),
                    gt[2] * off_unity(rng),
                    gt[3] * off_unity(rng),
                    gtheta + dtheta,
                ),
            }
        })
        .collect();
    let x: Vec<f64> = field.iter().flat_map(|s| s.pred.to_array()).collect();
    let (_, g) = iou_ltrb_loss(&field, lambda);
    let eval = |flat: &[f64]| {
        let probe: Vec<LtrbSample> = field
            .iter()
            .enumerate()
            .map(|(i, s)| LtrbSample {
                pred: RBoxDist::from_array(flat[5 * i..5 * i + 5].try_into().expect("5 terms")),
                gt: s.gt,
            })
            .collect();
        iou_ltrb_loss(&probe, lambda).0
    };
    compare_fd(&x, &scaled(g.into_iter().flatten(), scale), eval)
}

fn check_smooth_l1(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let vstar = RegressionTarget::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
    let v: [f64; 5] = std::array::from_fn(|k| {
        let target = vstar.to_array()[k];
        loop {
            let d: f64 = rng.gen_range(-3.0..3.0);
            if (d.abs() - 1.0).abs() > 1e-3 {
                break target + d;
            }
        }
    });
    let (_, g) = smooth_l1(&RegressionTarget::from_array(v), &vstar);
    compare_fd(&v, &scaled(g, scale), |x| {
        smooth_l1(
            &RegressionTarget::from_array(x.try_into().expect("5 terms")),
            &vstar,
        )
        .0
    })
}

fn check_cross_entropy(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let classes = rng.gen_range(2..5);
    let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.1..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    let class = rng.gen_range(0..classes);
    let (_, g) = cross_entropy(&probs, class).expect("class in range");
    compare_fd(&probs, &scaled(g, scale), |p| {
        cross_entropy(p, class).expect("class in range").0
    })
}

fn check_ctc(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let classes = rng.gen_range(2..5);
    let label_len = rng.gen_range(0..4);
    let label: Vec<usize> = (0..label_len).map(|_| rng.gen_range(1..classes)).collect();
    let frames = ctc_min_frames(&label).max(1) + rng.gen_range(0..4);
    let data: Vec<f64> = (0..frames)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(move |x| x / sum)
        })
        .collect();
    let seq = ProbSeq::new(classes, data.clone()).expect("normalized rows");
    let (_, g) = ctc_nll(&seq, &label).expect("feasible label");
    compare_fd(&data, &scaled(g, scale), |x| {
        let probe = ProbSeq::new_unchecked(classes, x.to_vec()).expect("same shape");
        ctc_nll(&probe, &label).expect("feasible label").0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_default_seed() {
        let report = run(0, 100, None);
        assert_eq!(report.len(), 5);
        for r in &report {
            assert!(r.passed(), "{} max rel error {}", r.loss, r.max_rel_error);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let report = run(0, 5, Some(LossKind::Ctc));
        for r in report {
            assert_eq!(r.passed(), r.loss != LossKind::Ctc);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(LossKind::from_name(k.name()), Some(k));
        }
    }
}
