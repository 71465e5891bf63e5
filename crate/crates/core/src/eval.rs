//! Detection evaluation by IoU-thresholded one-to-one matching.

use serde::Serialize;

use crate::geometry::rotated_iou;
use crate::postprocess::Detection;
use crate::targets::GroundTruth;

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl EvalReport {
    /// Builds the report from counts. With nothing to find, recall is 1;
    /// with nothing detected, precision is 1 only if nothing was there.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            if fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f_measure,
        }
    }
}

/// Greedy matching in descending `s_d`: each detection takes the unmatched
/// GT with the highest IoU, provided that IoU is at least `iou_thresh`.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], iou_thresh: f64) -> EvalReport {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].s_d.total_cmp(&dets[a].s_d).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = 0;
    for i in order {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, rotated_iou(&dets[i].rbox, &gt.rbox)))
            .filter(|&(_, iou)| iou >= iou_thresh)
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    EvalReport::from_counts(tp, dets.len() - tp, gts.len() - tp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RBoxCenter;

    fn rb(cx: f64, cy: f64) -> RBoxCenter {
        RBoxCenter::new(cx, cy, 40.0, 10.0, 0.2).unwrap()
    }

    fn det(b: RBoxCenter, s: f64) -> Detection {
        Detection {
            rbox: b,
            s_d: s,
            s_r: 0.0,
            transcript: String::new(),
        }
    }

    #[test]
    fn perfect_match() {
        let gts = vec![
            GroundTruth::new(rb(0.0, 0.0), "a"),
            GroundTruth::new(rb(100.0, 0.0), "b"),
        ];
        let dets: Vec<Detection> = gts.iter().map(|g| det(g.rbox, 0.9)).collect();
        let r = evaluate(&dets, &gts, 0.5);
        assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_detections() {
        let gts = vec![
            GroundTruth::new(rb(0.0, 0.0), ""),
            GroundTruth::new(rb(100.0, 0.0), ""),
        ];
        let r = evaluate(&[], &gts, 0.5);
        assert_eq!((r.precision, r.recall, r.f_measure), (0.0, 0.0, 0.0));
        assert_eq!(r.false_negatives, 2);
        let r = evaluate(&[], &[], 0.5);
        assert_eq!(r.f_measure, 1.0);
    }

    #[test]
    fn half_recall() {
        let gts = vec![
            GroundTruth::new(rb(0.0, 0.0), ""),
            GroundTruth::new(rb(100.0, 0.0), ""),
        ];
        let r = evaluate(&[det(rb(0.0, 0.0), 0.9)], &gts, 0.5);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f_measure - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn each_gt_matched_once() {
        let gts = vec![GroundTruth::new(rb(0.0, 0.0), "")];
        let r = evaluate(&[det(rb(0.0, 0.0), 0.9), det(rb(0.5, 0.0), 0.8)], &gts, 0.5);
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (1, 1, 0)
        );
    }
}
