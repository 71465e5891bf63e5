//! Inference: proposal decoding, rotated NMS, refinement, recognition
//! rescoring and joint score filtering.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_4, PI};

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist_to_center, rotated_iou, RBoxCenter, RBoxDist};
use crate::sequence::{Alphabet, ProbSeq};
use crate::targets::{cell_center, decode_target, GtMaps, Level, RegressionTarget, TargetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("level with stride {0} is not one of 4, 8, 16, 32")]
    BadStride(u32),
    #[error("level stride {stride}: {msg}")]
    Shape { stride: u32, msg: String },
    #[error("recognition sequence is empty")]
    EmptySequence,
    #[error("refinement failed: {0}")]
    Refine(#[from] TargetError),
    #[error("second stage: {0}")]
    Provider(String),
    #[error("invalid filter config: {0}")]
    Config(String),
}

/// Raw head outputs of one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutput {
    pub stride: u32,
    /// `H x W` objectness logits.
    pub objectness: Array2<f32>,
    /// `5 x H x W` regression logits for `(l, t, r, b, theta)`.
    pub regression: Array3<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelMaps {
    pub levels: Vec<LevelOutput>,
}

impl LevelMaps {
    /// Checks strides and that each level's maps agree in shape, and, when
    /// given, that they cover an image of `(height, width)`.
    pub fn validate(&self, image_size: Option<(usize, usize)>) -> Result<(), PipelineError> {
        let mut seen = HashSet::new();
        for lvl in &self.levels {
            if Level::from_stride(lvl.stride).is_none() {
                return Err(PipelineError::BadStride(lvl.stride));
            }
            let shape_err = |msg: String| PipelineError::Shape {
                stride: lvl.stride,
                msg,
            };
            if !seen.insert(lvl.stride) {
                return Err(shape_err("duplicate level".into()));
            }
            let (h, w) = lvl.objectness.dim();
            let (c, rh, rw) = lvl.regression.dim();
            if c != 5 || rh != h || rw != w {
                return Err(shape_err(format!(
                    "regression is {c}x{rh}x{rw}, expected 5x{h}x{w}"
                )));
            }
            if let Some((ih, iw)) = image_size {
                let s = lvl.stride as usize;
                if h != ih.div_ceil(s) || w != iw.div_ceil(s) {
                    return Err(shape_err(format!(
                        "map is {h}x{w}, image {ih}x{iw} needs {}x{}",
                        ih.div_ceil(s),
                        iw.div_ceil(s)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Final detection with its detection and recognition scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub rbox: RBoxCenter,
    pub s_d: f64,
    pub s_r: f64,
    pub transcript: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub t_d: f64,
    pub t_r: f64,
    pub nms_iou: f64,
    pub score_thresh: f64,
    pub topk: usize,
    pub base_size: f64,
    /// Run NMS again after joint filtering.
    pub final_nms: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            t_d: 0.7,
            t_r: 0.8,
            nms_iou: 0.3,
            score_thresh: 0.5,
            topk: 1000,
            base_size: 640.0,
            final_nms: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("t_d", self.t_d),
            ("t_r", self.t_r),
            ("nms_iou", self.nms_iou),
            ("score_thresh", self.score_thresh),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name}={v} not in [0, 1]")));
            }
        }
        if !(self.base_size.is_finite() && self.base_size > 0.0) {
            return Err(PipelineError::Config(format!(
                "base_size={} must be positive",
                self.base_size
            )));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps a normalized head output in `(0, 1)` to an angle in `[-pi/4, 3pi/4)`.
pub fn theta_from_unit(p: f64) -> f64 {
    p * PI - FRAC_PI_4
}

pub fn theta_to_unit(theta: f64) -> f64 {
    (theta + FRAC_PI_4) / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proposal {
    pub rbox: RBoxCenter,
    pub score: f64,
    pub stride: u32,
}

/// Decodes every level: cells whose objectness probability exceeds
/// `score_thresh` become proposals with `ltrb = sigmoid(raw) * base_size`
/// and `theta = sigmoid(raw) * pi - pi/4`, anchored at the cell center.
/// The top-k of each level are kept and levels are concatenated in input
/// order.
pub fn decode_appn(maps: &LevelMaps, cfg: &FilterConfig) -> Result<Vec<Proposal>, PipelineError> {
    maps.validate(None)?;
    let per_level: Vec<Vec<Proposal>> = maps
        .levels
        .par_iter()
        .map(|lvl| decode_level(lvl, cfg))
        .collect();
    Ok(per_level.into_iter().flatten().collect())
}

fn decode_level(lvl: &LevelOutput, cfg: &FilterConfig) -> Vec<Proposal> {
    let mut out: Vec<(usize, Proposal)> = Vec::new();
    let width = lvl.objectness.dim().1;
    for ((row, col), &raw) in lvl.objectness.indexed_iter() {
        let score = sigmoid(raw as f64);
        if score.is_nan() || score <= cfg.score_thresh {
            continue;
        }
        let reg = |k: usize| sigmoid(lvl.regression[[k, row, col]] as f64);
        let d = RBoxDist::new(
            reg(0) * cfg.base_size,
            reg(1) * cfg.base_size,
            reg(2) * cfg.base_size,
            reg(3) * cfg.base_size,
            theta_from_unit(reg(4)),
        );
        let c = cell_center(lvl.stride, row, col);
        // saturated logits can collapse an extent to zero
        let Ok(rbox) = dist_to_center(&d, c.x, c.y) else {
            continue;
        };
        out.push((
            row * width + col,
            Proposal {
                rbox,
                score,
                stride: lvl.stride,
            },
        ));
    }
    out.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    out.truncate(cfg.topk);
    out.into_iter().map(|(_, p)| p).collect()
}

/// Greedy rotated NMS. Boxes are visited by descending score (lower index
/// first on ties); a box is dropped if its IoU with an already kept box
/// exceeds `iou_thresh`. Returns kept indices in visiting order.
pub fn rotated_nms(dets: &[(RBoxCenter, f64)], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let candidates = &order[pos + 1..];
        let hits: Vec<usize> = candidates
            .par_iter()
            .filter(|&&j| !suppressed[j] && rotated_iou(&dets[i].0, &dets[j].0) > iou_thresh)
            .copied()
            .collect();
        for j in hits {
            suppressed[j] = true;
        }
    }
    keep
}

/// Applies second-stage regression deltas to a proposal.
pub fn refine(proposal: &RBoxCenter, v: &RegressionTarget) -> Result<RBoxCenter, PipelineError> {
    Ok(decode_target(proposal, v)?)
}

/// Mean over timesteps of the largest class probability (blank included).
pub fn rec_score(seq: &ProbSeq) -> Result<f64, PipelineError> {
    if seq.is_empty() {
        return Err(PipelineError::EmptySequence);
    }
    let total: f64 = seq
        .rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / seq.len() as f64)
}

/// Best-path decoding: per-step argmax (lowest class on ties), collapse
/// repeats, drop blanks.
pub fn greedy_decode(seq: &ProbSeq, alphabet: &Alphabet) -> String {
    let mut out = String::new();
    let mut prev = None;
    for row in seq.rows() {
        let best = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (k, &p)| {
                if p > acc.1 {
                    (k, p)
                } else {
                    acc
                }
            })
            .0;
        if prev != Some(best) && best != 0 {
            if let Some(c) = alphabet.char_of(best) {
                out.push(c);
            }
        }
        prev = Some(best);
    }
    out
}

fn by_score_then_box(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.s_d
        .total_cmp(&a.s_d)
        .then_with(|| a.rbox.total_cmp(&b.rbox))
        .then_with(|| b.s_r.total_cmp(&a.s_r))
        .then_with(|| a.transcript.cmp(&b.transcript))
}

/// Keeps detections with `s_r > t_r` or `s_d > t_d`, ordered by descending
/// `s_d` (stable).
pub fn joint_filter(dets: &[Detection], cfg: &FilterConfig) -> Vec<Detection> {
    let mut kept: Vec<Detection> = dets
        .iter()
        .filter(|d| d.s_r > cfg.t_r || d.s_d > cfg.t_d)
        .cloned()
        .collect();
    kept.sort_by(|a, b| b.s_d.total_cmp(&a.s_d));
    kept
}

/// Second-stage output for one proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDetection {
    pub delta: RegressionTarget,
    /// Text-class probability, used as the detection score.
    pub score: f64,
}

/// Source of second-stage results, keyed by the proposal's position in the
/// post-NMS proposal list.
pub trait SecondStage: Sync {
    fn detect(&self, index: usize, proposal: &RBoxCenter) -> Result<StageDetection, PipelineError>;

    /// Recognition output on the refined box; `None` when no recognizer is
    /// available, which scores `s_r = 0`.
    fn recognize(
        &self,
        index: usize,
        refined: &RBoxCenter,
    ) -> Result<Option<ProbSeq>, PipelineError>;
}

/// Identity refinement with a fixed detection score and, optionally, a
/// single confident blank frame as recognition output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubStage {
    pub score: f64,
    pub recognition: bool,
}

impl Default for StubStage {
    fn default() -> Self {
        Self {
            score: 1.0,
            recognition: true,
        }
    }
}

impl SecondStage for StubStage {
    fn detect(&self, _: usize, _: &RBoxCenter) -> Result<StageDetection, PipelineError> {
        Ok(StageDetection {
            delta: RegressionTarget::ZERO,
            score: self.score,
        })
    }

    fn recognize(&self, _: usize, _: &RBoxCenter) -> Result<Option<ProbSeq>, PipelineError> {
        if !self.recognition {
            return Ok(None);
        }
        let seq = ProbSeq::one_hot(1, &[0]).map_err(|e| PipelineError::Provider(e.to_string()))?;
        Ok(Some(seq))
    }
}

/// Full inference: decode proposals, NMS, second-stage scoring and
/// refinement, recognition on the refined box, joint filtering and a final
/// NMS. Output is sorted by `s_d` descending, then by box parameters.
pub fn infer_pipeline(
    maps: &LevelMaps,
    stage: &dyn SecondStage,
    alphabet: &Alphabet,
    cfg: &FilterConfig,
) -> Result<Vec<Detection>, PipelineError> {
    cfg.validate()?;
    let proposals = decode_appn(maps, cfg)?;
    let scored: Vec<(RBoxCenter, f64)> = proposals.iter().map(|p| (p.rbox, p.score)).collect();
    let kept = rotated_nms(&scored, cfg.nms_iou);

    let candidates: Vec<Detection> = kept
        .par_iter()
        .enumerate()
        .map(|(index, &pi)| {
            let proposal = proposals[pi].rbox;
            let det = stage.detect(index, &proposal)?;
            let refined = refine(&proposal, &det.delta)?;
            let (s_r, transcript) = match stage.recognize(index, &refined)? {
                Some(seq) => (rec_score(&seq)?, greedy_decode(&seq, alphabet)),
                None => (0.0, String::new()),
            };
            Ok(Detection {
                rbox: refined,
                s_d: det.score,
                s_r,
                transcript,
            })
        })
        .collect::<Result<_, PipelineError>>()?;

    let mut filtered = joint_filter(&candidates, cfg);
    filtered.sort_by(by_score_then_box);
    if cfg.final_nms {
        let scored: Vec<(RBoxCenter, f64)> = filtered.iter().map(|d| (d.rbox, d.s_d)).collect();
        let keep = rotated_nms(&scored, cfg.nms_iou);
        filtered = keep.into_iter().map(|i| filtered[i].clone()).collect();
    }
    filtered.sort_by(by_score_then_box);
    Ok(filtered)
}

/// Objectness logit written for positive cells by
/// [`logits_from_targets`]; its negation marks background.
pub const TARGET_LOGIT: f32 = 20.0;
const UNIT_CLAMP: f64 = 1e-7;

/// Turns ground-truth maps into the head outputs a perfect network would
/// produce, so the decoder can be checked against its own targets.
pub fn logits_from_targets(maps: &GtMaps, base_size: f64) -> LevelMaps {
    let to_logit = |p: f64| logit(p.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)) as f32;
    let levels = maps
        .levels
        .iter()
        .map(|t| {
            let objectness = t
                .cls
                .mapv(|v| if v == 1 { TARGET_LOGIT } else { -TARGET_LOGIT });
            let mut regression = Array3::<f32>::zeros(t.reg.dim());
            for ((k, row, col), out) in regression.indexed_iter_mut() {
                if t.cls[[row, col]] == 0 {
                    *out = -TARGET_LOGIT;
                    continue;
                }
                let v = t.reg[[k, row, col]];
                *out = if k < 4 {
                    to_logit(v / base_size)
                } else {
                    to_logit(theta_to_unit(v))
                };
            }
            LevelOutput {
                stride: t.spec.stride(),
                objectness,
                regression,
            }
        })
        .collect();
    LevelMaps { levels }
}
