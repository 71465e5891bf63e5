//! Ground-truth generation for the anchor-free proposal head and sampling of
//! second-stage training batches.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    angle_diff, box_vertices, center_to_dist, normalize_angle, rotated_iou, GeometryError, Point,
    RBoxCenter,
};

/// Default shrink applied to GT boxes before rasterizing positive cells.
pub const DEFAULT_SHRINK: f64 = 0.7;
/// IoU a proposal must exceed to be a positive second-stage sample.
pub const POSITIVE_IOU: f64 = 0.6;
/// Absolute angle difference a positive sample must stay under.
pub const POSITIVE_MAX_ANGLE: f64 = PI / 6.0;
pub const BATCH_SIZE: usize = 256;
pub const MAX_POSITIVES: usize = BATCH_SIZE / 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("regression target is not finite")]
    NonFinite,
    #[error("decoded box is invalid: {0}")]
    InvalidBox(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rbox: RBoxCenter,
    /// Empty for detection-only annotations.
    pub transcript: String,
}

impl GroundTruth {
    pub fn new(rbox: RBoxCenter, transcript: impl Into<String>) -> Self {
        Self {
            rbox,
            transcript: transcript.into(),
        }
    }
}

/// Pyramid level of the proposal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    P2,
    P3,
    P4,
    P5,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::P2, Level::P3, Level::P4, Level::P5];

    pub fn stride(self) -> u32 {
        match self {
            Level::P2 => 4,
            Level::P3 => 8,
            Level::P4 => 16,
            Level::P5 => 32,
        }
    }

    pub fn from_stride(stride: u32) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.stride() == stride)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::P2 => "p2",
            Level::P3 => "p3",
            Level::P4 => "p4",
            Level::P5 => "p5",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid geometry of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSpec {
    pub level: Level,
    pub height: usize,
    pub width: usize,
}

impl LevelSpec {
    pub fn new(level: Level, height: usize, width: usize) -> Self {
        Self {
            level,
            height,
            width,
        }
    }

    /// Grid covering an image of the given size (ceil division by stride).
    pub fn for_image(level: Level, image_height: usize, image_width: usize) -> Self {
        let s = level.stride() as usize;
        Self::new(level, image_height.div_ceil(s), image_width.div_ceil(s))
    }

    pub fn stride(&self) -> u32 {
        self.level.stride()
    }

    /// Image-space center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        cell_center(self.stride(), row, col)
    }
}

pub fn cell_center(stride: u32, row: usize, col: usize) -> Point {
    let s = stride as f64;
    Point::new((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
}

/// Pyramid level a box is learned on, bucketed by area:
/// `(0, 64^2]`, `(64^2, 128^2]`, `(128^2, 256^2]`, `(256^2, inf)`.
pub fn assign_level(bx: &RBoxCenter) -> Level {
    let area = bx.area();
    if area <= 64.0 * 64.0 {
        Level::P2
    } else if area <= 128.0 * 128.0 {
        Level::P3
    } else if area <= 256.0 * 256.0 {
        Level::P4
    } else {
        Level::P5
    }
}

/// Scales width and height about the same center and angle.
///
/// # Panics
///
/// If `factor` is outside `(0, 1]`.
pub fn shrink_box(bx: &RBoxCenter, factor: f64) -> RBoxCenter {
    assert!(
        factor > 0.0 && factor <= 1.0,
        "shrink factor {factor} not in (0, 1]"
    );
    RBoxCenter::new(
        bx.cx(),
        bx.cy(),
        bx.w() * factor,
        bx.h() * factor,
        bx.theta(),
    )
    .expect("scaling a valid box by a positive factor stays valid")
}

/// Classification and regression targets of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub spec: LevelSpec,
    /// `H x W`, 1 at positive cells.
    pub cls: Array2<u8>,
    /// `5 x H x W` of `(l, t, r, b, theta)`; zero where `cls` is 0.
    pub reg: Array3<f64>,
    /// Index into the GT list that owns each positive cell.
    pub owner: Array2<Option<usize>>,
}

/// Targets of all four levels for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GtMaps {
    pub levels: Vec<LevelTargets>,
}

impl GtMaps {
    pub fn level(&self, level: Level) -> Option<&LevelTargets> {
        self.levels.iter().find(|t| t.spec.level == level)
    }
}

// Smaller area wins; exact ties fall back to the box parameters so the
// result does not depend on input order.
fn wins_over(candidate: &RBoxCenter, incumbent: &RBoxCenter) -> bool {
    match candidate.area().total_cmp(&incumbent.area()) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => candidate.total_cmp(incumbent).is_lt(),
    }
}

/// Builds the classification map, regression map and cell ownership for a
/// level in one pass.
pub fn gen_level_targets(gts: &[GroundTruth], spec: LevelSpec, shrink: f64) -> LevelTargets {
    let (h, w) = (spec.height, spec.width);
    let mut cls = Array2::<u8>::zeros((h, w));
    let mut reg = Array3::<f64>::zeros((5, h, w));
    let mut owner: Array2<Option<usize>> = Array2::from_elem((h, w), None);
    let stride = spec.stride() as f64;

    for (gi, gt) in gts.iter().enumerate() {
        if assign_level(&gt.rbox) != spec.level {
            continue;
        }
        let shrunk = shrink_box(&gt.rbox, shrink);
        let q = box_vertices(&shrunk);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &q.pts {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        // cell centers (k + 0.5) * stride within [lo, hi]
        let col_lo = ((x0 / stride - 0.5).ceil().max(0.0)) as usize;
        let row_lo = ((y0 / stride - 0.5).ceil().max(0.0)) as usize;
        let col_hi = (x1 / stride - 0.5).floor();
        let row_hi = (y1 / stride - 0.5).floor();
        if col_hi < 0.0 || row_hi < 0.0 {
            continue;
        }
        let col_hi = (col_hi as usize).min(w.saturating_sub(1));
        let row_hi = (row_hi as usize).min(h.saturating_sub(1));
        if w == 0 || h == 0 {
            continue;
        }
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let c = spec.cell_center(row, col);
                if !shrunk.contains(c) {
                    continue;
                }
                if let Some(prev) = owner[[row, col]] {
                    if !wins_over(&gt.rbox, &gts[prev].rbox) {
                        continue;
                    }
                }
                // the shrunk box lies inside the original, so this cannot fail
                let Ok(d) = center_to_dist(&gt.rbox, c.x, c.y) else {
                    continue;
                };
                owner[[row, col]] = Some(gi);
                cls[[row, col]] = 1;
                for (k, v) in d.to_array().into_iter().enumerate() {
                    reg[[k, row, col]] = v;
                }
            }
        }
    }
    LevelTargets {
        spec,
        cls,
        reg,
        owner,
    }
}

/// Binary positive-cell map of one level.
pub fn gen_cls_map(gts: &[GroundTruth], spec: LevelSpec, shrink: f64) -> Array2<u8> {
    gen_level_targets(gts, spec, shrink).cls
}

/// Five-channel `(l, t, r, b, theta)` regression map of one level.
pub fn gen_reg_map(gts: &[GroundTruth], spec: LevelSpec, shrink: f64) -> Array3<f64> {
    gen_level_targets(gts, spec, shrink).reg
}

/// Targets for every level of an image of the given size.
pub fn gen_gt_maps(
    gts: &[GroundTruth],
    image_height: usize,
    image_width: usize,
    shrink: f64,
) -> GtMaps {
    let levels = Level::ALL
        .iter()
        .map(|&l| {
            gen_level_targets(
                gts,
                LevelSpec::for_image(l, image_height, image_width),
                shrink,
            )
        })
        .collect();
    GtMaps { levels }
}

/// Second-stage regression deltas of a box relative to a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub vx: f64,
    pub vy: f64,
    pub vw: f64,
    pub vh: f64,
    pub vtheta: f64,
}

impl RegressionTarget {
    pub const ZERO: RegressionTarget = RegressionTarget {
        vx: 0.0,
        vy: 0.0,
        vw: 0.0,
        vh: 0.0,
        vtheta: 0.0,
    };

    pub fn to_array(&self) -> [f64; 5] {
        [self.vx, self.vy, self.vw, self.vh, self.vtheta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            vx: a[0],
            vy: a[1],
            vw: a[2],
            vh: a[3],
            vtheta: a[4],
        }
    }
}

pub fn encode_target(proposal: &RBoxCenter, gt: &RBoxCenter) -> RegressionTarget {
    RegressionTarget {
        vx: (gt.cx() - proposal.cx()) / proposal.w(),
        vy: (gt.cy() - proposal.cy()) / proposal.h(),
        vw: (gt.w() / proposal.w()).ln(),
        vh: (gt.h() / proposal.h()).ln(),
        vtheta: angle_diff(gt.theta(), proposal.theta()),
    }
}

/// Applies regression deltas to a proposal.
pub fn decode_target(
    proposal: &RBoxCenter,
    v: &RegressionTarget,
) -> Result<RBoxCenter, TargetError> {
    if v.to_array().iter().any(|x| !x.is_finite()) {
        return Err(TargetError::NonFinite);
    }
    let w = proposal.w() * v.vw.exp();
    let h = proposal.h() * v.vh.exp();
    Ok(RBoxCenter::new(
        proposal.cx() + v.vx * proposal.w(),
        proposal.cy() + v.vy * proposal.h(),
        w,
        h,
        normalize_angle(proposal.theta() + v.vtheta),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleLabel {
    Positive {
        gt_index: usize,
        target: RegressionTarget,
        transcript: String,
    },
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEntry {
    pub proposal_index: usize,
    pub proposal: RBoxCenter,
    pub label: SampleLabel,
}

impl SampleEntry {
    pub fn is_positive(&self) -> bool {
        matches!(self.label, SampleLabel::Positive { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleBatch {
    /// Positives first, then negatives, each in proposal order.
    pub entries: Vec<SampleEntry>,
}

impl SampleBatch {
    /// Batch size `N`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positive count `N+`.
    pub fn num_positive(&self) -> usize {
        self.entries.iter().filter(|e| e.is_positive()).count()
    }
}

/// Best GT for a proposal by rotated IoU (lowest index on ties).
pub fn best_match(proposal: &RBoxCenter, gts: &[GroundTruth]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, gt) in gts.iter().enumerate() {
        let iou = rotated_iou(proposal, &gt.rbox);
        if best.is_none_or(|(_, b)| iou > b) {
            best = Some((i, iou));
        }
    }
    best
}

/// Positive iff IoU with the best GT exceeds 0.6 and the angle difference
/// to it is under pi/6.
pub fn is_positive_match(proposal: &RBoxCenter, gt: &RBoxCenter, iou: f64) -> bool {
    iou > POSITIVE_IOU && angle_diff(gt.theta(), proposal.theta()).abs() < POSITIVE_MAX_ANGLE
}

fn subsample(mut pool: Vec<usize>, keep: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() > keep {
        let mut picked: Vec<usize> = index::sample(rng, pool.len(), keep)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        pool = picked;
    }
    pool
}

/// Labels proposals against the GT set and draws a batch of at most 256
/// samples with at most 64 positives.
pub fn frcnn_sample(proposals: &[RBoxCenter], gts: &[GroundTruth], seed: u64) -> SampleBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut matches = Vec::with_capacity(proposals.len());
    for (i, p) in proposals.iter().enumerate() {
        let m = best_match(p, gts);
        match m {
            Some((gi, iou)) if is_positive_match(p, &gts[gi].rbox, iou) => positives.push(i),
            _ => negatives.push(i),
        }
        matches.push(m);
    }
    let positives = subsample(positives, MAX_POSITIVES, &mut rng);
    let negatives = subsample(negatives, BATCH_SIZE - positives.len(), &mut rng);

    let mut entries = Vec::with_capacity(positives.len() + negatives.len());
    for i in positives {
        let (gi, _) = matches[i].expect("positives have a match");
        entries.push(SampleEntry {
            proposal_index: i,
            proposal: proposals[i],
            label: SampleLabel::Positive {
                gt_index: gi,
                target: encode_target(&proposals[i], &gts[gi].rbox),
                transcript: gts[gi].transcript.clone(),
            },
        });
    }
    for i in negatives {
        entries.push(SampleEntry {
            proposal_index: i,
            proposal: proposals[i],
            label: SampleLabel::Negative,
        });
    }
    SampleBatch { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist_to_center;
    use crate::geometry::RBoxDist;
    use std::f64::consts::FRAC_PI_4;

    fn rb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> RBoxCenter {
        RBoxCenter::new(cx, cy, w, h, t).unwrap()
    }

    #[test]
    fn level_buckets() {
        assert_eq!(assign_level(&rb(0.0, 0.0, 32.0, 32.0, 0.0)), Level::P2);
        assert_eq!(assign_level(&rb(0.0, 0.0, 64.0, 64.0, 0.0)), Level::P2);
        assert_eq!(assign_level(&rb(0.0, 0.0, 100.0, 100.0, 0.0)), Level::P3);
        assert_eq!(assign_level(&rb(0.0, 0.0, 200.0, 200.0, 0.0)), Level::P4);
        assert_eq!(assign_level(&rb(0.0, 0.0, 300.0, 300.0, 0.0)), Level::P5);
    }

    #[test]
    fn shrink_examples() {
        let b = rb(0.0, 0.0, 10.0, 20.0, 0.4);
        assert_eq!(shrink_box(&b, 1.0), b);
        let s = shrink_box(&b, 0.7);
        assert_eq!(s.to_array(), [0.0, 0.0, 7.0, 14.0, 0.4]);
        assert!((s.area() - 0.49 * b.area()).abs() < 1e-9);
    }

    #[test]
    fn empty_gt_gives_zero_maps() {
        let spec = LevelSpec::new(Level::P2, 8, 10);
        let t = gen_level_targets(&[], spec, DEFAULT_SHRINK);
        assert_eq!(t.cls.shape(), &[8, 10]);
        assert_eq!(t.reg.shape(), &[5, 8, 10]);
        assert!(t.cls.iter().all(|&v| v == 0));
        assert!(t.reg.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_box() {
        // 4x4 box centered on cell (2, 3) of P2; shrunk to 2.8x2.8, it covers
        // only that cell center
        let spec = LevelSpec::new(Level::P2, 6, 6);
        let c = spec.cell_center(2, 3);
        let gt = GroundTruth::new(rb(c.x, c.y, 4.0, 4.0, 0.2), "a");
        let t = gen_level_targets(&[gt], spec, DEFAULT_SHRINK);
        assert_eq!(t.cls.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert_eq!(t.cls[[2, 3]], 1);
        let cell: Vec<f64> = (0..5).map(|k| t.reg[[k, 2, 3]]).collect();
        assert!((cell[0] - 2.0).abs() < 1e-12 && (cell[1] - 2.0).abs() < 1e-12);
        assert!((cell[2] - 2.0).abs() < 1e-12 && (cell[3] - 2.0).abs() < 1e-12);
        assert!((cell[4] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn box_lands_on_its_bucket_only() {
        let gt = GroundTruth::new(rb(100.0, 100.0, 100.0, 100.0, 0.1), "");
        let maps = gen_gt_maps(&[gt], 256, 256, DEFAULT_SHRINK);
        let count = |l: Level| {
            maps.level(l)
                .unwrap()
                .cls
                .iter()
                .filter(|&&v| v == 1)
                .count()
        };
        assert_eq!(count(Level::P2), 0);
        assert!(count(Level::P3) > 0);
        assert_eq!(count(Level::P4), 0);
        assert_eq!(count(Level::P5), 0);
    }

    #[test]
    fn reg_map_round_trips() {
        let gts = vec![
            GroundTruth::new(rb(60.0, 40.0, 70.0, 20.0, 0.5), "x"),
            GroundTruth::new(rb(150.0, 120.0, 48.0, 30.0, 2.0), "y"),
        ];
        let spec = LevelSpec::for_image(Level::P2, 200, 200);
        let t = gen_level_targets(&gts, spec, DEFAULT_SHRINK);
        let mut seen = 0;
        for ((row, col), &v) in t.cls.indexed_iter() {
            if v == 0 {
                continue;
            }
            seen += 1;
            let d = RBoxDist::new(
                t.reg[[0, row, col]],
                t.reg[[1, row, col]],
                t.reg[[2, row, col]],
                t.reg[[3, row, col]],
                t.reg[[4, row, col]],
            );
            assert!(d.l >= 0.0 && d.t >= 0.0 && d.r >= 0.0 && d.b >= 0.0);
            let c = spec.cell_center(row, col);
            let back = dist_to_center(&d, c.x, c.y).unwrap();
            let gt = &gts[t.owner[[row, col]].unwrap()].rbox;
            for (a, b) in back.to_array().iter().zip(gt.to_array()) {
                assert!((a - b).abs() < 1e-4);
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn overlap_goes_to_smaller_box_regardless_of_order() {
        let big = GroundTruth::new(rb(40.0, 40.0, 60.0, 60.0, 0.0), "big");
        let small = GroundTruth::new(rb(40.0, 40.0, 20.0, 20.0, 0.0), "small");
        let spec = LevelSpec::for_image(Level::P2, 80, 80);
        let a = gen_level_targets(&[big.clone(), small.clone()], spec, DEFAULT_SHRINK);
        let b = gen_level_targets(&[small, big], spec, DEFAULT_SHRINK);
        assert_eq!(a.cls, b.cls);
        assert_eq!(a.reg, b.reg);
        // cell (9, 9) has center (38, 38), inside both shrunk boxes
        assert_eq!(a.owner[[9, 9]], Some(1));
        assert!((a.reg[[0, 9, 9]] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn encode_examples() {
        let p = rb(0.0, 0.0, 10.0, 20.0, 0.0);
        assert_eq!(encode_target(&p, &p), RegressionTarget::ZERO);
        let v = encode_target(&p, &rb(5.0, 0.0, 10.0, 20.0, 0.0));
        assert_eq!(v.to_array(), [0.5, 0.0, 0.0, 0.0, 0.0]);
        let v = encode_target(&p, &rb(0.0, 0.0, 20.0, 20.0, 0.0));
        assert!((v.vw - 2f64.ln()).abs() < 1e-15);
        assert!((v.vw - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decode_examples() {
        let p = rb(0.0, 0.0, 10.0, 20.0, 0.0);
        assert_eq!(decode_target(&p, &RegressionTarget::ZERO).unwrap(), p);
        let moved = decode_target(
            &p,
            &RegressionTarget {
                vx: 0.5,
                ..RegressionTarget::ZERO
            },
        )
        .unwrap();
        assert_eq!((moved.cx(), moved.cy()), (5.0, 0.0));
        let overflow = RegressionTarget {
            vw: 1000.0,
            ..RegressionTarget::ZERO
        };
        assert!(matches!(
            decode_target(&p, &overflow),
            Err(TargetError::InvalidBox(_))
        ));
        let nan = RegressionTarget {
            vx: f64::NAN,
            ..RegressionTarget::ZERO
        };
        assert_eq!(decode_target(&p, &nan), Err(TargetError::NonFinite));
    }

    #[test]
    fn sampling_gates() {
        let gt = rb(100.0, 100.0, 100.0, 20.0, 0.0);
        let gts = vec![GroundTruth::new(gt, "word")];
        // shift along width: IoU = (100 - dx) / (100 + dx) = 0.7
        let dx = 30.0 / 1.7;
        let shifted = rb(100.0 + dx, 100.0, 100.0, 20.0, 0.0);
        assert!((rotated_iou(&shifted, &gt) - 0.7).abs() < 1e-9);
        let rotated = rb(100.0, 100.0, 100.0, 20.0, FRAC_PI_4);
        let far = rb(100.0 + 54.0, 100.0, 100.0, 20.0, 0.0);
        assert!((rotated_iou(&far, &gt) - 0.3).abs() < 0.01);
        let batch = frcnn_sample(&[shifted, rotated, far], &gts, 1);
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.num_positive(), 1);
        let pos = &batch.entries[0];
        assert_eq!(pos.proposal_index, 0);
        match &pos.label {
            SampleLabel::Positive {
                gt_index,
                target,
                transcript,
            } => {
                assert_eq!(*gt_index, 0);
                assert_eq!(transcript, "word");
                assert!((target.vx + dx / 100.0).abs() < 1e-12);
            }
            SampleLabel::Negative => panic!("expected positive"),
        }
    }

    #[test]
    fn sampling_respects_caps() {
        let gt = rb(100.0, 100.0, 100.0, 20.0, 0.0);
        let gts = vec![GroundTruth::new(gt, "")];
        let mut props = vec![gt; 100];
        props.extend(std::iter::repeat_n(rb(900.0, 900.0, 10.0, 10.0, 0.0), 500));
        let a = frcnn_sample(&props, &gts, 42);
        assert_eq!(a.len(), 256);
        assert_eq!(a.num_positive(), 64);
        assert_eq!(a, frcnn_sample(&props, &gts, 42));
        assert!(frcnn_sample(&[], &gts, 0).is_empty());
        let none = frcnn_sample(&props[..10], &[], 0);
        assert_eq!(none.num_positive(), 0);
        assert_eq!(none.len(), 10);
    }
}
