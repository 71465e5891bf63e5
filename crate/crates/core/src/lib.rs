//! Mathematical core of a two-stage rotated scene-text detector with an
//! anchor-free proposal head.
//!
//! * [`geometry`]: rotated-box parameterizations, exact rotated IoU.
//! * [`targets`]: per-level ground-truth maps and second-stage sampling.
//! * [`losses`]: training losses with analytic gradients.
//! * [`roialign`]: rotated RoI Align and max pooling.
//! * [`postprocess`]: proposal decoding, rotated NMS, rescoring, filtering.
//! * [`eval`]: precision/recall/F-measure by IoU matching.

pub mod eval;
pub mod geometry;
pub mod losses;
pub mod postprocess;
pub mod roialign;
pub mod sequence;
pub mod targets;

pub use eval::{evaluate, EvalReport};
pub use geometry::{
    angle_diff, box_vertices, center_to_dist, dist_to_center, normalize_angle, quad_to_rbox,
    rotated_iou, GeometryError, Point, QuadBox, RBoxCenter, RBoxDist,
};
pub use postprocess::{
    decode_appn, greedy_decode, infer_pipeline, joint_filter, rec_score, refine, rotated_nms,
    Detection, FilterConfig, LevelMaps, LevelOutput, PipelineError, SecondStage, StageDetection,
    StubStage,
};
pub use sequence::{Alphabet, ProbSeq, SequenceError};
pub use targets::{
    assign_level, decode_target, encode_target, frcnn_sample, gen_gt_maps, shrink_box, GroundTruth,
    GtMaps, Level, LevelSpec, RegressionTarget, SampleBatch,
};
