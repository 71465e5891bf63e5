//! Implementations of the `rotext` subcommands.

use std::fs;
use std::path::Path;

use rotext_core::losses::gradcheck::{self, GradCheck, LossKind};
use rotext_core::postprocess::logits_from_targets;
use rotext_core::{
    evaluate, gen_gt_maps, infer_pipeline, Alphabet, Detection, EvalReport, FilterConfig, Level,
    SecondStage, StubStage,
};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::icdar::{format_detection, read_detection_file, read_gt_file};
use crate::manifest::{ConfigOverrides, LevelEntry, RunManifest};
use crate::tensor::Tensor;

/// Runs the inference pipeline described by a manifest and writes one
/// detection line per result.
pub fn cmd_infer(
    manifest_path: &Path,
    output: &Path,
    overrides: &ConfigOverrides,
) -> Result<Vec<Detection>> {
    let manifest = RunManifest::read(manifest_path)?;
    let cfg = overrides.apply(manifest.config);
    cfg.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let maps = manifest.load_levels(manifest_path)?;
    let file_stage = manifest.load_stage(manifest_path)?;
    let stub = StubStage::default();
    let stage: &dyn SecondStage = match &file_stage {
        Some(s) => s,
        None => &stub,
    };
    let alphabet =
        Alphabet::new(&manifest.alphabet).map_err(|e| CliError::Validation(e.to_string()))?;
    let dets = infer_pipeline(&maps, stage, &alphabet, &cfg).map_err(|e| CliError::Manifest {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut text = String::new();
    for d in &dets {
        text.push_str(&format_detection(d));
        text.push('\n');
    }
    fs::write(output, text).map_err(|e| CliError::io(output, e))?;
    Ok(dets)
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: Level,
    pub height: usize,
    pub width: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GtSummary {
    pub transcript: String,
    pub assigned: Level,
    /// Positive cells owned by this box on P2..P5.
    pub positives: [usize; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetSummary {
    pub levels: Vec<LevelSummary>,
    pub gts: Vec<GtSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetOptions {
    pub image_height: usize,
    pub image_width: usize,
    pub shrink: f64,
    /// When set, also write logit maps a perfect head would output (using
    /// this base size) plus a `manifest.json` for `infer`.
    pub predictions_base_size: Option<f64>,
}

/// Writes `<level>_cls.rten` (`H x W`) and `<level>_reg.rten`
/// (`5 x H x W`) for every pyramid level.
pub fn cmd_gen_targets(
    gt_path: &Path,
    out_dir: &Path,
    opts: &TargetOptions,
) -> Result<TargetSummary> {
    if !(opts.shrink > 0.0 && opts.shrink <= 1.0) {
        return Err(CliError::Validation(format!(
            "shrink {} not in (0, 1]",
            opts.shrink
        )));
    }
    if opts.image_height == 0 || opts.image_width == 0 {
        return Err(CliError::Validation("image size must be positive".into()));
    }
    if let Some(b) = opts.predictions_base_size {
        if !(b.is_finite() && b > 0.0) {
            return Err(CliError::Validation(format!(
                "base size {b} must be positive"
            )));
        }
    }
    let gts = read_gt_file(gt_path)?;
    let maps = gen_gt_maps(&gts, opts.image_height, opts.image_width, opts.shrink);
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let mut levels = Vec::new();
    let mut per_gt = vec![[0usize; 4]; gts.len()];
    for t in &maps.levels {
        let name = t.spec.level.name();
        Tensor::from_array(&t.cls.mapv(f32::from))
            .write(&out_dir.join(format!("{name}_cls.rten")))?;
        Tensor::from_array(&t.reg.mapv(|v| v as f32))
            .write(&out_dir.join(format!("{name}_reg.rten")))?;
        for owner in t.owner.iter().flatten() {
            per_gt[*owner][t.spec.level.index()] += 1;
        }
        levels.push(LevelSummary {
            level: t.spec.level,
            height: t.spec.height,
            width: t.spec.width,
            positives: t.cls.iter().filter(|&&v| v == 1).count(),
        });
    }

    if let Some(base_size) = opts.predictions_base_size {
        let logits = logits_from_targets(&maps, base_size);
        let mut entries = Vec::new();
        for (lvl, t) in logits.levels.iter().zip(&maps.levels) {
            let name = t.spec.level.name();
            let obj = format!("{name}_obj_logits.rten");
            let reg = format!("{name}_reg_logits.rten");
            Tensor::from_array(&lvl.objectness).write(&out_dir.join(&obj))?;
            Tensor::from_array(&lvl.regression).write(&out_dir.join(&reg))?;
            entries.push(LevelEntry {
                stride: lvl.stride,
                objectness: obj.into(),
                regression: reg.into(),
            });
        }
        let manifest = RunManifest {
            image_height: opts.image_height,
            image_width: opts.image_width,
            levels: entries,
            second_stage: None,
            alphabet: String::new(),
            config: FilterConfig {
                base_size,
                ..FilterConfig::default()
            },
        };
        manifest.write(&out_dir.join("manifest.json"))?;
    }

    let gts = gts
        .iter()
        .zip(per_gt)
        .map(|(g, positives)| GtSummary {
            transcript: g.transcript.clone(),
            assigned: rotext_core::assign_level(&g.rbox),
            positives,
        })
        .collect();
    Ok(TargetSummary { levels, gts })
}

/// Finite-difference check of every loss gradient. The boolean is true when
/// all losses pass.
pub fn cmd_loss_check(
    seed: u64,
    cases: usize,
    corrupt: Option<LossKind>,
) -> (Vec<GradCheck>, bool) {
    let report = gradcheck::run(seed, cases, corrupt);
    let ok = report.iter().all(GradCheck::passed);
    (report, ok)
}

pub fn cmd_eval(det_path: &Path, gt_path: &Path, iou: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(CliError::Validation(format!("iou {iou} not in [0, 1]")));
    }
    let dets = read_detection_file(det_path)?;
    let gts = read_gt_file(gt_path)?;
    Ok(evaluate(&dets, &gts, iou))
}
