//! Run manifests and the file-backed second stage.
//!
//! A manifest is a JSON document; relative paths resolve against the
//! manifest's directory:
//!
//! ```json
//! {
//!   "image_height": 640,
//!   "image_width": 640,
//!   "levels": [
//!     { "stride": 4, "objectness": "p2_obj.rten", "regression": "p2_reg.rten" }
//!   ],
//!   "second_stage": {
//!     "regression": "stage_reg.rten",
//!     "scores": "stage_scores.rten",
//!     "sequences": "stage_seq.rten"
//!   },
//!   "alphabet": "abcdefghijklmnopqrstuvwxyz0123456789",
//!   "config": { "t_d": 0.7 }
//! }
//! ```
//!
//! `second_stage` is optional (identity refinement with `s_d = 1` is used
//! without it), as is `sequences` inside it (then `s_r = 0`).

use std::fs;
use std::path::{Path, PathBuf};

use rotext_core::postprocess::{LevelOutput, StageDetection};
use rotext_core::{
    Alphabet, FilterConfig, LevelMaps, PipelineError, ProbSeq, RBoxCenter, RegressionTarget,
    SecondStage,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    pub stride: u32,
    pub objectness: PathBuf,
    pub regression: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondStageEntry {
    /// `N x 5` regression deltas.
    pub regression: PathBuf,
    /// `N`, `N x 1` detection scores or `N x 2` class probabilities.
    pub scores: PathBuf,
    /// `N x T x (|S| + 1)` recognition probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequences: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub image_height: usize,
    pub image_width: usize,
    pub levels: Vec<LevelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_stage: Option<SecondStageEntry>,
    #[serde(default)]
    pub alphabet: String,
    #[serde(default)]
    pub config: FilterConfig,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Manifest {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |msg: String| CliError::Manifest {
            path: path.to_path_buf(),
            msg,
        };
        if self.image_height == 0 || self.image_width == 0 {
            return Err(bad("image size must be positive".into()));
        }
        for l in &self.levels {
            if !matches!(l.stride, 4 | 8 | 16 | 32) {
                return Err(bad(format!(
                    "stride {} is not one of 4, 8, 16, 32",
                    l.stride
                )));
            }
        }
        Alphabet::new(&self.alphabet).map_err(|e| bad(format!("alphabet: {e}")))?;
        let base = base_dir(path);
        for f in self.files() {
            let full = base.join(f);
            if !full.is_file() {
                return Err(CliError::io(
                    &full,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "referenced file does not exist",
                    ),
                ));
            }
        }
        Ok(())
    }

    fn files(&self) -> Vec<&PathBuf> {
        let mut out: Vec<&PathBuf> = self
            .levels
            .iter()
            .flat_map(|l| [&l.objectness, &l.regression])
            .collect();
        if let Some(s) = &self.second_stage {
            out.push(&s.regression);
            out.push(&s.scores);
            out.extend(s.sequences.as_ref());
        }
        out
    }

    /// Loads the level tensors and checks them against the image size.
    pub fn load_levels(&self, manifest_path: &Path) -> Result<LevelMaps> {
        let base = base_dir(manifest_path);
        let mut levels = Vec::with_capacity(self.levels.len());
        for entry in &self.levels {
            let obj_path = base.join(&entry.objectness);
            let reg_path = base.join(&entry.regression);
            let objectness = Tensor::read(&obj_path)?.into_array2(&obj_path)?;
            let regression = Tensor::read(&reg_path)?.into_array3(&reg_path)?;
            levels.push(LevelOutput {
                stride: entry.stride,
                objectness,
                regression,
            });
        }
        let maps = LevelMaps { levels };
        maps.validate(Some((self.image_height, self.image_width)))
            .map_err(|e| CliError::Manifest {
                path: manifest_path.to_path_buf(),
                msg: e.to_string(),
            })?;
        Ok(maps)
    }

    pub fn load_stage(&self, manifest_path: &Path) -> Result<Option<FileStage>> {
        let Some(entry) = &self.second_stage else {
            return Ok(None);
        };
        let alphabet = Alphabet::new(&self.alphabet).expect("validated on read");
        FileStage::load(&base_dir(manifest_path), entry, alphabet.num_classes()).map(Some)
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Second-stage outputs read from tensor files, indexed by the proposal's
/// position after the first NMS.
#[derive(Debug, Clone)]
pub struct FileStage {
    regression_path: PathBuf,
    deltas: Vec<[f64; 5]>,
    scores: Vec<f64>,
    sequences: Option<(PathBuf, usize, usize, Vec<f32>)>,
}

impl FileStage {
    pub fn load(base: &Path, entry: &SecondStageEntry, classes: usize) -> Result<Self> {
        let reg_path = base.join(&entry.regression);
        let reg = Tensor::read(&reg_path)?;
        let n = match reg.dims.as_slice() {
            [n, 5] => *n,
            other => return Err(tensor_shape(&reg_path, other, "N x 5")),
        };
        let deltas = reg
            .data
            .chunks_exact(5)
            .map(|c| std::array::from_fn(|k| c[k] as f64))
            .collect();

        let score_path = base.join(&entry.scores);
        let st = Tensor::read(&score_path)?;
        let scores: Vec<f64> = match st.dims.as_slice() {
            [m] | [m, 1] if *m == n => st.data.iter().map(|&v| v as f64).collect(),
            [m, 2] if *m == n => st.data.chunks_exact(2).map(|c| c[1] as f64).collect(),
            other => {
                return Err(tensor_shape(
                    &score_path,
                    other,
                    &format!("{n}, {n} x 1 or {n} x 2"),
                ))
            }
        };
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            let elem = if st.dims.get(1) == Some(&2) {
                2 * i + 1
            } else {
                i
            };
            return Err(CliError::Tensor {
                path: score_path,
                offset: 12 + 4 * st.dims.len() + 4 * elem,
                msg: format!("score {} outside [0, 1]", scores[i]),
            });
        }

        let sequences = match &entry.sequences {
            None => None,
            Some(p) => {
                let seq_path = base.join(p);
                let t = Tensor::read(&seq_path)?;
                match t.dims.as_slice() {
                    [m, steps, c] if *m == n && *c == classes => {
                        Some((seq_path, *steps, *c, t.data))
                    }
                    other => {
                        return Err(tensor_shape(
                            &seq_path,
                            other,
                            &format!("{n} x T x {classes} (alphabet + blank)"),
                        ))
                    }
                }
            }
        };
        Ok(Self {
            regression_path: reg_path,
            deltas,
            scores,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

fn tensor_shape(path: &Path, dims: &[usize], want: &str) -> CliError {
    CliError::Tensor {
        path: path.to_path_buf(),
        offset: 8,
        msg: format!("dims {dims:?}, expected {want}"),
    }
}

impl SecondStage for FileStage {
    fn detect(
        &self,
        index: usize,
        _: &RBoxCenter,
    ) -> std::result::Result<StageDetection, PipelineError> {
        let d = self.deltas.get(index).ok_or_else(|| {
            PipelineError::Provider(format!(
                "{}: proposal {index} has no row ({} rows)",
                self.regression_path.display(),
                self.deltas.len()
            ))
        })?;
        Ok(StageDetection {
            delta: RegressionTarget::from_array(*d),
            score: self.scores[index],
        })
    }

    fn recognize(
        &self,
        index: usize,
        _: &RBoxCenter,
    ) -> std::result::Result<Option<ProbSeq>, PipelineError> {
        let Some((path, steps, classes, data)) = &self.sequences else {
            return Ok(None);
        };
        let len = steps * classes;
        let chunk = data.get(index * len..(index + 1) * len).ok_or_else(|| {
            PipelineError::Provider(format!(
                "{}: proposal {index} has no sequence",
                path.display()
            ))
        })?;
        let seq =
            ProbSeq::new(*classes, chunk.iter().map(|&v| v as f64).collect()).map_err(|e| {
                PipelineError::Provider(format!(
                    "{}: byte {}: sequence {index}: {e}",
                    path.display(),
                    24 + 4 * index * len
                ))
            })?;
        Ok(Some(seq))
    }
}

/// Command-line overrides of the manifest's filter settings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfigOverrides {
    pub base_size: Option<f64>,
    pub t_d: Option<f64>,
    pub t_r: Option<f64>,
    pub nms_iou: Option<f64>,
    pub score_thresh: Option<f64>,
    pub topk: Option<usize>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut cfg: FilterConfig) -> FilterConfig {
        if let Some(v) = self.base_size {
            cfg.base_size = v;
        }
        if let Some(v) = self.t_d {
            cfg.t_d = v;
        }
        if let Some(v) = self.t_r {
            cfg.t_r = v;
        }
        if let Some(v) = self.nms_iou {
            cfg.nms_iou = v;
        }
        if let Some(v) = self.score_thresh {
            cfg.score_thresh = v;
        }
        if let Some(v) = self.topk {
            cfg.topk = v;
        }
        cfg
    }
}
