//! Rotated RoI feature extraction.
//!
//! A rotated proposal is split into `out_h x out_w` equal bins along its own
//! axes. [`rroi_align`] averages a regular lattice of bilinear samples per
//! bin; [`rroi_pool_max`] takes the maximum of a 2x2 lattice, matching the
//! older max-pooling variant.

use ndarray::{Array3, ArrayView3, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::RBoxCenter;

pub const DEFAULT_SAMPLES_PER_BIN: usize = 2;

// below this many channels the per-channel loop is not worth splitting
const PAR_CHANNELS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoiAlignError {
    #[error("feature map dims must be >= 1, got {c}x{h}x{w}")]
    EmptyMap { c: usize, h: usize, w: usize },
    #[error("spatial scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("output size and samples per bin must be >= 1")]
    BadOutput,
    #[error("box projects to a degenerate region on the feature map")]
    DegenerateBox,
}

/// `C x H x W` feature map. Pixel `(i, j)` holds the value at map
/// coordinate `(x = j, y = i)`; image coordinates are multiplied by
/// `spatial_scale` to get map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f32>,
    spatial_scale: f64,
}

impl FeatureMap {
    pub fn new(data: Array3<f32>, spatial_scale: f64) -> Result<Self, RoiAlignError> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(RoiAlignError::EmptyMap { c, h, w });
        }
        if !(spatial_scale.is_finite() && spatial_scale > 0.0) {
            return Err(RoiAlignError::BadScale(spatial_scale));
        }
        Ok(Self {
            data,
            spatial_scale,
        })
    }

    pub fn data(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn spatial_scale(&self) -> f64 {
        self.spatial_scale
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// `C x out_h x out_w` pooled feature.
pub type PooledFeature = Array3<f32>;

/// Bilinear taps of one sample: up to four `(flat pixel index, weight)`.
#[derive(Clone, Copy, Default)]
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
    n: usize,
}

fn bilinear_taps(x: f64, y: f64, height: usize, width: usize) -> Taps {
    let mut taps = Taps::default();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    for (cx, cy, w) in corners {
        // zero padding outside the map
        if w == 0.0 || cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
            continue;
        }
        taps.idx[taps.n] = cy as usize * width + cx as usize;
        taps.w[taps.n] = w;
        taps.n += 1;
    }
    taps
}

/// Sample positions of every bin, in map coordinates, as bilinear taps.
fn bin_taps(
    map: &FeatureMap,
    bx: &RBoxCenter,
    out_h: usize,
    out_w: usize,
    samples: usize,
) -> Vec<Vec<Taps>> {
    let scale = map.spatial_scale;
    let (height, width) = (map.height(), map.width());
    let bin_w = bx.w() / out_w as f64;
    let bin_h = bx.h() / out_h as f64;
    let mut bins = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        for j in 0..out_w {
            let mut taps = Vec::with_capacity(samples * samples);
            for a in 0..samples {
                let v = -0.5 * bx.h() + (i as f64 + (a as f64 + 0.5) / samples as f64) * bin_h;
                for b in 0..samples {
                    let u = -0.5 * bx.w() + (j as f64 + (b as f64 + 0.5) / samples as f64) * bin_w;
                    let p = bx.to_image(u, v);
                    taps.push(bilinear_taps(p.x * scale, p.y * scale, height, width));
                }
            }
            bins.push(taps);
        }
    }
    bins
}

fn check_args(
    map: &FeatureMap,
    bx: &RBoxCenter,
    out_h: usize,
    out_w: usize,
    samples: usize,
) -> Result<(), RoiAlignError> {
    if out_h == 0 || out_w == 0 || samples == 0 {
        return Err(RoiAlignError::BadOutput);
    }
    let scale = map.spatial_scale;
    if !(bx.w() * scale > 0.0 && bx.h() * scale > 0.0) {
        return Err(RoiAlignError::DegenerateBox);
    }
    Ok(())
}

fn pool(
    map: &FeatureMap,
    bins: &[Vec<Taps>],
    out_h: usize,
    out_w: usize,
    reduce: impl Fn(&mut dyn Iterator<Item = f64>) -> f64 + Sync,
) -> PooledFeature {
    let channels = map.channels();
    let mut out = Array3::<f32>::zeros((channels, out_h, out_w));
    let fill = |c: usize, mut plane: ndarray::ArrayViewMut2<'_, f32>| {
        let src = map.data.index_axis(Axis(0), c);
        let src = src
            .as_slice()
            .map(std::borrow::Cow::Borrowed)
            .unwrap_or_else(|| std::borrow::Cow::Owned(src.iter().copied().collect::<Vec<f32>>()));
        for (k, taps) in bins.iter().enumerate() {
            let mut values = taps
                .iter()
                .map(|t| (0..t.n).map(|q| t.w[q] * src[t.idx[q]] as f64).sum::<f64>());
            plane[[k / out_w, k % out_w]] = reduce(&mut values) as f32;
        }
    };
    if channels >= PAR_CHANNELS {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(c, plane)| fill(c, plane));
    } else {
        for (c, plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            fill(c, plane);
        }
    }
    out
}

/// Rotated RoI Align: mean of `samples_per_bin_axis^2` bilinear samples per
/// bin, at fractional bin offsets `(k + 0.5) / s`.
pub fn rroi_align(
    map: &FeatureMap,
    bx: &RBoxCenter,
    out_h: usize,
    out_w: usize,
    samples_per_bin_axis: usize,
) -> Result<PooledFeature, RoiAlignError> {
    check_args(map, bx, out_h, out_w, samples_per_bin_axis)?;
    let bins = bin_taps(map, bx, out_h, out_w, samples_per_bin_axis);
    let count = (samples_per_bin_axis * samples_per_bin_axis) as f64;
    Ok(pool(map, &bins, out_h, out_w, |vals| {
        vals.sum::<f64>() / count
    }))
}

/// Rotated RoI pooling: maximum over the bin's 2x2 sample lattice.
pub fn rroi_pool_max(
    map: &FeatureMap,
    bx: &RBoxCenter,
    out_h: usize,
    out_w: usize,
) -> Result<PooledFeature, RoiAlignError> {
    check_args(map, bx, out_h, out_w, 2)?;
    let bins = bin_taps(map, bx, out_h, out_w, 2);
    Ok(pool(map, &bins, out_h, out_w, |vals| {
        vals.fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// [`rroi_align`] over many proposals in parallel; output order follows
/// `boxes`.
pub fn rroi_align_batch(
    map: &FeatureMap,
    boxes: &[RBoxCenter],
    out_h: usize,
    out_w: usize,
    samples_per_bin_axis: usize,
) -> Result<Vec<PooledFeature>, RoiAlignError> {
    boxes
        .par_iter()
        .map(|b| rroi_align(map, b, out_h, out_w, samples_per_bin_axis))
        .collect()
}
