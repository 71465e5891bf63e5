//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rotext_core::{Detection, GroundTruth, ProbSeq, RBoxCenter};

pub fn rbox(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> RBoxCenter {
    RBoxCenter::new(cx, cy, w, h, theta).unwrap()
}

/// Image point of box-local coordinates `(u, v)`.
pub fn local_to_image(b: &RBoxCenter, u: f64, v: f64) -> (f64, f64) {
    let (s, c) = b.theta().sin_cos();
    (b.cx() + u * c - v * s, b.cy() + u * s + v * c)
}

pub fn corners(b: &RBoxCenter) -> [(f64, f64); 4] {
    let (hw, hh) = (b.w() / 2.0, b.h() / 2.0);
    [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(u, v)| local_to_image(b, u, v))
}

/// Closed x-interval where the horizontal line at `y` crosses the box.
fn row_span(b: &RBoxCenter, y: f64) -> Option<(f64, f64)> {
    let (s, c) = b.theta().sin_cos();
    let dy = y - b.cy();
    // |(x - cx) * c + dy * s| <= w/2 and |-(x - cx) * s + dy * c| <= h/2
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (alpha, beta, r) in [(c, dy * s, b.w() / 2.0), (-s, dy * c, b.h() / 2.0)] {
        if alpha.abs() < 1e-15 {
            if beta.abs() > r {
                return None;
            }
            continue;
        }
        let (a, z) = ((-r - beta) / alpha, (r - beta) / alpha);
        lo = lo.max(a.min(z) + b.cx());
        hi = hi.min(a.max(z) + b.cx());
    }
    (lo <= hi).then_some((lo, hi))
}

/// Number of `k` in `0..n` with `x0 + (k + 0.5) * dx` inside `[lo, hi]`.
fn centers_in(lo: f64, hi: f64, x0: f64, dx: f64, n: usize) -> usize {
    let kmin = ((lo - x0) / dx - 0.5).ceil().max(0.0);
    let kmax = ((hi - x0) / dx - 0.5).floor().min(n as f64 - 1.0);
    if kmax < kmin {
        0
    } else {
        (kmax - kmin) as usize + 1
    }
}

/// IoU estimated by counting pixel centers of an `n x n` grid laid over the
/// joint bounding box of both boxes.
pub fn raster_iou(a: &RBoxCenter, b: &RBoxCenter, n: usize) -> f64 {
    let pts: Vec<(f64, f64)> = corners(a).into_iter().chain(corners(b)).collect();
    let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut inter, mut union) = (0usize, 0usize);
    for row in 0..n {
        let y = y0 + (row as f64 + 0.5) * dy;
        let sa = row_span(a, y);
        let sb = row_span(b, y);
        let ca = sa.map_or(0, |(l, h)| centers_in(l, h, x0, dx, n));
        let cb = sb.map_or(0, |(l, h)| centers_in(l, h, x0, dx, n));
        let ci = match (sa, sb) {
            (Some((la, ha)), Some((lb, hb))) if la.max(lb) <= ha.min(hb) => {
                centers_in(la.max(lb), ha.min(hb), x0, dx, n)
            }
            _ => 0,
        };
        inter += ci;
        union += ca + cb - ci;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Removes repeats then blanks (class 0).
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != 0 {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Likelihood of `label` by summing over every one of the `K^T` frame paths,
/// together with the gradient of `-ln p` with respect to each probability.
pub fn ctc_brute_force(seq: &ProbSeq, label: &[usize]) -> (f64, Vec<f64>) {
    let k = seq.num_classes();
    let t = seq.len();
    let mut p = 0.0;
    let mut dp = vec![0.0; k * t];
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path) == label {
            let prob: f64 = path
                .iter()
                .enumerate()
                .map(|(i, &c)| seq.row(i)[c])
                .product();
            p += prob;
            for (i, &c) in path.iter().enumerate() {
                let others: f64 = path
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &cj)| seq.row(j)[cj])
                    .product();
                dp[i * k + c] += others;
            }
        }
        let mut pos = 0;
        loop {
            if pos == t {
                let grad = dp.iter().map(|d| -d / p).collect();
                return (p, grad);
            }
            path[pos] += 1;
            if path[pos] < k {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Greedy NMS written as "keep a box unless it overlaps something already
/// kept", visiting by descending score then index.
pub fn nms_reference(dets: &[(RBoxCenter, f64)], thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&j| rotext_core::rotated_iou(&dets[j].0, &dets[i].0) <= thresh)
        {
            kept.push(i);
        }
    }
    kept
}

/// Indices in `D_r ∪ D_d`.
pub fn joint_reference(dets: &[Detection], t_d: f64, t_r: f64) -> Vec<usize> {
    let d_r: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].s_r > t_r).collect();
    let d_d: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].s_d > t_d).collect();
    let mut union: Vec<usize> = d_r.into_iter().chain(d_d).collect();
    union.sort_unstable();
    union.dedup();
    union
}

pub fn random_box(rng: &mut ChaCha8Rng, center: (f64, f64), size: (f64, f64)) -> RBoxCenter {
    rbox(
        rng.gen_range(center.0..center.1),
        rng.gen_range(center.0..center.1),
        rng.gen_range(size.0..size.1),
        rng.gen_range(size.0..size.1),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
}

/// A random box, and a second one near it half of the time so that
/// overlapping pairs are common.
pub fn random_pair(rng: &mut ChaCha8Rng) -> (RBoxCenter, RBoxCenter) {
    let a = random_box(rng, (0.0, 100.0), (5.0, 60.0));
    let b = if rng.gen_bool(0.5) {
        let (cx, cy) = (
            a.cx() + rng.gen_range(-15.0..15.0),
            a.cy() + rng.gen_range(-15.0..15.0),
        );
        rbox(
            cx,
            cy,
            a.w() * rng.gen_range(0.6..1.4),
            a.h() * rng.gen_range(0.6..1.4),
            a.theta() + rng.gen_range(-0.6..0.6),
        )
    } else {
        random_box(rng, (0.0, 100.0), (5.0, 60.0))
    };
    (a, b)
}

/// Random probability rows, bounded away from zero.
pub fn random_seq(rng: &mut ChaCha8Rng, classes: usize, frames: usize) -> ProbSeq {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        })
        .collect();
    ProbSeq::from_rows(&rows).unwrap()
}

/// Every label of length `0..=max_len` over classes `1..=symbols`.
pub fn all_labels(symbols: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for s in 1..=symbols {
                let mut e: Vec<usize> = l.clone();
                e.push(s);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn random_detection(rng: &mut ChaCha8Rng) -> Detection {
    Detection {
        rbox: random_box(rng, (0.0, 200.0), (5.0, 50.0)),
        s_d: rng.gen_range(0.0..1.0),
        s_r: rng.gen_range(0.0..1.0),
        transcript: String::new(),
    }
}

/// `(w, h)` with area inside the level's bucket and both sides long enough
/// that the shrunk box always covers a cell center of that level.
pub fn random_size(rng: &mut ChaCha8Rng, level: usize) -> (f64, f64) {
    let (w_range, min_h, max_side, lo_area, hi_area): ((f64, f64), f64, f64, f64, f64) = match level
    {
        0 => ((12.0, 60.0), 12.0, 60.0, 0.0, 4096.0),
        1 => ((70.0, 120.0), 20.0, 120.0, 4097.0, 16384.0),
        2 => ((140.0, 250.0), 40.0, 250.0, 16385.0, 65536.0),
        _ => ((270.0, 400.0), 80.0, 300.0, 65537.0, f64::INFINITY),
    };
    let w: f64 = rng.gen_range(w_range.0..w_range.1);
    let lo = min_h.max(lo_area / w);
    let hi = max_side.min(hi_area / w);
    (w, rng.gen_range(lo..hi))
}

/// Up to `max_boxes` boxes of mixed pyramid levels whose circumscribed
/// circles are disjoint and inside an `image x image` canvas.
pub fn random_layout(rng: &mut ChaCha8Rng, image: f64, max_boxes: usize) -> Vec<RBoxCenter> {
    let target = rng.gen_range(1..=max_boxes);
    let mut boxes: Vec<RBoxCenter> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < target && attempts < 500 {
        attempts += 1;
        let level = rng.gen_range(0..4);
        let (w, h) = random_size(rng, level);
        let r = 0.5 * w.hypot(h);
        if 2.0 * r + 2.0 >= image {
            continue;
        }
        let cx = rng.gen_range(r + 1.0..image - r - 1.0);
        let cy = rng.gen_range(r + 1.0..image - r - 1.0);
        let clear = boxes.iter().all(|b| {
            let rb = 0.5 * b.w().hypot(b.h());
            (b.cx() - cx).hypot(b.cy() - cy) > r + rb + 1.0
        });
        if clear {
            boxes.push(rbox(cx, cy, w, h, rng.gen_range(-1.0..2.0)));
        }
    }
    boxes
}

/// Twelve proposals against two boxes, with the expected label of each.
pub fn sampling_fixture() -> (Vec<GroundTruth>, Vec<(RBoxCenter, Option<usize>)>) {
    let gts = vec![
        GroundTruth::new(rbox(100.0, 100.0, 80.0, 40.0, 0.0), "rect"),
        GroundTruth::new(rbox(300.0, 100.0, 60.0, 60.0, 0.0), "square"),
    ];
    let proposals = vec![
        (rbox(100.0, 100.0, 80.0, 40.0, 0.0), Some(0)), // identical
        (rbox(110.0, 100.0, 80.0, 40.0, 0.0), Some(0)), // IoU 70/90
        (rbox(118.0, 100.0, 80.0, 40.0, 0.0), Some(0)), // IoU 62/98
        (rbox(122.0, 100.0, 80.0, 40.0, 0.0), None),    // IoU 58/102
        (rbox(100.0, 100.0, 72.0, 36.0, 0.0), Some(0)), // IoU 0.81
        (rbox(100.0, 100.0, 60.0, 30.0, 0.0), None),    // IoU 0.5625
        (rbox(100.0, 100.0, 80.0, 40.0, 0.1), Some(0)), // small turn
        (
            rbox(100.0, 100.0, 40.0, 80.0, std::f64::consts::FRAC_PI_2),
            None,
        ), // same region, angle off by pi/2
        (rbox(300.0, 100.0, 60.0, 60.0, 0.5), Some(1)), // IoU > 0.7, angle below pi/6
        (rbox(300.0, 100.0, 60.0, 60.0, 0.55), None),   // IoU > 0.7, angle above pi/6
        (
            rbox(300.0, 100.0, 60.0, 60.0, std::f64::consts::FRAC_PI_2),
            None,
        ), // IoU 1, angle pi/2
        (rbox(600.0, 400.0, 50.0, 20.0, 0.0), None),    // far away
    ];
    (gts, proposals)
}
