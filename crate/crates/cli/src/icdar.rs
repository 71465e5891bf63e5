//! ICDAR-style text lines.
//!
//! Ground truth: `x1,y1,x2,y2,x3,y3,x4,y4,transcript`.
//! Detections: `x1,y1,x2,y2,x3,y3,x4,y4,s_d,s_r,transcript`.
//!
//! The transcript is the last field and may itself contain commas.
//! Quadrilaterals are converted to their minimum-area rotated rectangle.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rotext_core::geometry::{box_vertices, quad_to_rbox, QuadBox};
use rotext_core::{Detection, GroundTruth};

use crate::error::{CliError, Result};

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn parse_coords(fields: &[&str]) -> std::result::Result<[f64; 8], String> {
    let mut c = [0.0; 8];
    for (k, f) in fields.iter().take(8).enumerate() {
        c[k] = f
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("coordinate {} is not a number: {:?}", k + 1, f.trim()))?;
    }
    Ok(c)
}

fn quad_box(coords: [f64; 8]) -> std::result::Result<rotext_core::RBoxCenter, String> {
    quad_to_rbox(&QuadBox::from_coords(coords)).map_err(|e| e.to_string())
}

pub fn parse_gt_line(line: &str) -> std::result::Result<GroundTruth, String> {
    let fields: Vec<&str> = line.splitn(9, ',').collect();
    if fields.len() < 8 {
        return Err(format!(
            "expected 8 coordinates and a transcript, got {} fields",
            fields.len()
        ));
    }
    let rbox = quad_box(parse_coords(&fields)?)?;
    let transcript = fields.get(8).map_or("", |s| s.trim());
    Ok(GroundTruth::new(rbox, transcript))
}

/// Detection line; a ground-truth style line (no scores) is accepted with
/// `s_d = 1`, `s_r = 0`.
pub fn parse_detection_line(line: &str) -> std::result::Result<Detection, String> {
    let fields: Vec<&str> = line.splitn(11, ',').collect();
    if fields.len() >= 10 {
        if let (Ok(s_d), Ok(s_r)) = (
            fields[8].trim().parse::<f64>(),
            fields[9].trim().parse::<f64>(),
        ) {
            let rbox = quad_box(parse_coords(&fields)?)?;
            return Ok(Detection {
                rbox,
                s_d,
                s_r,
                transcript: fields.get(10).map_or("", |s| s.trim()).to_string(),
            });
        }
    }
    let gt = parse_gt_line(line)?;
    Ok(Detection {
        rbox: gt.rbox,
        s_d: 1.0,
        s_r: 0.0,
        transcript: gt.transcript,
    })
}

fn read_with<T>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            parse(&l).map_err(|msg| CliError::Line {
                path: path.to_path_buf(),
                line: n,
                msg,
            })
        })
        .collect()
}

pub fn read_gt_file(path: &Path) -> Result<Vec<GroundTruth>> {
    read_with(path, parse_gt_line)
}

pub fn read_detection_file(path: &Path) -> Result<Vec<Detection>> {
    read_with(path, parse_detection_line)
}

fn coord(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".to_string()
    } else {
        s
    }
}

/// One output line per detection, vertices rounded to one decimal.
pub fn format_detection(d: &Detection) -> String {
    let mut out = String::new();
    for c in box_vertices(&d.rbox).to_coords() {
        out.push_str(&coord(c));
        out.push(',');
    }
    let _ = write!(out, "{:.4},{:.4},{}", d.s_d, d.s_r, d.transcript);
    out
}

pub fn format_gt(gt: &GroundTruth) -> String {
    let coords: Vec<String> = box_vertices(&gt.rbox)
        .to_coords()
        .iter()
        .map(|&c| coord(c))
        .collect();
    format!("{},{}", coords.join(","), gt.transcript)
}
