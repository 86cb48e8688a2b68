//! Camera path files: one view per line,
//! `r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz fx fy cx cy width height time`
//! with the world-to-camera extrinsics in row-major order. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::{Matrix3, Vector3};
use sp4d::render::camera::{DEFAULT_FAR, DEFAULT_NEAR};
use sp4d::render::Camera;

const FIELDS: usize = 19;

pub fn parse(text: &str) -> Result<Vec<Camera>> {
    let mut cams = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .with_context(|| format!("line {}: not a number", no + 1))?;
        if vals.len() != FIELDS {
            bail!("line {}: expected {FIELDS} values, found {}", no + 1, vals.len());
        }
        let size = |v: f64, name: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                bail!("line {}: {name} must be a positive integer, got {v}", no + 1)
            }
        };
        let p = &vals;
        let cam = Camera {
            fx: p[12],
            fy: p[13],
            cx: p[14],
            cy: p[15],
            width: size(p[16], "width")?,
            height: size(p[17], "height")?,
            rotation: Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]),
            translation: Vector3::new(p[3], p[7], p[11]),
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
            time: p[18],
        };
        cam.validate().with_context(|| format!("line {}", no + 1))?;
        cams.push(cam);
    }
    if cams.is_empty() {
        bail!("camera path has no views");
    }
    Ok(cams)
}

pub fn read(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading camera path {}", path.display()))?;
    parse(&text).with_context(|| format!("camera path {}", path.display()))
}

pub fn format(cams: &[Camera]) -> String {
    let mut out = String::from("# r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz fx fy cx cy width height time\n");
    for c in cams {
        let (r, t) = (&c.rotation, &c.translation);
        let vals = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            c.fx, c.fy, c.cx, c.cy,
        ];
        for v in vals {
            write!(out, "{v:e} ").expect("writing to a string");
        }
        writeln!(out, "{} {} {:e}", c.width, c.height, c.time).expect("writing to a string");
    }
    out
}

/// Spreads timestamps evenly over `[start, end]`.
pub fn retime(cams: &mut [Camera], start: f64, end: f64) {
    let n = cams.len();
    for (i, c) in cams.iter_mut().enumerate() {
        let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        c.time = start + (end - start) * f;
    }
}
