//! Projective transforms and the image warp used for global motion
//! compensation.
//!
//! A [`Homography`] holds the eight free parameters of a planar projective
//! mapping with the ninth matrix entry fixed to one:
//!
//! ```text
//! x' = (a1 x + a2 y + a3) / (a7 x + a8 y + 1)
//! y' = (a4 x + a5 y + a6) / (a7 x + a8 y + 1)
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::Frame;

const DET_EPS: f64 = 1e-12;
const DENOM_EPS: f64 = 1e-9;
/// Slack on the in-bounds test so that exact integer mappings computed
/// through floating point land on the right side of the frame border.
const BOUNDS_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    pub params: [f64; 8],
}

impl Default for Homography {
    fn default() -> Self {
        Homography::identity()
    }
}

impl Homography {
    pub const fn identity() -> Homography {
        Homography {
            params: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Builds from `a1..a8` and rejects singular mappings.
    pub fn new(params: [f64; 8]) -> Result<Homography> {
        let h = Homography { params };
        let det = h.determinant();
        if !det.is_finite() || det.abs() <= DET_EPS || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::SingularHomography(det));
        }
        Ok(h)
    }

    pub const fn translation(tx: f64, ty: f64) -> Homography {
        Homography {
            params: [1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0],
        }
    }

    /// Rotation by `angle` radians and isotropic `scale` about `center`.
    pub fn similarity(center: Point, angle: f64, scale: f64, tx: f64, ty: f64) -> Homography {
        let (s, c) = angle.sin_cos();
        let a = scale * c;
        let b = scale * s;
        Homography {
            params: [
                a,
                -b,
                center.x - a * center.x + b * center.y + tx,
                b,
                a,
                center.y - b * center.x - a * center.y + ty,
                0.0,
                0.0,
            ],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let a = &self.params;
        [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], 1.0]]
    }

    /// Normalizes a full 3x3 matrix so its bottom-right entry is one.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Homography> {
        let s = m[2][2];
        if !s.is_finite() || s.abs() <= DET_EPS {
            return Err(Error::SingularHomography(s));
        }
        Homography::new([
            m[0][0] / s,
            m[0][1] / s,
            m[0][2] / s,
            m[1][0] / s,
            m[1][1] / s,
            m[1][2] / s,
            m[2][0] / s,
            m[2][1] / s,
        ])
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.matrix())
    }

    pub fn is_identity(&self) -> bool {
        *self == Homography::identity()
    }

    pub fn is_affine(&self) -> bool {
        self.params[6] == 0.0 && self.params[7] == 0.0
    }

    /// Maps `p` (frame k-1 coordinates) to frame k.
    pub fn warp_point(&self, p: Point) -> Result<Point> {
        let a = &self.params;
        let d = a[6] * p.x + a[7] * p.y + 1.0;
        if d.abs() <= DENOM_EPS {
            return Err(Error::DegenerateMapping(d));
        }
        Ok(Point {
            x: (a[0] * p.x + a[1] * p.y + a[2]) / d,
            y: (a[3] * p.x + a[4] * p.y + a[5]) / d,
        })
    }

    /// Like [`warp_point`](Self::warp_point) but returns `None` for a
    /// degenerate denominator; used on hot per-pel paths.
    #[inline]
    pub fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let a = &self.params;
        let d = a[6] * x + a[7] * y + 1.0;
        if d.abs() <= DENOM_EPS {
            return None;
        }
        Some((
            (a[0] * x + a[1] * y + a[2]) / d,
            (a[3] * x + a[4] * y + a[5]) / d,
        ))
    }

    pub fn invert(&self) -> Result<Homography> {
        let m = self.matrix();
        let det = det3(&m);
        if !det.is_finite() || det.abs() <= DET_EPS {
            return Err(Error::SingularHomography(det));
        }
        // adjugate; the 1/det factor cancels in the normalization
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Homography::from_matrix(adj)
    }

    /// `self` after `first`: maps p to `self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Result<Homography> {
        let a = self.matrix();
        let b = first.matrix();
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Homography::from_matrix(m)
    }

    pub fn max_param_diff(&self, other: &Homography) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest displacement between the images of the four frame corners
    /// under `self` and `other`.
    pub fn corner_error(&self, other: &Homography, width: usize, height: usize) -> f64 {
        frame_corners(width, height)
            .iter()
            .map(|&c| match (self.warp_point(c), other.warp_point(c)) {
                (Ok(p), Ok(q)) => p.distance(&q),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// Mapping `h2 . h1`, i.e. apply `h1` first.
pub fn compose(h2: &Homography, h1: &Homography) -> Result<Homography> {
    h2.compose(h1)
}

pub fn invert(h: &Homography) -> Result<Homography> {
    h.invert()
}

pub fn warp_point(h: &Homography, p: Point) -> Result<Point> {
    h.warp_point(p)
}

pub fn frame_corners(width: usize, height: usize) -> [Point; 4] {
    let w = width as f64 - 1.0;
    let h = height as f64 - 1.0;
    [
        Point::new(0.0, 0.0),
        Point::new(w, 0.0),
        Point::new(0.0, h),
        Point::new(w, h),
    ]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// True when a source position can be sampled from a `width x height`
/// plane: `0 <= x <= width-1` and likewise for y.
#[inline]
pub fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= -BOUNDS_EPS
        && y >= -BOUNDS_EPS
        && x <= width as f64 - 1.0 + BOUNDS_EPS
        && y <= height as f64 - 1.0 + BOUNDS_EPS
}

/// Per-pel flag telling whether a warped pel was sampled from inside the
/// source frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageMask {
    pub width: usize,
    pub height: usize,
    pub covered: Vec<bool>,
}

impl CoverageMask {
    pub fn full(width: usize, height: usize) -> CoverageMask {
        CoverageMask {
            width,
            height,
            covered: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.covered[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }
}

/// Bilinear sample at an in-bounds position. Positions are clamped into
/// `[0, w-1] x [0, h-1]` first.
#[inline]
pub fn sample_bilinear(src: &Frame, x: f64, y: f64) -> f64 {
    let w = src.width;
    let h = src.height;
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = src.get(x0, y0) as f64;
    let p10 = src.get(x1, y0) as f64;
    let p01 = src.get(x0, y1) as f64;
    let p11 = src.get(x1, y1) as f64;
    let top = p00 + (p10 - p00) * fx;
    let bot = p01 + (p11 - p01) * fx;
    top + (bot - top) * fy
}

/// Warps `src` (frame k-1) into frame k coordinates by backward mapping
/// every output pel through `h^-1`. Uncovered pels take `fill`, or
/// mid-gray when `fill` is `None`.
pub fn warp_frame(
    src: &Frame,
    h: &Homography,
    out_width: usize,
    out_height: usize,
    fill: Option<u16>,
) -> Result<(Frame, CoverageMask)> {
    let inv = h.invert()?;
    let fill = fill.unwrap_or_else(|| src.mid_gray());
    let max = src.max_value() as f64;
    let rows: Vec<(Vec<u16>, Vec<bool>)> = (0..out_height)
        .into_par_iter()
        .map(|y| {
            let mut vals = Vec::with_capacity(out_width);
            let mut cov = Vec::with_capacity(out_width);
            for x in 0..out_width {
                match inv.map(x as f64, y as f64) {
                    Some((sx, sy)) if in_bounds(sx, sy, src.width, src.height) => {
                        let v = sample_bilinear(src, sx, sy).round().clamp(0.0, max);
                        vals.push(v as u16);
                        cov.push(true);
                    }
                    _ => {
                        vals.push(fill);
                        cov.push(false);
                    }
                }
            }
            (vals, cov)
        })
        .collect();
    let mut luma = Vec::with_capacity(out_width * out_height);
    let mut covered = Vec::with_capacity(out_width * out_height);
    for (v, c) in rows {
        luma.extend(v);
        covered.extend(c);
    }
    let frame = Frame {
        width: out_width,
        height: out_height,
        bit_depth: src.bit_depth,
        luma,
        chroma: None,
        index: src.index,
    };
    Ok((
        frame,
        CoverageMask {
            width: out_width,
            height: out_height,
            covered,
        },
    ))
}
