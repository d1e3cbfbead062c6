//! Frame-to-frame global motion estimation.
//!
//! The chain is Harris corners on frame k-1, pyramidal Lucas-Kanade
//! tracking into frame k, and a RANSAC homography fit followed by a
//! normalized least-squares refit on the consensus set. The returned
//! homography maps frame k-1 coordinates to frame k coordinates.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{Homography, Point};

const MIN_CORNERS: usize = 8;
/// Lucas-Kanade stops once an update is shorter than this (pel).
const KLT_EPSILON: f32 = 0.01;
/// Minimum eigenvalue of the per-pel averaged gradient matrix; below it the
/// window has no usable texture in at least one direction.
const KLT_MIN_EIGEN: f32 = 0.05;
/// Border kept free of corners (pel).
const CORNER_MARGIN: usize = 4;
const QUALITY_TILE: usize = 64;
const LOCAL_QUALITY_FLOOR: f64 = 1e-8;
const TIGHT_FACTOR: f64 = 2.0;
/// Lower bound on the tight refit threshold (pel).
const TIGHT_MIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct GmeConfig {
    pub max_features: usize,
    pub harris_k: f64,
    pub harris_quality: f64,
    pub min_feature_distance: f64,
    pub klt_window: usize,
    pub klt_pyramid_levels: usize,
    pub klt_max_iterations: usize,
    pub ransac_iterations: usize,
    pub ransac_inlier_threshold: f64,
    pub min_inliers: usize,
    pub ransac_seed: u64,
}

impl Default for GmeConfig {
    fn default() -> Self {
        GmeConfig {
            max_features: 500,
            harris_k: 0.04,
            harris_quality: 0.01,
            min_feature_distance: 8.0,
            klt_window: 21,
            klt_pyramid_levels: 3,
            klt_max_iterations: 30,
            ransac_iterations: 500,
            ransac_inlier_threshold: 1.5,
            min_inliers: 20,
            ransac_seed: 0x5eed,
        }
    }
}

impl GmeConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.max_features == 0 {
            return bad("max_features must be positive");
        }
        if !(self.harris_k > 0.0) {
            return bad("harris_k must be positive");
        }
        if !(self.harris_quality > 0.0 && self.harris_quality < 1.0) {
            return bad("harris_quality must lie in (0,1)");
        }
        if !(self.min_feature_distance > 0.0) {
            return bad("min_feature_distance must be positive");
        }
        if self.klt_window == 0 || self.klt_window.is_multiple_of(2) {
            return bad("klt_window must be odd and positive");
        }
        if self.klt_pyramid_levels == 0 || self.klt_max_iterations == 0 {
            return bad("klt pyramid levels and iterations must be positive");
        }
        if self.ransac_iterations == 0 || self.min_inliers == 0 {
            return bad("ransac iterations and min_inliers must be positive");
        }
        if !(self.ransac_inlier_threshold > 0.0) {
            return bad("ransac_inlier_threshold must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackStatus {
    Tracked,
    Lost,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTrack {
    pub p_prev: Point,
    pub p_curr: Point,
    pub status: TrackStatus,
    /// Mean absolute intensity difference over the tracking window after
    /// convergence; infinite for lost tracks.
    pub residual: f64,
}

impl FeatureTrack {
    pub fn is_tracked(&self) -> bool {
        self.status == TrackStatus::Tracked
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmeResult {
    pub homography: Homography,
    pub inlier_count: usize,
    /// Inliers over tracked correspondences.
    pub inlier_ratio: f64,
    pub mean_inlier_residual: f64,
    /// Inlier flag per input track (lost tracks are never inliers).
    pub inliers: Vec<bool>,
}

impl GmeResult {
    pub fn identity() -> GmeResult {
        GmeResult {
            homography: Homography::identity(),
            inlier_count: 0,
            inlier_ratio: 0.0,
            mean_inlier_residual: 0.0,
            inliers: Vec::new(),
        }
    }

    /// One line of the GME log: frame index, `a1..a8`, inlier count,
    /// inlier ratio, mean inlier residual.
    pub fn log_line(&self, frame_index: u32) -> String {
        let mut s = frame_index.to_string();
        for p in &self.homography.params {
            s.push(' ');
            s.push_str(&format!("{p:?}"));
        }
        s.push_str(&format!(
            " {} {:?} {:?}",
            self.inlier_count, self.inlier_ratio, self.mean_inlier_residual
        ));
        s
    }
}

/// Parses a line written by [`GmeResult::log_line`].
pub fn parse_log_line(line: &str) -> Result<(u32, Homography, usize, f64, f64)> {
    let bad = || Error::MalformedHeader(format!("GME log line: {line:?}"));
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 12 {
        return Err(bad());
    }
    let idx = toks[0].parse().map_err(|_| bad())?;
    let mut params = [0.0; 8];
    for (p, t) in params.iter_mut().zip(&toks[1..9]) {
        *p = t.parse().map_err(|_| bad())?;
    }
    let count = toks[9].parse().map_err(|_| bad())?;
    let ratio = toks[10].parse().map_err(|_| bad())?;
    let mean = toks[11].parse().map_err(|_| bad())?;
    Ok((idx, Homography::new(params)?, count, ratio, mean))
}

#[derive(Clone, Debug)]
struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    fn from_frame(f: &Frame) -> Image {
        Image {
            width: f.width,
            height: f.height,
            data: f.luma.iter().map(|&v| v as f32).collect(),
        }
    }

    #[inline]
    fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    #[inline]
    fn bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let p00 = self.at_clamped(xi, yi);
        let p10 = self.at_clamped(xi + 1, yi);
        let p01 = self.at_clamped(xi, yi + 1);
        let p11 = self.at_clamped(xi + 1, yi + 1);
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        top + (bot - top) * fy
    }

    /// Bilinear samples of the square window of radius `half` centred on
    /// (x, y), row-major into `out`. Equal to calling `bilinear` per pel.
    fn window(&self, x: f32, y: f32, half: isize, out: &mut Vec<f32>) {
        out.clear();
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let w = self.width as isize;
        let inside = xi - half >= 0
            && yi - half >= 0
            && xi + half + 1 < w
            && yi + half + 1 < self.height as isize;
        if !inside {
            for dy in -half..=half {
                for dx in -half..=half {
                    out.push(self.bilinear(x + dx as f32, y + dy as f32));
                }
            }
            return;
        }
        for dy in -half..=half {
            let row = ((yi + dy) * w) as usize;
            let next = row + self.width;
            for dx in -half..=half {
                let c = (xi + dx) as usize;
                let (p00, p10) = (self.data[row + c], self.data[row + c + 1]);
                let (p01, p11) = (self.data[next + c], self.data[next + c + 1]);
                let top = p00 + (p10 - p00) * fx;
                let bot = p01 + (p11 - p01) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f32 && y <= (self.height - 1) as f32
    }

    /// Half-resolution copy using a 2x2 average.
    fn downsample(&self) -> Image {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                let s = self.at_clamped(sx, sy)
                    + self.at_clamped(sx + 1, sy)
                    + self.at_clamped(sx, sy + 1)
                    + self.at_clamped(sx + 1, sy + 1);
                data.push(s * 0.25);
            }
        }
        Image {
            width: w,
            height: h,
            data,
        }
    }

    /// Scharr derivatives normalized to intensity per pel.
    fn gradients(&self) -> (Image, Image) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0f32; w * h];
        let mut gy = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                let p = |dx: isize, dy: isize| self.at_clamped(xi + dx, yi + dy);
                gx[y * w + x] = (3.0 * (p(1, -1) - p(-1, -1))
                    + 10.0 * (p(1, 0) - p(-1, 0))
                    + 3.0 * (p(1, 1) - p(-1, 1)))
                    / 32.0;
                gy[y * w + x] = (3.0 * (p(-1, 1) - p(-1, -1))
                    + 10.0 * (p(0, 1) - p(0, -1))
                    + 3.0 * (p(1, 1) - p(1, -1)))
                    / 32.0;
            }
        }
        (
            Image {
                width: w,
                height: h,
                data: gx,
            },
            Image {
                width: w,
                height: h,
                data: gy,
            },
        )
    }
}

fn separable_blur_121(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    const K: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    let idx = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wt) in K.iter().enumerate() {
                s += wt * data[y * w + idx(x as isize + k as isize - 2, w)];
            }
            tmp[y * w + x] = s / 16.0;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, wt) in K.iter().enumerate() {
                s += wt * tmp[idx(y as isize + k as isize - 2, h) * w + x];
            }
            out[y * w + x] = s / 16.0;
        }
    }
    out
}

/// Harris corner response `det(M) - k tr(M)^2` with Sobel gradients and a
/// 5x5 binomial window.
pub fn harris_response(frame: &Frame, k: f64) -> Vec<f64> {
    let (w, h) = (frame.width, frame.height);
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    let p = |x: isize, y: isize| frame.get_clamped(x, y) as f64;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1)
                - p(x - 1, y - 1)
                - 2.0 * p(x - 1, y)
                - p(x - 1, y + 1))
                / 8.0;
            let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1)
                - p(x - 1, y - 1)
                - 2.0 * p(x, y - 1)
                - p(x + 1, y - 1))
                / 8.0;
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = separable_blur_121(&ixx, w, h);
    let syy = separable_blur_121(&iyy, w, h);
    let sxy = separable_blur_121(&ixy, w, h);
    (0..w * h)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k * tr * tr
        })
        .collect()
}

/// Harris corners in `frame`, pairwise at least `min_feature_distance`
/// apart. Selection alternates between 64-pel tiles, strongest first within
/// each tile.
pub fn detect_corners(frame: &Frame, cfg: &GmeConfig) -> Result<Vec<Point>> {
    cfg.validate()?;
    if frame.width < 32 || frame.height < 32 {
        return Err(Error::DimensionMismatch(format!(
            "corner detection needs at least 32x32, got {}x{}",
            frame.width, frame.height
        )));
    }
    let (w, h) = (frame.width, frame.height);
    let resp = harris_response(frame, cfg.harris_k);
    let max = resp.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::TooFewFeatures {
            found: 0,
            needed: MIN_CORNERS,
        });
    }
    // quality is relative to the local maximum, so a few high-contrast
    // movers cannot suppress all background corners
    let (tw, th) = (w.div_ceil(QUALITY_TILE), h.div_ceil(QUALITY_TILE));
    let mut tile_max = vec![0.0f64; tw * th];
    for y in 0..h {
        for x in 0..w {
            let t = &mut tile_max[(y / QUALITY_TILE) * tw + x / QUALITY_TILE];
            *t = t.max(resp[y * w + x]);
        }
    }
    let floor = LOCAL_QUALITY_FLOOR * max;
    let mut cands = Vec::new();
    for y in CORNER_MARGIN..h - CORNER_MARGIN {
        for x in CORNER_MARGIN..w - CORNER_MARGIN {
            let r = resp[y * w + x];
            let local = tile_max[(y / QUALITY_TILE) * tw + x / QUALITY_TILE];
            if r <= (cfg.harris_quality * local).max(floor) {
                continue;
            }
            // 3x3 non-maximum suppression; ties resolved toward raster order
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = resp[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > r || (n == r && earlier) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                cands.push((r, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));

    // one queue per tile, drained round-robin so that strongly textured
    // movers cannot take the whole feature budget
    let mut queues: Vec<std::collections::VecDeque<(usize, usize)>> =
        vec![Default::default(); tw * th];
    for &(_, x, y) in &cands {
        queues[(y / QUALITY_TILE) * tw + x / QUALITY_TILE].push_back((x, y));
    }

    let d = cfg.min_feature_distance;
    let cell = d.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<Point>> = vec![Vec::new(); gw * gh];
    let mut out = Vec::new();
    let mut active = true;
    while active && out.len() < cfg.max_features {
        active = false;
        for q in queues.iter_mut() {
            if out.len() >= cfg.max_features {
                break;
            }
            while let Some((x, y)) = q.pop_front() {
                active = true;
                let p = Point::new(x as f64, y as f64);
                let cx = (p.x / cell) as usize;
                let cy = (p.y / cell) as usize;
                let mut ok = true;
                'cells: for ny in cy.saturating_sub(1)..=(cy + 1).min(gh - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(gw - 1) {
                        if grid[ny * gw + nx].iter().any(|q| q.distance(&p) < d) {
                            ok = false;
                            break 'cells;
                        }
                    }
                }
                if ok {
                    grid[cy * gw + cx].push(p);
                    out.push(p);
                    break;
                }
            }
        }
    }
    if out.len() < MIN_CORNERS {
        return Err(Error::TooFewFeatures {
            found: out.len(),
            needed: MIN_CORNERS,
        });
    }
    Ok(out)
}

struct PyramidLevel {
    img: Image,
    gx: Image,
    gy: Image,
}

fn build_pyramid(frame: &Frame, levels: usize, with_gradients: bool) -> Vec<PyramidLevel> {
    let mut out: Vec<PyramidLevel> = Vec::with_capacity(levels);
    let mut img = Image::from_frame(frame);
    for l in 0..levels {
        if l > 0 {
            img = out[l - 1].img.downsample();
        }
        let (gx, gy) = if with_gradients {
            img.gradients()
        } else {
            let empty = Image {
                width: 0,
                height: 0,
                data: Vec::new(),
            };
            (empty.clone(), empty)
        };
        out.push(PyramidLevel {
            img: img.clone(),
            gx,
            gy,
        });
    }
    out
}

fn lost(p: Point) -> FeatureTrack {
    FeatureTrack {
        p_prev: p,
        p_curr: p,
        status: TrackStatus::Lost,
        residual: f64::INFINITY,
    }
}

fn track_one(
    prev: &[PyramidLevel],
    curr: &[PyramidLevel],
    p: Point,
    cfg: &GmeConfig,
) -> FeatureTrack {
    let half = (cfg.klt_window / 2) as isize;
    let n = (cfg.klt_window * cfg.klt_window) as f32;
    let mut guess = (0.0f32, 0.0f32);
    let mut residual = f64::INFINITY;
    for level in (0..prev.len()).rev() {
        let scale = (1u32 << level) as f32;
        let px = p.x as f32 / scale;
        let py = p.y as f32 / scale;
        let pl = &prev[level];
        let cl = &curr[level];
        if !pl.img.contains(px, py) {
            return lost(p);
        }
        let (mut ti, mut tx, mut ty) = (Vec::new(), Vec::new(), Vec::new());
        pl.img.window(px, py, half, &mut ti);
        pl.gx.window(px, py, half, &mut tx);
        pl.gy.window(px, py, half, &mut ty);
        let (mut gxx, mut gxy, mut gyy) = (0.0f32, 0.0f32, 0.0f32);
        for (&ix, &iy) in tx.iter().zip(&ty) {
            gxx += ix * ix;
            gxy += ix * iy;
            gyy += iy * iy;
        }
        let mut win = Vec::with_capacity(ti.len());
        let det = gxx * gyy - gxy * gxy;
        let tr = gxx + gyy;
        let min_eig = 0.5 * (tr - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt());
        if min_eig / n < KLT_MIN_EIGEN || det <= f32::EPSILON {
            return lost(p);
        }
        let mut d = (0.0f32, 0.0f32);
        let mut converged = false;
        for _ in 0..cfg.klt_max_iterations {
            let cx = px + guess.0 + d.0;
            let cy = py + guess.1 + d.1;
            if !cl.img.contains(cx, cy) {
                return lost(p);
            }
            cl.img.window(cx, cy, half, &mut win);
            let (mut bx, mut by) = (0.0f32, 0.0f32);
            for k in 0..win.len() {
                let diff = ti[k] - win[k];
                bx += diff * tx[k];
                by += diff * ty[k];
            }
            let ux = (gyy * bx - gxy * by) / det;
            let uy = (gxx * by - gxy * bx) / det;
            d.0 += ux;
            d.1 += uy;
            if ux * ux + uy * uy < KLT_EPSILON * KLT_EPSILON {
                converged = true;
                break;
            }
        }
        if !converged {
            return lost(p);
        }
        if level == 0 {
            let cx = px + guess.0 + d.0;
            let cy = py + guess.1 + d.1;
            if !cl.img.contains(cx, cy) {
                return lost(p);
            }
            cl.img.window(cx, cy, half, &mut win);
            let sad: f64 = ti.iter().zip(&win).map(|(a, b)| (a - b).abs() as f64).sum();
            residual = sad / n as f64;
            guess = (guess.0 + d.0, guess.1 + d.1);
        } else {
            guess = (2.0 * (guess.0 + d.0), 2.0 * (guess.1 + d.1));
        }
    }
    FeatureTrack {
        p_prev: p,
        p_curr: Point::new(p.x + guess.0 as f64, p.y + guess.1 as f64),
        status: TrackStatus::Tracked,
        residual,
    }
}

/// Pyramidal Lucas-Kanade tracking of `points` from `prev` into `curr`.
pub fn track_features(
    prev: &Frame,
    curr: &Frame,
    points: &[Point],
    cfg: &GmeConfig,
) -> Result<Vec<FeatureTrack>> {
    cfg.validate()?;
    if !prev.same_geometry(curr) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    let levels = usable_levels(prev, cfg);
    let pp = build_pyramid(prev, levels, true);
    let cp = build_pyramid(curr, levels, false);
    Ok(points
        .par_iter()
        .map(|&p| track_one(&pp, &cp, p, cfg))
        .collect())
}

fn usable_levels(frame: &Frame, cfg: &GmeConfig) -> usize {
    let mut levels = 1;
    let (mut w, mut h) = (frame.width, frame.height);
    while levels < cfg.klt_pyramid_levels && w / 2 >= cfg.klt_window && h / 2 >= cfg.klt_window {
        w /= 2;
        h /= 2;
        levels += 1;
    }
    levels
}

/// Similarity transform moving the centroid to the origin and the mean
/// distance to sqrt(2).
fn normalization(pts: &[Point]) -> [[f64; 3]; 3] {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let md = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if md > 1e-12 {
        std::f64::consts::SQRT_2 / md
    } else {
        1.0
    };
    [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]]
}

fn apply(t: &[[f64; 3]; 3], p: Point) -> Point {
    Point::new(t[0][0] * p.x + t[0][2], t[1][1] * p.y + t[1][2])
}

fn denormalize(hn: [[f64; 3]; 3], ts: &[[f64; 3]; 3], td: &[[f64; 3]; 3]) -> Result<Homography> {
    // H = Td^-1 * Hn * Ts
    let s = td[0][0];
    let td_inv = [
        [1.0 / s, 0.0, -td[0][2] / s],
        [0.0, 1.0 / s, -td[1][2] / s],
        [0.0, 0.0, 1.0],
    ];
    let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m
    };
    Homography::from_matrix(mul(&td_inv, &mul(&hn, ts)))
}

fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn has_collinear_triple(p: &[Point; 4]) -> bool {
    const EPS: f64 = 1e-3;
    [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
        .iter()
        .any(|&(i, j, k)| cross(p[i], p[j], p[k]).abs() < EPS)
}

/// Exact 4-point fit in normalized coordinates.
fn solve_four(src: &[Point; 4], dst: &[Point; 4]) -> Option<[[f64; 3]; 3]> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = (src[i].x, src[i].y);
        let (u, v) = (dst[i].x, dst[i].y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Homogeneous least-squares (DLT) fit in normalized coordinates.
fn solve_dlt(src: &[Point], dst: &[Point]) -> Option<[[f64; 3]; 3]> {
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r1 =
            SVector::<f64, 9>::from_column_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
        let r2 =
            SVector::<f64, 9>::from_column_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]);
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(imin);
    if h[8].abs() < 1e-15 {
        return None;
    }
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], h[8]]])
}

fn reprojection_error(h: &Homography, t: &FeatureTrack) -> f64 {
    match h.map(t.p_prev.x, t.p_prev.y) {
        Some((x, y)) => ((x - t.p_curr.x).powi(2) + (y - t.p_curr.y).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

/// RANSAC homography fit over the tracked correspondences with a
/// least-squares refit on the consensus set.
pub fn estimate_homography(tracks: &[FeatureTrack], cfg: &GmeConfig) -> Result<GmeResult> {
    cfg.validate()?;
    let idx: Vec<usize> = (0..tracks.len())
        .filter(|&i| tracks[i].is_tracked())
        .collect();
    if idx.len() < MIN_CORNERS {
        return Err(Error::TooFewFeatures {
            found: idx.len(),
            needed: MIN_CORNERS,
        });
    }
    let src: Vec<Point> = idx.iter().map(|&i| tracks[i].p_prev).collect();
    let dst: Vec<Point> = idx.iter().map(|&i| tracks[i].p_curr).collect();
    let ts = normalization(&src);
    let td = normalization(&dst);
    let nsrc: Vec<Point> = src.iter().map(|&p| apply(&ts, p)).collect();
    let ndst: Vec<Point> = dst.iter().map(|&p| apply(&td, p)).collect();
    let thr = cfg.ransac_inlier_threshold;

    // draw every sample up front so the result does not depend on how the
    // hypotheses are scheduled
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ransac_seed);
    let n = idx.len();
    let mut samples = Vec::with_capacity(cfg.ransac_iterations);
    let mut attempts = 0usize;
    while samples.len() < cfg.ransac_iterations && attempts < cfg.ransac_iterations * 20 {
        attempts += 1;
        let mut s = [0usize; 4];
        let mut k = 0;
        while k < 4 {
            let c = rng.random_range(0..n);
            if !s[..k].contains(&c) {
                s[k] = c;
                k += 1;
            }
        }
        let sp = s.map(|i| nsrc[i]);
        let dp = s.map(|i| ndst[i]);
        if has_collinear_triple(&sp) || has_collinear_triple(&dp) {
            continue;
        }
        samples.push(s);
    }

    let score = |h: &Homography| -> (usize, f64) {
        let mut count = 0;
        let mut err = 0.0;
        for &i in &idx {
            let e = reprojection_error(h, &tracks[i]);
            if e < thr {
                count += 1;
                err += e;
            }
        }
        (count, err)
    };

    let best = samples
        .par_iter()
        .enumerate()
        .filter_map(|(si, s)| {
            let hn = solve_four(&s.map(|i| nsrc[i]), &s.map(|i| ndst[i]))?;
            let h = denormalize(hn, &ts, &td).ok()?;
            let (c, e) = score(&h);
            Some((c, e, si, h))
        })
        .reduce_with(|a, b| {
            let better = b.0 > a.0 || (b.0 == a.0 && (b.1 < a.1 || (b.1 == a.1 && b.2 < a.2)));
            if better {
                b
            } else {
                a
            }
        });
    let Some((best_count, _, _, mut h)) = best else {
        return Err(Error::EstimationFailed {
            inliers: 0,
            required: cfg.min_inliers,
        });
    };
    if best_count < cfg.min_inliers.max(4) {
        return Err(Error::EstimationFailed {
            inliers: best_count,
            required: cfg.min_inliers,
        });
    }

    let inlier_set = |h: &Homography| -> Vec<usize> {
        (0..n)
            .filter(|&k| reprojection_error(h, &tracks[idx[k]]) < thr)
            .collect()
    };
    let mut set = inlier_set(&h);
    for _ in 0..5 {
        let s: Vec<Point> = set.iter().map(|&k| nsrc[k]).collect();
        let d: Vec<Point> = set.iter().map(|&k| ndst[k]).collect();
        let Some(refit) = solve_dlt(&s, &d).and_then(|m| denormalize(m, &ts, &td).ok()) else {
            break;
        };
        let next = inlier_set(&refit);
        if next.len() < set.len() {
            break;
        }
        h = refit;
        if next == set {
            break;
        }
        set = next;
    }
    set = inlier_set(&h);
    // final refit on the tighter core of the consensus set; weak corners and
    // windows straddling uncovered borders track with a bias that the
    // RANSAC threshold still admits
    let mut errs: Vec<f64> = set
        .iter()
        .map(|&k| reprojection_error(&h, &tracks[idx[k]]))
        .collect();
    errs.sort_by(f64::total_cmp);
    if let Some(&median) = errs.get(errs.len() / 2) {
        let tight = (TIGHT_FACTOR * median).max(TIGHT_MIN).min(thr);
        let core: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&k| reprojection_error(&h, &tracks[idx[k]]) < tight)
            .collect();
        if core.len() >= cfg.min_inliers.max(MIN_CORNERS) {
            let s: Vec<Point> = core.iter().map(|&k| nsrc[k]).collect();
            let d: Vec<Point> = core.iter().map(|&k| ndst[k]).collect();
            if let Some(refit) = solve_dlt(&s, &d).and_then(|m| denormalize(m, &ts, &td).ok()) {
                h = refit;
                set = inlier_set(&h);
            }
        }
    }
    if set.len() < cfg.min_inliers {
        return Err(Error::EstimationFailed {
            inliers: set.len(),
            required: cfg.min_inliers,
        });
    }
    let mut inliers = vec![false; tracks.len()];
    let mut total = 0.0;
    for &k in &set {
        inliers[idx[k]] = true;
        total += reprojection_error(&h, &tracks[idx[k]]);
    }
    Ok(GmeResult {
        homography: h,
        inlier_count: set.len(),
        inlier_ratio: set.len() as f64 / n as f64,
        mean_inlier_residual: total / set.len() as f64,
        inliers,
    })
}

/// Full chain: corners in `prev`, tracked into `curr`, robust fit. The
/// result maps `prev` coordinates onto `curr`.
pub fn estimate_global_motion(prev: &Frame, curr: &Frame, cfg: &GmeConfig) -> Result<GmeResult> {
    if !prev.same_geometry(curr) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    let corners = detect_corners(prev, cfg)?;
    let tracks = track_features(prev, curr, &corners, cfg)?;
    estimate_homography(&tracks, cfg)
}
