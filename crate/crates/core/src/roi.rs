//! Region-of-interest classification on the coding block grid.
//!
//! Two detectors feed the mask: new areas (pels of frame k whose
//! predecessor position under the global motion lies outside frame k-1)
//! and moving objects (blobs of high energy in the difference between
//! frame k and the motion-compensated frame k-1). A block is ROI as soon
//! as one of its pels is.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{CoverageMask, Homography};

pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum RoiLabel {
    #[default]
    NonRoi = 0,
    Mo = 1,
    Na = 2,
    NaAndMo = 3,
}

impl RoiLabel {
    pub fn from_code(code: u8) -> RoiLabel {
        match code & 3 {
            0 => RoiLabel::NonRoi,
            1 => RoiLabel::Mo,
            2 => RoiLabel::Na,
            _ => RoiLabel::NaAndMo,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_roi(self) -> bool {
        self != RoiLabel::NonRoi
    }

    pub fn has_na(self) -> bool {
        self.code() & 2 != 0
    }

    pub fn has_mo(self) -> bool {
        self.code() & 1 != 0
    }

    pub fn union(self, other: RoiLabel) -> RoiLabel {
        RoiLabel::from_code(self.code() | other.code())
    }

    /// Gray level used in PGM dumps: 0, 85, 170, 255.
    pub fn gray(self) -> u8 {
        self.code() * 85
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMask {
    pub grid_width: usize,
    pub grid_height: usize,
    pub block_size: usize,
    pub cells: Vec<RoiLabel>,
    pub frame_index: u32,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, block_size: usize) -> RoiMask {
        RoiMask::filled(width, height, block_size, RoiLabel::NonRoi)
    }

    pub fn filled(width: usize, height: usize, block_size: usize, label: RoiLabel) -> RoiMask {
        let gw = width.div_ceil(block_size);
        let gh = height.div_ceil(block_size);
        RoiMask {
            grid_width: gw,
            grid_height: gh,
            block_size,
            cells: vec![label; gw * gh],
            frame_index: 0,
        }
    }

    #[inline]
    pub fn get(&self, bx: usize, by: usize) -> RoiLabel {
        self.cells[by * self.grid_width + bx]
    }

    #[inline]
    pub fn set(&mut self, bx: usize, by: usize, label: RoiLabel) {
        self.cells[by * self.grid_width + bx] = label;
    }

    /// Label of the cell holding pel `(x, y)`; pels beyond the grid are
    /// non-ROI.
    pub fn label_at_pel(&self, x: usize, y: usize) -> RoiLabel {
        let (bx, by) = (x / self.block_size, y / self.block_size);
        if bx < self.grid_width && by < self.grid_height {
            self.get(bx, by)
        } else {
            RoiLabel::NonRoi
        }
    }

    /// True when any cell overlapping the pel rectangle is ROI.
    pub fn rect_has_roi(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        let bs = self.block_size;
        let x1 = ((x + w).div_ceil(bs)).min(self.grid_width);
        let y1 = ((y + h).div_ceil(bs)).min(self.grid_height);
        (y / bs..y1).any(|by| (x / bs..x1).any(|bx| self.get(bx, by).is_roi()))
    }

    pub fn roi_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_roi()).count()
    }

    pub fn same_grid(&self, other: &RoiMask) -> bool {
        self.grid_width == other.grid_width
            && self.grid_height == other.grid_height
            && self.block_size == other.block_size
    }

    /// Two bits per cell, four cells per byte, first cell in the low bits.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.cells.len().div_ceil(4)];
        for (i, c) in self.cells.iter().enumerate() {
            out[i / 4] |= c.code() << (2 * (i % 4));
        }
        out
    }

    pub fn unpack(bytes: &[u8], width: usize, height: usize, block_size: usize) -> Result<RoiMask> {
        let mut m = RoiMask::new(width, height, block_size);
        if bytes.len() != m.cells.len().div_ceil(4) {
            return Err(Error::CorruptStream(format!(
                "mask section has {} bytes, expected {}",
                bytes.len(),
                m.cells.len().div_ceil(4)
            )));
        }
        for (i, c) in m.cells.iter_mut().enumerate() {
            *c = RoiLabel::from_code(bytes[i / 4] >> (2 * (i % 4)));
        }
        Ok(m)
    }

    /// Binary PGM, one pel per cell.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.grid_width, self.grid_height).into_bytes();
        out.extend(self.cells.iter().map(|c| c.gray()));
        out
    }
}

/// Every cell NA: the bootstrap mask for a frame without predecessor.
pub fn first_frame_mask(width: usize, height: usize, block_size: usize) -> RoiMask {
    RoiMask::filled(width, height, block_size, RoiLabel::Na)
}

/// Distance in pels a back-projected position may fall outside frame k-1
/// and still count as covered. Absorbs estimation noise on edge rows.
pub const NA_TOLERANCE: f64 = 0.125;

/// Per-pel new-area flags: pel `p` of frame k is new when `h^-1(p)` falls
/// more than [`NA_TOLERANCE`] outside frame k-1.
pub fn new_area_pels(h: &Homography, width: usize, height: usize) -> Result<Vec<bool>> {
    let inv = h.invert()?;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let na = match inv.map(x as f64, y as f64) {
                Some((sx, sy)) => {
                    let (xm, ym) = (
                        (width - 1) as f64 + NA_TOLERANCE,
                        (height - 1) as f64 + NA_TOLERANCE,
                    );
                    !(sx >= -NA_TOLERANCE && sy >= -NA_TOLERANCE && sx <= xm && sy <= ym)
                }
                None => true,
            };
            out.push(na);
        }
    }
    Ok(out)
}

/// Block mask of a per-pel flag plane; a cell takes `label` when at least
/// one of its pels is set.
pub fn mask_from_pels(
    pels: &[bool],
    width: usize,
    height: usize,
    block_size: usize,
    label: RoiLabel,
) -> RoiMask {
    let mut m = RoiMask::new(width, height, block_size);
    for y in 0..height {
        for x in 0..width {
            if pels[y * width + x] {
                m.set(x / block_size, y / block_size, label);
            }
        }
    }
    m
}

pub fn detect_new_area(
    h: &Homography,
    width: usize,
    height: usize,
    block_size: usize,
) -> Result<RoiMask> {
    let pels = new_area_pels(h, width, height)?;
    Ok(mask_from_pels(
        &pels,
        width,
        height,
        block_size,
        RoiLabel::Na,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoConfig {
    /// Threshold on the blurred absolute difference, in intensity levels.
    pub diff_threshold: f64,
    pub blur_radius: usize,
    /// Connected components smaller than this many pels are dropped.
    pub min_blob_area: usize,
    pub dilate_radius: usize,
}

impl Default for MoConfig {
    fn default() -> Self {
        MoConfig {
            diff_threshold: 25.0,
            blur_radius: 2,
            min_blob_area: 16,
            dilate_radius: 8,
        }
    }
}

impl MoConfig {
    pub fn validate(&self, bit_depth: u8) -> Result<()> {
        let max = ((1u32 << bit_depth) - 1) as f64;
        if !(self.diff_threshold >= 0.0 && self.diff_threshold <= max) {
            return Err(Error::InvalidConfig(format!(
                "diff_threshold {} outside [0, {max}]",
                self.diff_threshold
            )));
        }
        Ok(())
    }
}

/// Mean over a `(2r+1)^2` window clipped to the plane.
fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    // integral image with a zero row/column in front
    let iw = w + 1;
    let mut ii = vec![0.0; iw * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            ii[(y + 1) * iw + x + 1] = ii[y * iw + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let s = ii[y1 * iw + x1] - ii[y0 * iw + x1] - ii[y1 * iw + x0] + ii[y0 * iw + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Removes 8-connected components with fewer than `min_area` pels.
fn filter_small_blobs(mask: &mut [bool], w: usize, h: usize, min_area: usize) {
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut comp = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        comp.clear();
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if comp.len() < min_area {
            for &i in &comp {
                mask[i] = false;
            }
        }
    }
}

/// Square (Chebyshev) dilation, done separably.
fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        let mut last: Option<usize> = None;
        // distance to the nearest set pel in the row, both directions
        for x in 0..w {
            if mask[y * w + x] {
                last = Some(x);
            }
            if matches!(last, Some(l) if x - l <= r) {
                tmp[y * w + x] = true;
            }
        }
        last = None;
        for x in (0..w).rev() {
            if mask[y * w + x] {
                last = Some(x);
            }
            if matches!(last, Some(l) if l - x <= r) {
                tmp[y * w + x] = true;
            }
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if tmp[y * w + x] {
                last = Some(y);
            }
            if matches!(last, Some(l) if y - l <= r) {
                out[y * w + x] = true;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if tmp[y * w + x] {
                last = Some(y);
            }
            if matches!(last, Some(l) if l - y <= r) {
                out[y * w + x] = true;
            }
        }
    }
    out
}

/// Per-pel moving-object map before block quantization: blurred
/// difference over covered pels, thresholded, area-filtered and dilated.
pub fn moving_object_pels(
    curr: &Frame,
    gmc_prev: &Frame,
    coverage: &CoverageMask,
    cfg: &MoConfig,
) -> Result<Vec<bool>> {
    if !curr.same_geometry(gmc_prev)
        || coverage.width != curr.width
        || coverage.height != curr.height
    {
        return Err(Error::DimensionMismatch(format!(
            "current {}x{}, compensated {}x{}, coverage {}x{}",
            curr.width,
            curr.height,
            gmc_prev.width,
            gmc_prev.height,
            coverage.width,
            coverage.height
        )));
    }
    cfg.validate(curr.bit_depth)?;
    let (w, h) = (curr.width, curr.height);
    let diff: Vec<f64> = (0..w * h)
        .map(|i| {
            if coverage.covered[i] {
                (curr.luma[i] as f64 - gmc_prev.luma[i] as f64).abs()
            } else {
                0.0
            }
        })
        .collect();
    let blurred = box_blur(&diff, w, h, cfg.blur_radius);
    let mut hot: Vec<bool> = blurred.iter().map(|&d| d > cfg.diff_threshold).collect();
    filter_small_blobs(&mut hot, w, h, cfg.min_blob_area);
    Ok(dilate(&hot, w, h, cfg.dilate_radius))
}

pub fn detect_moving_objects(
    curr: &Frame,
    gmc_prev: &Frame,
    coverage: &CoverageMask,
    cfg: &MoConfig,
    block_size: usize,
) -> Result<RoiMask> {
    let pels = moving_object_pels(curr, gmc_prev, coverage, cfg)?;
    Ok(mask_from_pels(
        &pels,
        curr.width,
        curr.height,
        block_size,
        RoiLabel::Mo,
    ))
}

pub fn merge_masks(na: &RoiMask, mo: &RoiMask) -> Result<RoiMask> {
    if !na.same_grid(mo) {
        return Err(Error::GridMismatch(format!(
            "{}x{}@{} vs {}x{}@{}",
            na.grid_width,
            na.grid_height,
            na.block_size,
            mo.grid_width,
            mo.grid_height,
            mo.block_size
        )));
    }
    let mut out = na.clone();
    for (c, &m) in out.cells.iter_mut().zip(&mo.cells) {
        *c = c.union(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warp_frame;
    use crate::synth::{generate_synthetic, Sprite, SyntheticSpec};

    #[test]
    fn first_frame_grids() {
        for (w, h, gw, gh) in [(64, 64, 4, 4), (1920, 1080, 120, 68), (17, 17, 2, 2)] {
            let m = first_frame_mask(w, h, 16);
            assert_eq!((m.grid_width, m.grid_height), (gw, gh));
            assert!(m.cells.iter().all(|&c| c == RoiLabel::Na));
        }
    }

    #[test]
    fn identity_has_no_new_area() {
        let m = detect_new_area(&Homography::identity(), 256, 128, 16).unwrap();
        assert_eq!(m.roi_count(), 0);
    }

    #[test]
    fn translation_marks_left_column() {
        for tx in [16.0, 8.0] {
            let m = detect_new_area(&Homography::translation(tx, 0.0), 1920, 1080, 16).unwrap();
            for by in 0..m.grid_height {
                for bx in 0..m.grid_width {
                    assert_eq!(m.get(bx, by).is_roi(), bx == 0);
                }
            }
        }
        let pels = new_area_pels(&Homography::translation(16.0, 0.0), 1920, 1080).unwrap();
        assert_eq!(pels.iter().filter(|&&p| p).count(), 16 * 1080);
    }

    #[test]
    fn new_area_count_matches_closed_form() {
        let (w, h) = (96usize, 80usize);
        for tx in [-32i64, -17, -5, 0, 3, 16, 32] {
            for ty in [-32i64, -9, 0, 1, 20, 32] {
                let pels =
                    new_area_pels(&Homography::translation(tx as f64, ty as f64), w, h).unwrap();
                let n = pels.iter().filter(|&&p| p).count() as i64;
                let expect = h as i64 * tx.abs() + w as i64 * ty.abs() - (tx * ty).abs();
                assert_eq!(n, expect, "t=({tx},{ty})");
            }
        }
    }

    #[test]
    fn equal_frames_have_no_motion() {
        let f = crate::synth::ValueNoise::new(1).render_frame(64, 64, &Homography::identity(), 8);
        let m = detect_moving_objects(
            &f,
            &f,
            &CoverageMask::full(64, 64),
            &MoConfig::default(),
            16,
        )
        .unwrap();
        assert_eq!(m.roi_count(), 0);
    }

    #[test]
    fn salt_noise_is_filtered() {
        let f = Frame::filled(64, 64, 8, 100);
        let mut g = f.clone();
        g.set(30, 30, 255);
        g.set(50, 10, 0);
        let cfg = MoConfig {
            blur_radius: 0,
            ..MoConfig::default()
        };
        let m = detect_moving_objects(&g, &f, &CoverageMask::full(64, 64), &cfg, 16).unwrap();
        assert_eq!(m.roi_count(), 0);
    }

    #[test]
    fn uncovered_pels_do_not_count() {
        let f = Frame::filled(64, 64, 8, 100);
        let g = Frame::filled(64, 64, 8, 250);
        let cov = CoverageMask {
            width: 64,
            height: 64,
            covered: vec![false; 64 * 64],
        };
        let m = detect_moving_objects(&g, &f, &cov, &MoConfig::default(), 16).unwrap();
        assert_eq!(m.roi_count(), 0);
    }

    fn sprite_scene(x0: i64, y0: i64) -> (Frame, Frame, Vec<bool>) {
        let mut spec = SyntheticSpec::new(160, 128, 2, 4);
        spec.sprites
            .push(Sprite::linear(24, 24, 5, (x0, y0), (4, 0), 2));
        let seq = generate_synthetic(&spec).unwrap();
        (
            seq.frames[0].clone(),
            seq.frames[1].clone(),
            seq.mo_masks[1].clone(),
        )
    }

    #[test]
    fn sprite_is_fully_covered_and_localized() {
        let (prev, curr, truth) = sprite_scene(50, 40);
        let (gmc, cov) = warp_frame(&prev, &Homography::identity(), 160, 128, None).unwrap();
        let cfg = MoConfig::default();
        let m = detect_moving_objects(&curr, &gmc, &cov, &cfg, 16).unwrap();
        // no misses
        for y in 0..128 {
            for x in 0..160 {
                if truth[y * 160 + x] {
                    assert!(m.label_at_pel(x, y).has_mo(), "missed ({x},{y})");
                }
            }
        }
        // nothing outside the union grown by blur + dilation
        let reach = cfg.dilate_radius + cfg.blur_radius;
        let grown = dilate(&truth, 160, 128, reach);
        let allowed = mask_from_pels(&grown, 160, 128, 16, RoiLabel::Mo);
        for (i, c) in m.cells.iter().enumerate() {
            if c.has_mo() {
                assert!(allowed.cells[i].has_mo(), "spurious cell {i}");
            }
        }
    }

    #[test]
    fn motion_detection_is_translation_equivariant() {
        let (p1, c1, _) = sprite_scene(40, 32);
        let shift = |f: &Frame| {
            let mut g = f.clone();
            for y in 0..128 {
                for x in 0..160 {
                    g.set(x, y, f.get_clamped(x as isize - 32, y as isize - 16));
                }
            }
            g
        };
        let (p2, c2) = (shift(&p1), shift(&c1));
        let cfg = MoConfig::default();
        let full = CoverageMask::full(160, 128);
        let a = moving_object_pels(&c1, &p1, &full, &cfg).unwrap();
        let b = moving_object_pels(&c2, &p2, &full, &cfg).unwrap();
        assert!(a.iter().any(|&v| v));
        for y in 0..112 {
            for x in 0..128 {
                assert_eq!(a[y * 160 + x], b[(y + 16) * 160 + x + 32], "({x},{y})");
            }
        }
    }

    #[test]
    fn merge_labels() {
        let mut na = RoiMask::new(64, 64, 16);
        let mut mo = RoiMask::new(64, 64, 16);
        assert_eq!(merge_masks(&na, &mo).unwrap().roi_count(), 0);
        for by in 0..4 {
            na.set(0, by, RoiLabel::Na);
        }
        mo.set(2, 2, RoiLabel::Mo);
        mo.set(0, 1, RoiLabel::Mo);
        let m = merge_masks(&na, &mo).unwrap();
        assert_eq!(m.get(0, 0), RoiLabel::Na);
        assert_eq!(m.get(2, 2), RoiLabel::Mo);
        assert_eq!(m.get(0, 1), RoiLabel::NaAndMo);
        assert_eq!(m.roi_count(), 5);
        let other = RoiMask::new(32, 64, 16);
        assert!(matches!(
            merge_masks(&na, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn pack_round_trip_and_pgm() {
        let mut m = RoiMask::new(80, 48, 16);
        let labels = [
            RoiLabel::NonRoi,
            RoiLabel::Mo,
            RoiLabel::Na,
            RoiLabel::NaAndMo,
        ];
        for (i, c) in m.cells.iter_mut().enumerate() {
            *c = labels[(i * 7) % 4];
        }
        let back = RoiMask::unpack(&m.pack(), 80, 48, 16).unwrap();
        assert_eq!(back, m);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(
            pgm[pgm.len() - 15..].to_vec(),
            m.cells.iter().map(|c| c.gray()).collect::<Vec<_>>()
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_mask() -> impl Strategy<Value = RoiMask> {
            prop::collection::vec(0u8..4, 12).prop_map(|codes| {
                let mut m = RoiMask::new(64, 48, 16);
                for (c, k) in m.cells.iter_mut().zip(codes) {
                    *c = RoiLabel::from_code(k);
                }
                m
            })
        }

        proptest! {
            #[test]
            fn merge_is_commutative_and_idempotent(a in arb_mask(), b in arb_mask()) {
                let ab = merge_masks(&a, &b).unwrap();
                let ba = merge_masks(&b, &a).unwrap();
                prop_assert_eq!(&ab, &ba);
                let aa = merge_masks(&a, &a).unwrap();
                for (x, y) in aa.cells.iter().zip(&a.cells) {
                    prop_assert_eq!(x.is_roi(), y.is_roi());
                }
            }

            #[test]
            fn pack_round_trips(a in arb_mask()) {
                prop_assert_eq!(RoiMask::unpack(&a.pack(), 64, 48, 16).unwrap(), a);
            }
        }
    }
}
