//! Decoder-side mosaicking: a background plane kept in current-frame
//! coordinates, re-warped by every transmitted homography and refreshed
//! wherever the frame carries ROI content.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{max_value, psnr_from_mse, Frame};
use crate::geometry::{in_bounds, CoverageMask, Homography};
use crate::roi::RoiMask;

#[derive(Clone, Debug, PartialEq)]
pub struct Mosaic {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub background: Vec<f32>,
    pub valid: Vec<bool>,
    /// Frame 0 to current view.
    pub cumulative: Homography,
    pub frames: u32,
}

/// Catmull-Rom weights for fractional offset `t`.
fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

impl Mosaic {
    pub fn new(width: usize, height: usize, bit_depth: u8) -> Mosaic {
        Mosaic {
            width,
            height,
            bit_depth,
            background: vec![(1u32 << (bit_depth - 1)) as f32; width * height],
            valid: vec![false; width * height],
            cumulative: Homography::identity(),
            frames: 0,
        }
    }

    fn sample_bicubic(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (wx, wy) = (cubic_weights(x - x0), cubic_weights(y - y0));
        let (x0, y0) = (x0 as isize, y0 as isize);
        let (wm, hm) = (self.width as isize - 1, self.height as isize - 1);
        let mut acc = 0.0;
        for (j, wyj) in wy.iter().enumerate() {
            if *wyj == 0.0 {
                continue;
            }
            let sy = (y0 + j as isize - 1).clamp(0, hm) as usize;
            let row = &self.background[sy * self.width..(sy + 1) * self.width];
            let mut r = 0.0;
            for (i, wxi) in wx.iter().enumerate() {
                let sx = (x0 + i as isize - 1).clamp(0, wm) as usize;
                r += wxi * row[sx] as f64;
            }
            acc += wyj * r;
        }
        acc
    }

    /// Re-expresses the mosaic in the coordinates of the next frame.
    fn warp(&mut self, h: &Homography) -> Result<()> {
        if h.is_identity() {
            return Ok(());
        }
        let inv = h.invert()?;
        let (w, hgt) = (self.width, self.height);
        let max = max_value(self.bit_depth) as f64;
        let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..hgt)
            .into_par_iter()
            .map(|y| {
                let mut vals = Vec::with_capacity(w);
                let mut valid = Vec::with_capacity(w);
                for x in 0..w {
                    match inv.map(x as f64, y as f64) {
                        Some((sx, sy)) if in_bounds(sx, sy, w, hgt) => {
                            let (nx, ny) = (sx.round() as usize, sy.round() as usize);
                            vals.push(self.sample_bicubic(sx, sy).clamp(0.0, max) as f32);
                            valid.push(self.valid[ny * w + nx]);
                        }
                        _ => {
                            vals.push((1u32 << (self.bit_depth - 1)) as f32);
                            valid.push(false);
                        }
                    }
                }
                (vals, valid)
            })
            .collect();
        self.background.clear();
        self.valid.clear();
        for (v, c) in rows {
            self.background.extend(v);
            self.valid.extend(c);
        }
        Ok(())
    }

    /// The mosaic rounded to integer samples; invalid pels hold the fill
    /// value.
    pub fn to_frame(&self) -> Frame {
        let mid = 1u16 << (self.bit_depth - 1);
        let luma = self
            .background
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { v.round() as u16 } else { mid })
            .collect();
        Frame {
            width: self.width,
            height: self.height,
            bit_depth: self.bit_depth,
            luma,
            chroma: None,
            index: self.frames.saturating_sub(1),
        }
    }

    pub fn validity(&self) -> CoverageMask {
        CoverageMask {
            width: self.width,
            height: self.height,
            covered: self.valid.clone(),
        }
    }
}

/// Warps the mosaic by `h` (previous frame to `decoded`) and overwrites
/// it with the decoded samples of every ROI cell. The first update
/// ignores `h`.
pub fn update_mosaic(
    m: &mut Mosaic,
    decoded: &Frame,
    mask: &RoiMask,
    h: &Homography,
) -> Result<()> {
    if decoded.width != m.width || decoded.height != m.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} frame for a {}x{} mosaic",
            decoded.width, decoded.height, m.width, m.height
        )));
    }
    if !mask.same_grid(&RoiMask::new(m.width, m.height, mask.block_size)) {
        return Err(Error::GridMismatch("mask does not cover the mosaic".into()));
    }
    if m.frames > 0 {
        m.warp(h)?;
        m.cumulative = h.compose(&m.cumulative)?;
    }
    for y in 0..m.height {
        for x in 0..m.width {
            if mask.label_at_pel(x, y).is_roi() {
                let i = y * m.width + x;
                m.background[i] = decoded.luma[i] as f32;
                m.valid[i] = true;
            }
        }
    }
    m.frames += 1;
    Ok(())
}

/// Output picture: mosaic content with the decoded moving-object blocks
/// on top. The returned mask is false for pels never observed.
pub fn render_output(m: &Mosaic, decoded: &Frame, mask: &RoiMask) -> (Frame, CoverageMask) {
    let mut out = m.to_frame();
    let mut seen = m.validity();
    for y in 0..m.height {
        for x in 0..m.width {
            if mask.label_at_pel(x, y).has_mo() {
                let i = y * m.width + x;
                out.luma[i] = decoded.luma[i];
                seen.covered[i] = true;
            }
        }
    }
    out.index = decoded.index;
    (out, seen)
}

/// Luma PSNR restricted to ROI cells; infinite when they match exactly.
pub fn roi_psnr(orig: &Frame, recon: &Frame, mask: &RoiMask) -> Result<f64> {
    if !orig.same_geometry(recon) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} against {}x{}",
            orig.width, orig.height, recon.width, recon.height
        )));
    }
    let mut sse = 0f64;
    let mut count = 0usize;
    for y in 0..orig.height {
        for x in 0..orig.width {
            if mask.label_at_pel(x, y).is_roi() {
                let d = orig.get(x, y) as f64 - recon.get(x, y) as f64;
                sse += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(psnr_from_mse(sse / count as f64, orig.max_value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::{detect_new_area, first_frame_mask, RoiLabel};
    use crate::synth::{Texture, ValueNoise};

    fn noise(w: usize, h: usize, shift: f64) -> Frame {
        ValueNoise::with_texture(3, Texture::Smooth).render_frame(
            w,
            h,
            &Homography::translation(-shift, 0.0),
            8,
        )
    }

    #[test]
    fn bootstrap_copies_first_frame() {
        let f = noise(48, 32, 0.0);
        let mut m = Mosaic::new(48, 32, 8);
        update_mosaic(
            &mut m,
            &f,
            &first_frame_mask(48, 32, 16),
            &Homography::translation(5.0, 0.0),
        )
        .unwrap();
        assert_eq!(m.to_frame().luma, f.luma);
        assert!(m.valid.iter().all(|&v| v));
        assert!(m.cumulative.is_identity());
    }

    #[test]
    fn identity_motion_without_roi_keeps_mosaic() {
        let f = noise(48, 32, 0.0);
        let mut m = Mosaic::new(48, 32, 8);
        update_mosaic(
            &mut m,
            &f,
            &first_frame_mask(48, 32, 16),
            &Homography::identity(),
        )
        .unwrap();
        let before = m.clone();
        let garbage = Frame::filled(48, 32, 8, 0);
        update_mosaic(
            &mut m,
            &garbage,
            &RoiMask::new(48, 32, 16),
            &Homography::identity(),
        )
        .unwrap();
        assert_eq!(m.background, before.background);
    }

    #[test]
    fn all_roi_output_is_decoded_frame() {
        let f = noise(48, 32, 0.0);
        let g = noise(48, 32, 3.3);
        let mut m = Mosaic::new(48, 32, 8);
        let all = first_frame_mask(48, 32, 16);
        update_mosaic(&mut m, &f, &all, &Homography::identity()).unwrap();
        update_mosaic(&mut m, &g, &all, &Homography::translation(3.3, 0.0)).unwrap();
        let (out, seen) = render_output(&m, &g, &all);
        assert_eq!(out.luma, g.luma);
        assert_eq!(seen.count(), 48 * 32);
    }

    #[test]
    fn translation_chain_tracks_the_scene() {
        let (w, h) = (96, 64);
        let mut m = Mosaic::new(w, h, 8);
        let step = Homography::translation(1.7, 0.0);
        let mut prev_validity = 0;
        for k in 0..12 {
            let f = noise(w, h, 1.7 * k as f64);
            let mask = if k == 0 {
                first_frame_mask(w, h, 16)
            } else {
                detect_new_area(&step, w, h, 16).unwrap()
            };
            update_mosaic(&mut m, &f, &mask, &step).unwrap();
            let valid = m.valid.iter().filter(|&&v| v).count();
            assert!(valid >= prev_validity);
            prev_validity = valid;
            let (out, _) = render_output(&m, &f, &mask);
            let p = crate::frame::psnr(&f, &out).unwrap();
            assert!(p > 40.0, "frame {k}: {p:.2} dB");
        }
        assert!((m.cumulative.params[2] - 1.7 * 11.0).abs() < 1e-9);
    }

    #[test]
    fn mo_blocks_are_pasted() {
        let f = noise(32, 32, 0.0);
        let mut m = Mosaic::new(32, 32, 8);
        update_mosaic(
            &mut m,
            &f,
            &first_frame_mask(32, 32, 16),
            &Homography::identity(),
        )
        .unwrap();
        let obj = Frame::filled(32, 32, 8, 250);
        let mut mask = RoiMask::new(32, 32, 16);
        mask.set(1, 1, RoiLabel::Mo);
        update_mosaic(&mut m, &obj, &mask, &Homography::identity()).unwrap();
        let (out, _) = render_output(&m, &obj, &mask);
        assert_eq!(out.get(20, 20), 250);
        assert_eq!(out.get(5, 5), f.get(5, 5));
    }

    #[test]
    fn roi_psnr_cases() {
        let a = noise(32, 32, 0.0);
        let mut mask = RoiMask::new(32, 32, 16);
        assert!(matches!(roi_psnr(&a, &a, &mask), Err(Error::EmptyRoi)));
        mask.set(0, 0, RoiLabel::Na);
        assert_eq!(roi_psnr(&a, &a, &mask).unwrap(), f64::INFINITY);
        let mut b = a.clone();
        for v in b.luma.iter_mut() {
            *v = if *v < 255 { *v + 1 } else { *v - 1 };
        }
        assert!((roi_psnr(&a, &b, &mask).unwrap() - 48.1308).abs() < 1e-3);
        // corruption outside the ROI is invisible
        let mut c = a.clone();
        c.set(31, 31, 0);
        c.set(20, 3, 255);
        assert_eq!(roi_psnr(&a, &c, &mask).unwrap(), f64::INFINITY);
    }
}
