//! Bit-distribution metrics, heat maps, mode maps and rate tables.
//!
//! `C` is the share of a frame's payload bits spent in CTUs that touch the
//! ROI, `A` the share of ROI cells in the mask grid, and `R = C / A`.

use std::fmt::Write as _;
use std::io::Write;

use crate::codec::{FrameStats, PredMode};
use crate::error::{Error, Result};
use crate::roi::RoiMask;

pub fn roi_bit_ratio(stats: &FrameStats) -> Result<f64> {
    let total = stats.total_bits();
    if total == 0 {
        return Err(Error::EmptyFrame);
    }
    Ok(stats.roi_bits() as f64 / total as f64)
}

/// Share of ROI cells on the block grid.
pub fn roi_area_ratio(mask: &RoiMask) -> f64 {
    if mask.cells.is_empty() {
        return 0.0;
    }
    mask.roi_count() as f64 / mask.cells.len() as f64
}

pub fn bit_distribution_ratio(c: f64, a: f64) -> Result<f64> {
    if a <= 0.0 {
        return Err(Error::ZeroArea);
    }
    Ok(c / a)
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> RgbImage {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                let i = 3 * (y * self.width + x);
                self.data[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

/// Blue (0) to red (1) ramp through green at 0.5.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [
        (255.0 * t).round() as u8,
        (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8,
        (255.0 * (1.0 - t)).round() as u8,
    ]
}

/// Ramp positions of each CTU: `log2(1 + bits)` scaled to the frame's
/// min..max. A frame whose CTUs all carry the same bit count maps to the
/// middle of the ramp.
pub fn heat_levels(stats: &FrameStats) -> Vec<f64> {
    let logs: Vec<f64> = stats
        .ctus
        .iter()
        .map(|c| (1.0 + c.bits as f64).log2())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// One rectangle per CTU, `ctu_size / pels_per_pixel` pixels wide.
pub fn render_heatmap(stats: &FrameStats, pels_per_pixel: usize) -> RgbImage {
    let ppp = pels_per_pixel.max(1);
    let cell = (stats.ctu_size / ppp).max(1);
    let mut img = RgbImage::new(stats.grid_width * cell, stats.grid_height * cell);
    for (i, t) in heat_levels(stats).into_iter().enumerate() {
        let (cx, cy) = ((i % stats.grid_width) * cell, (i / stats.grid_width) * cell);
        img.fill_rect(cx, cy, cx + cell, cy + cell, ramp(t));
    }
    img
}

pub const INTRA_RGB: [u8; 3] = [255, 0, 0];
pub const INTER_RGB: [u8; 3] = [0, 255, 0];
pub const SKIP_RGB: [u8; 3] = [128, 128, 128];

pub fn mode_color(mode: PredMode) -> [u8; 3] {
    match mode {
        PredMode::Intra => INTRA_RGB,
        PredMode::Inter => INTER_RGB,
        PredMode::Skip => SKIP_RGB,
    }
}

/// Every leaf CU painted by its prediction mode.
pub fn render_mode_map(stats: &FrameStats, pels_per_pixel: usize) -> RgbImage {
    let ppp = pels_per_pixel.max(1);
    let (w, h) = (
        stats.grid_width * stats.ctu_size,
        stats.grid_height * stats.ctu_size,
    );
    let mut img = RgbImage::new(w.div_ceil(ppp), h.div_ceil(ppp));
    for l in stats.leaves() {
        let (x0, y0) = (l.x / ppp, l.y / ppp);
        let (x1, y1) = ((l.x + l.size).div_ceil(ppp), (l.y + l.size).div_ceil(ppp));
        img.fill_rect(x0, y0, x1, y1, mode_color(l.mode.mode));
    }
    img
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEntry {
    pub label: String,
    pub kbps: f64,
}

impl RateEntry {
    pub fn new(label: impl Into<String>, kbps: f64) -> RateEntry {
        RateEntry {
            label: label.into(),
            kbps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateDiff {
    pub label: String,
    pub kbps: f64,
    /// Percent change against the reference, rounded to one decimal.
    pub diff_percent: f64,
}

/// `100 * (rate - ref) / ref` for every entry.
pub fn rate_diff_table(reference: &RateEntry, rates: &[RateEntry]) -> Result<Vec<RateDiff>> {
    if reference.kbps <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(rates
        .iter()
        .map(|r| RateDiff {
            label: r.label.clone(),
            kbps: r.kbps,
            diff_percent: (1000.0 * (r.kbps - reference.kbps) / reference.kbps).round() / 10.0,
        })
        .collect())
}

pub fn format_rate_table(reference: &RateEntry, diffs: &[RateDiff]) -> String {
    let width = diffs
        .iter()
        .map(|d| d.label.len())
        .chain([reference.label.len(), 9])
        .max()
        .unwrap_or(9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>12}  {:>8}",
        "encoding", "rate kbit/s", "diff %"
    );
    let _ = writeln!(
        s,
        "{:<width$}  {:>12.1}  {:>8}",
        reference.label, reference.kbps, "ref"
    );
    for d in diffs {
        let _ = writeln!(
            s,
            "{:<width$}  {:>12.1}  {:>8.1}",
            d.label, d.kbps, d.diff_percent
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameReport {
    pub frame_index: u32,
    pub bits: u64,
    pub c: f64,
    pub a: f64,
    /// `None` when the frame has no ROI.
    pub r: Option<f64>,
    pub roi_psnr: Option<f64>,
    /// Leaf counts `[intra, inter, skip]`.
    pub modes: [usize; 3],
}

impl FrameReport {
    pub fn new(stats: &FrameStats, mask: &RoiMask, roi_psnr: Option<f64>) -> Result<FrameReport> {
        let c = roi_bit_ratio(stats)?;
        let a = roi_area_ratio(mask);
        Ok(FrameReport {
            frame_index: stats.frame_index,
            bits: stats.total_bits(),
            c,
            a,
            r: bit_distribution_ratio(c, a).ok(),
            roi_psnr,
            modes: stats.mode_histogram(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub frames: Vec<FrameReport>,
    pub fps: f64,
    /// Whole-stream size including headers and masks.
    pub stream_bits: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SequenceReport {
    /// Mean rate in kbit/s at the declared frame rate.
    pub fn rate_kbps(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.stream_bits as f64 * self.fps / self.frames.len() as f64 / 1000.0
    }

    pub fn mean_c(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.c))
    }

    pub fn mean_a(&self) -> Option<f64> {
        mean(self.frames.iter().map(|f| f.a))
    }

    pub fn mean_r(&self) -> Option<f64> {
        mean(self.frames.iter().filter_map(|f| f.r))
    }

    /// Mean over frames with a finite ROI-PSNR.
    pub fn mean_roi_psnr(&self) -> Option<f64> {
        mean(
            self.frames
                .iter()
                .filter_map(|f| f.roi_psnr)
                .filter(|p| p.is_finite()),
        )
    }

    pub fn mode_totals(&self) -> [usize; 3] {
        self.frames.iter().fold([0; 3], |acc, f| {
            [
                acc[0] + f.modes[0],
                acc[1] + f.modes[1],
                acc[2] + f.modes[2],
            ]
        })
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "frame_index,bits,C,A,R,roi_psnr,intra,inter,skip")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        for f in &self.frames {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{},{},{},{},{}",
                f.frame_index,
                f.bits,
                f.c,
                f.a,
                opt(f.r),
                opt(f.roi_psnr),
                f.modes[0],
                f.modes[1],
                f.modes[2]
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let m = self.mode_totals();
        format!(
            "frames {}  rate {:.1} kbit/s  C {}  A {}  R {}  roi-psnr {}  modes intra/inter/skip {}/{}/{}",
            self.frames.len(),
            self.rate_kbps(),
            opt(self.mean_c()),
            opt(self.mean_a()),
            opt(self.mean_r()),
            opt(self.mean_roi_psnr()),
            m[0],
            m[1],
            m[2]
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{BlockMode, CtuStats, IntraDir, LeafInfo};
    use crate::roi::RoiLabel;

    fn stats(bits: &[(u64, bool)]) -> FrameStats {
        FrameStats {
            frame_index: 0,
            ctu_size: 16,
            grid_width: bits.len(),
            grid_height: 1,
            ctus: bits
                .iter()
                .enumerate()
                .map(|(i, &(b, roi))| CtuStats {
                    bits: b,
                    cost: b << 15,
                    is_roi: roi,
                    leaves: vec![LeafInfo {
                        x: 16 * i,
                        y: 0,
                        size: 16,
                        mode: if roi {
                            BlockMode::intra(IntraDir::Dc)
                        } else {
                            BlockMode::skip()
                        },
                        nonzero_levels: 0,
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn ratios() {
        assert_eq!(
            roi_bit_ratio(&stats(&[(10, true), (20, true)])).unwrap(),
            1.0
        );
        assert_eq!(
            roi_bit_ratio(&stats(&[(750, true), (250, false)])).unwrap(),
            0.75
        );
        assert!(matches!(
            roi_bit_ratio(&stats(&[(0, true)])),
            Err(Error::EmptyFrame)
        ));
        let mut m = RoiMask::new(16 * 12, 16 * 10, 16);
        assert_eq!(roi_area_ratio(&m), 0.0);
        for i in 0..12 {
            m.cells[i * 7] = RoiLabel::Mo;
        }
        assert!((roi_area_ratio(&m) - 0.1).abs() < 1e-12);
        assert!((bit_distribution_ratio(0.3, 0.1).unwrap() - 3.0).abs() < 1e-12);
        assert!((bit_distribution_ratio(0.15, 0.1).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(bit_distribution_ratio(0.4, 0.4).unwrap(), 1.0);
        assert!(matches!(
            bit_distribution_ratio(0.4, 0.0),
            Err(Error::ZeroArea)
        ));
    }

    #[test]
    fn rate_table_matches_published_differences() {
        let d = rate_diff_table(
            &RateEntry::new("avc-skip", 943.0),
            &[RateEntry::new("hevc-skip", 634.0)],
        )
        .unwrap();
        assert_eq!(d[0].diff_percent, -32.8);
        let d = rate_diff_table(
            &RateEntry::new("ref", 9287.0),
            &[RateEntry::new("x", 6489.0), RateEntry::new("y", 9287.0)],
        )
        .unwrap();
        assert_eq!(d[0].diff_percent, -30.1);
        assert_eq!(d[1].diff_percent, 0.0);
        assert!(matches!(
            rate_diff_table(&RateEntry::new("r", 0.0), &[]),
            Err(Error::ZeroReference)
        ));
        let text = format_rate_table(&RateEntry::new("ref", 943.0), &d);
        assert!(text.contains("-30.1"));
    }

    #[test]
    fn heatmap_colors() {
        let img = render_heatmap(&stats(&[(40, true), (40, true)]), 16);
        assert_eq!(img.pixel(0, 0), ramp(0.5));
        assert_eq!(img.pixel(1, 0), ramp(0.5));
        let img = render_heatmap(&stats(&[(2, false), (5000, true), (2, false)]), 16);
        assert_eq!(img.pixel(1, 0), [255, 0, 0]);
        assert_eq!(img.pixel(0, 0), [0, 0, 255]);
        assert_eq!(img.pixel(2, 0), [0, 0, 255]);
    }

    #[test]
    fn heat_rank_follows_bit_rank() {
        let s = stats(&[
            (5, false),
            (900, true),
            (0, false),
            (77, true),
            (77, false),
            (3000, true),
        ]);
        let t = heat_levels(&s);
        for i in 0..t.len() {
            for j in 0..t.len() {
                if s.ctus[i].bits < s.ctus[j].bits {
                    assert!(t[i] < t[j]);
                }
            }
        }
    }

    #[test]
    fn mode_map_colors() {
        let img = render_mode_map(&stats(&[(10, true), (0, false)]), 4);
        assert_eq!((img.width, img.height), (8, 4));
        assert_eq!(img.pixel(0, 0), INTRA_RGB);
        assert_eq!(img.pixel(7, 3), SKIP_RGB);
        assert!(img.to_ppm().starts_with(b"P6\n8 4\n255\n"));
    }

    #[test]
    fn report_csv_and_means() {
        let s = stats(&[(300, true), (700, false)]);
        let mut mask = RoiMask::new(32, 16, 16);
        mask.set(0, 0, RoiLabel::Na);
        let f = FrameReport::new(&s, &mask, Some(40.0)).unwrap();
        assert_eq!((f.c, f.a), (0.3, 0.5));
        assert!((f.r.unwrap() - 0.6).abs() < 1e-12);
        let rep = SequenceReport {
            frames: vec![f],
            fps: 30.0,
            stream_bits: 2000,
        };
        assert!((rep.rate_kbps() - 60.0).abs() < 1e-12);
        let mut csv = Vec::new();
        rep.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("0,1000,0.300000,0.500000,0.600000,40.000000,1,0,1"));
    }
}
