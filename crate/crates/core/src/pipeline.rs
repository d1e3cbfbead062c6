//! End-to-end sequence operations: detection, coding, decoding with
//! mosaic post-processing, and stream analysis.

use rayon::prelude::*;

use crate::analysis::{FrameReport, SequenceReport};
use crate::bitstream::{Bitstream, SequenceHeader};
use crate::codec::{frame_stats, CodecConfig, Decoder, Encoder, FrameStats};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{warp_frame, CoverageMask, Homography};
use crate::global_motion::{estimate_global_motion, GmeConfig, GmeResult};
use crate::postproc::{render_output, roi_psnr, update_mosaic, Mosaic};
use crate::roi::{
    detect_moving_objects, detect_new_area, first_frame_mask, merge_masks, MoConfig, RoiMask,
    DEFAULT_BLOCK_SIZE,
};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectConfig {
    pub gme: GmeConfig,
    pub mo: MoConfig,
    pub block_size: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            gme: GmeConfig::default(),
            mo: MoConfig::default(),
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// Detection outcome for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetection {
    pub mask: RoiMask,
    /// Previous frame to this one; identity for frame 0.
    pub homography: Homography,
    /// `None` for frame 0 and when estimation failed.
    pub gme: Option<GmeResult>,
    /// Estimation failed and the whole frame was marked new area.
    pub fallback: bool,
}

impl FrameDetection {
    pub fn log_line(&self) -> String {
        let g = self.gme.clone().unwrap_or_else(|| GmeResult {
            homography: self.homography,
            ..GmeResult::identity()
        });
        g.log_line(self.mask.frame_index)
    }
}

fn check_sequence(frames: &[Frame]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty sequence".into()))?;
    for f in frames {
        if !f.same_geometry(first) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}@{} frame in a {}x{}@{} sequence",
                f.width, f.height, f.bit_depth, first.width, first.height, first.bit_depth
            )));
        }
    }
    Ok(())
}

/// ROI detection for frame `k > 0` given its predecessor.
pub fn detect_frame(
    prev: &Frame,
    curr: &Frame,
    index: u32,
    cfg: &DetectConfig,
) -> Result<FrameDetection> {
    let (w, h) = (curr.width, curr.height);
    let fallback = || {
        let mut mask = first_frame_mask(w, h, cfg.block_size);
        mask.frame_index = index;
        FrameDetection {
            mask,
            homography: Homography::identity(),
            gme: None,
            fallback: true,
        }
    };
    let gme = match estimate_global_motion(prev, curr, &cfg.gme) {
        Ok(g) => g,
        Err(
            Error::TooFewFeatures { .. }
            | Error::EstimationFailed { .. }
            | Error::SingularHomography(_),
        ) => return Ok(fallback()),
        Err(e) => return Err(e),
    };
    let hom = gme.homography;
    let na = match detect_new_area(&hom, w, h, cfg.block_size) {
        Ok(m) => m,
        Err(Error::SingularHomography(_) | Error::DegenerateMapping(_)) => return Ok(fallback()),
        Err(e) => return Err(e),
    };
    let (gmc, cov) = warp_frame(prev, &hom, w, h, None)?;
    let mo = detect_moving_objects(curr, &gmc, &cov, &cfg.mo, cfg.block_size)?;
    let mut mask = merge_masks(&na, &mo)?;
    mask.frame_index = index;
    Ok(FrameDetection {
        mask,
        homography: hom,
        gme: Some(gme),
        fallback: false,
    })
}

/// Runs global motion estimation and ROI detection on every frame.
/// Frame pairs are processed in parallel.
pub fn detect_sequence(frames: &[Frame], cfg: &DetectConfig) -> Result<Vec<FrameDetection>> {
    check_sequence(frames)?;
    cfg.gme.validate()?;
    cfg.mo.validate(frames[0].bit_depth)?;
    let first = FrameDetection {
        mask: first_frame_mask(frames[0].width, frames[0].height, cfg.block_size),
        homography: Homography::identity(),
        gme: None,
        fallback: false,
    };
    let rest: Vec<FrameDetection> = frames
        .par_windows(2)
        .enumerate()
        .map(|(i, pair)| detect_frame(&pair[0], &pair[1], i as u32 + 1, cfg))
        .collect::<Result<_>>()?;
    Ok(std::iter::once(first).chain(rest).collect())
}

/// Everything the encoder produces for a sequence.
#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub bitstream: Bitstream,
    /// Encoder-side reconstructions, identical to what a decoder produces
    /// before post-processing.
    pub reconstructions: Vec<Frame>,
    pub report: SequenceReport,
}

/// Codes `frames` with given masks and homographies.
pub fn encode_with_masks(
    frames: &[Frame],
    masks: &[RoiMask],
    homographies: &[Homography],
    fps: (u32, u32),
    cfg: &CodecConfig,
) -> Result<EncodeOutput> {
    check_sequence(frames)?;
    if masks.len() != frames.len() || homographies.len() != frames.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames, {} masks, {} homographies",
            frames.len(),
            masks.len(),
            homographies.len()
        )));
    }
    let header = SequenceHeader {
        width: frames[0].width,
        height: frames[0].height,
        fps_num: fps.0,
        fps_den: fps.1,
        bit_depth: frames[0].bit_depth,
        codec: *cfg,
    };
    let mut enc = Encoder::new(*cfg)?;
    let mut coded = Vec::with_capacity(frames.len());
    let mut recons = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    for ((f, mask), h) in frames.iter().zip(masks).zip(homographies) {
        let mut mask = mask.clone();
        mask.frame_index = coded.len() as u32;
        let cf = enc.encode(f, &mask, h)?;
        let recon = enc
            .reconstruction()
            .expect("encoder keeps its reconstruction")
            .clone();
        let psnr = roi_psnr(f, &recon, &mask).ok();
        reports.push(FrameReport::new(&cf.stats, &mask, psnr)?);
        recons.push(recon);
        coded.push(cf);
    }
    let bitstream = Bitstream {
        header,
        frames: coded,
    };
    let report = SequenceReport {
        frames: reports,
        fps: header.fps(),
        stream_bits: bitstream.size_bits(),
    };
    Ok(EncodeOutput {
        bitstream,
        reconstructions: recons,
        report,
    })
}

/// Detection followed by coding.
pub fn encode_sequence(
    frames: &[Frame],
    fps: (u32, u32),
    detect: &DetectConfig,
    cfg: &CodecConfig,
) -> Result<(EncodeOutput, Vec<FrameDetection>)> {
    let det = detect_sequence(frames, detect)?;
    let masks: Vec<RoiMask> = det.iter().map(|d| d.mask.clone()).collect();
    let homs: Vec<Homography> = det.iter().map(|d| d.homography).collect();
    Ok((encode_with_masks(frames, &masks, &homs, fps, cfg)?, det))
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// Post-processed output pictures.
    pub frames: Vec<Frame>,
    /// Plain decoder reconstructions.
    pub decoded: Vec<Frame>,
    /// Per output frame, false where no content was ever observed.
    pub validity: Vec<CoverageMask>,
    pub stats: Vec<FrameStats>,
}

/// Decodes a stream and reconstructs full frames through the mosaic.
pub fn decode_sequence(bs: &Bitstream) -> Result<DecodeOutput> {
    let hdr = &bs.header;
    let mut dec = Decoder::new(hdr.codec)?;
    let mut mosaic = Mosaic::new(hdr.width, hdr.height, hdr.bit_depth);
    let mut out = DecodeOutput {
        frames: Vec::new(),
        decoded: Vec::new(),
        validity: Vec::new(),
        stats: Vec::new(),
    };
    for cf in &bs.frames {
        let (frame, stats) = dec.decode(cf)?;
        update_mosaic(&mut mosaic, &frame, &cf.roi_mask, &cf.homography)?;
        let (picture, valid) = render_output(&mosaic, &frame, &cf.roi_mask);
        out.frames.push(picture);
        out.validity.push(valid);
        out.decoded.push(frame);
        out.stats.push(stats);
    }
    Ok(out)
}

/// Bit accounting from the stream alone. ROI-PSNR is filled in when the
/// original frames are supplied, measured on the plain decoder output.
pub fn analyze_stream(bs: &Bitstream, originals: Option<&[Frame]>) -> Result<SequenceReport> {
    if let Some(o) = originals {
        if o.len() != bs.frames.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} original frames for {} coded frames",
                o.len(),
                bs.frames.len()
            )));
        }
    }
    let decoded = match originals {
        Some(_) => Some(decode_sequence(bs)?.decoded),
        None => None,
    };
    let mut reports = Vec::with_capacity(bs.frames.len());
    for (k, cf) in bs.frames.iter().enumerate() {
        let stats = frame_stats(cf, &bs.header.codec)?;
        let psnr = match (originals, &decoded) {
            (Some(o), Some(d)) => roi_psnr(&o[k], &d[k], &cf.roi_mask).ok(),
            _ => None,
        };
        reports.push(FrameReport::new(&stats, &cf.roi_mask, psnr)?);
    }
    Ok(SequenceReport {
        frames: reports,
        fps: bs.header.fps(),
        stream_bits: bs.size_bits(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::SkipPolicy;
    use crate::synth::{generate_synthetic, Sprite, SyntheticSpec};

    fn sequence(frames: usize) -> Vec<Frame> {
        let mut spec = SyntheticSpec::new(256, 192, frames, 11)
            .with_constant_motion(Homography::translation(3.0, 0.0));
        spec.sprites
            .push(Sprite::linear(20, 20, 4, (120, 80), (2, 1), frames));
        generate_synthetic(&spec).unwrap().frames
    }

    #[test]
    fn detection_bootstraps_and_finds_new_area() {
        let frames = sequence(3);
        let det = detect_sequence(&frames, &DetectConfig::default()).unwrap();
        assert_eq!(det.len(), 3);
        assert!(det[0].mask.cells.iter().all(|c| c.has_na()));
        for d in &det[1..] {
            assert!(!d.fallback);
            assert!((d.homography.params[2] - 3.0).abs() < 0.1);
            assert!(d.mask.get(0, 3).has_na());
            assert!(d.mask.cells.iter().any(|c| c.has_mo()));
            assert!(!d.mask.get(15, 0).is_roi());
        }
        assert_eq!(det[2].mask.frame_index, 2);
        assert!(det[1].log_line().starts_with("1 "));
    }

    #[test]
    fn featureless_input_falls_back_to_full_roi() {
        let frames = vec![Frame::filled(64, 64, 8, 90), Frame::filled(64, 64, 8, 90)];
        let det = detect_sequence(&frames, &DetectConfig::default()).unwrap();
        assert!(det[1].fallback);
        assert_eq!(det[1].mask.roi_count(), 16);
    }

    #[test]
    fn encode_decode_and_analyze_agree() {
        let frames = sequence(4);
        let cfg = CodecConfig::default();
        let (enc, _) = encode_sequence(&frames, (30, 1), &DetectConfig::default(), &cfg).unwrap();
        let bytes = enc.bitstream.to_bytes().unwrap();
        let bs = Bitstream::from_bytes(&bytes).unwrap();
        let dec = decode_sequence(&bs).unwrap();
        assert_eq!(dec.decoded, enc.reconstructions);
        let report = analyze_stream(&bs, Some(&frames)).unwrap();
        assert_eq!(report, enc.report);
        for f in &dec.frames[1..] {
            assert!(crate::frame::psnr(&frames[f.index as usize], f).unwrap() > 30.0);
        }
    }

    #[test]
    fn all_roi_stream_reports_unit_ratios() {
        let frames = sequence(2);
        let masks: Vec<RoiMask> = frames
            .iter()
            .map(|_| first_frame_mask(256, 192, 16))
            .collect();
        let homs = vec![Homography::identity(); 2];
        let cfg = CodecConfig {
            skip_policy: SkipPolicy::Ns,
            ..CodecConfig::default()
        };
        let enc = encode_with_masks(&frames, &masks, &homs, (30, 1), &cfg).unwrap();
        let r = analyze_stream(&enc.bitstream, None).unwrap();
        for f in &r.frames {
            assert_eq!((f.c, f.a, f.r), (1.0, 1.0, Some(1.0)));
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let frames = sequence(2);
        let cfg = CodecConfig::default();
        let err = encode_with_masks(&frames, &[], &[], (30, 1), &cfg).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let mixed = vec![frames[0].clone(), Frame::new(64, 64, 8)];
        assert!(detect_sequence(&mixed, &DetectConfig::default()).is_err());
        assert!(detect_sequence(&[], &DetectConfig::default()).is_err());
    }
}
