//! Payload parsing and reconstruction.

use super::predict::{inter_predict, intra_predict, MotionVector};
use super::rangecoder::RangeDecoder;
use super::syntax::{read_cu, read_split, Contexts};
use super::transform::{inverse, QuantParams, MAX_TRANSFORM};
use super::{
    apportion_bits, CodecConfig, CodedFrame, CodingUnit, CtuStats, FrameStats, LeafInfo, PredMode,
};
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Adds the dequantized residual to a prediction and clips to
/// `0..=max`.
pub(crate) fn apply_residual(
    pred: &[i32],
    residual: &[Option<Vec<i32>>],
    n: usize,
    q: &QuantParams,
    max: u16,
) -> Vec<u16> {
    let mut acc = pred.to_vec();
    if !residual.is_empty() {
        let t = n.min(MAX_TRANSFORM);
        let per_row = n / t;
        for (ti, tu) in residual.iter().enumerate() {
            let Some(levels) = tu else { continue };
            let r = inverse(levels, t, q);
            let (ox, oy) = ((ti % per_row) * t, (ti / per_row) * t);
            for j in 0..t {
                for i in 0..t {
                    acc[(oy + j) * n + ox + i] += r[j * t + i];
                }
            }
        }
    }
    acc.iter().map(|&v| v.clamp(0, max as i32) as u16).collect()
}

/// Predicts and reconstructs one CU into `recon` (padded geometry).
pub(crate) fn reconstruct_cu(
    cu: &CodingUnit,
    reference: Option<&Frame>,
    recon: &mut Frame,
    q: &QuantParams,
) -> Result<()> {
    let (x, y, n) = (cu.x, cu.y, cu.size);
    let pred = match cu.mode.mode {
        PredMode::Intra => intra_predict(recon, x, y, n, cu.mode.intra_dir),
        PredMode::Skip | PredMode::Inter => {
            let r = reference.ok_or_else(|| {
                Error::CorruptStream("inter block in a frame without reference".into())
            })?;
            let mv = if cu.mode.mode == PredMode::Skip {
                MotionVector::ZERO
            } else {
                cu.mode.mv
            };
            inter_predict(r, x, y, n, mv)
        }
    };
    let block = apply_residual(&pred, &cu.residual, n, q, recon.max_value());
    let w = recon.width;
    for j in 0..n {
        recon.luma[(y + j) * w + x..(y + j) * w + x + n]
            .copy_from_slice(&block[j * n..(j + 1) * n]);
    }
    Ok(())
}

fn read_node(
    d: &mut RangeDecoder<'_>,
    ctx: &mut Contexts,
    cfg: &CodecConfig,
    (x, y, size, depth): (usize, usize, usize, u8),
    inter: bool,
    mvp: &mut MotionVector,
    out: &mut Vec<CodingUnit>,
) -> Result<()> {
    if depth < cfg.max_depth && read_split(d, ctx, depth)? {
        let h = size / 2;
        for (cx, cy) in [(x, y), (x + h, y), (x, y + h), (x + h, y + h)] {
            read_node(d, ctx, cfg, (cx, cy, h, depth + 1), inter, mvp, out)?;
        }
        return Ok(());
    }
    out.push(read_cu(d, ctx, x, y, size, depth, inter, mvp)?);
    Ok(())
}

/// Parses a payload into CUs per CTU without reconstructing anything.
/// Returns the CUs and the ideal cost of each CTU.
pub fn parse_frame(
    coded: &CodedFrame,
    cfg: &CodecConfig,
) -> Result<(Vec<Vec<CodingUnit>>, Vec<u64>)> {
    cfg.validate()?;
    let ctu = cfg.ctu_size;
    let (gw, gh) = (coded.width.div_ceil(ctu), coded.height.div_ceil(ctu));
    let inter = !cfg.is_intra_frame(coded.frame_index);
    let mut d = RangeDecoder::new(&coded.payload)?;
    let mut ctx = Contexts::default();
    let mut mvp = MotionVector::ZERO;
    let mut ctus = Vec::with_capacity(gw * gh);
    let mut costs = Vec::with_capacity(gw * gh);
    for r in 0..gh {
        for c in 0..gw {
            let before = d.cost();
            let mut cus = Vec::new();
            read_node(
                &mut d,
                &mut ctx,
                cfg,
                (c * ctu, r * ctu, ctu, 0),
                inter,
                &mut mvp,
                &mut cus,
            )?;
            costs.push(d.cost() - before);
            ctus.push(cus);
        }
    }
    d.finish()?;
    Ok((ctus, costs))
}

/// Per-CTU statistics recomputed from the payload alone.
pub fn frame_stats(coded: &CodedFrame, cfg: &CodecConfig) -> Result<FrameStats> {
    let (ctus, costs) = parse_frame(coded, cfg)?;
    Ok(stats_from_parse(coded, cfg, &ctus, &costs))
}

fn stats_from_parse(
    coded: &CodedFrame,
    cfg: &CodecConfig,
    ctus: &[Vec<CodingUnit>],
    costs: &[u64],
) -> FrameStats {
    let ctu = cfg.ctu_size;
    let gw = coded.width.div_ceil(ctu);
    let bits = apportion_bits(costs, coded.payload_bits());
    FrameStats {
        frame_index: coded.frame_index,
        ctu_size: ctu,
        grid_width: gw,
        grid_height: coded.height.div_ceil(ctu),
        ctus: ctus
            .iter()
            .enumerate()
            .map(|(i, cus)| CtuStats {
                bits: bits[i],
                cost: costs[i],
                is_roi: coded
                    .roi_mask
                    .rect_has_roi((i % gw) * ctu, (i / gw) * ctu, ctu, ctu),
                leaves: cus.iter().map(LeafInfo::from).collect(),
            })
            .collect(),
    }
}

/// Decodes one frame against the previous reconstruction (at the frame's
/// own size). Returns the reconstruction and the decoder-side statistics.
pub fn decode_frame(
    coded: &CodedFrame,
    reference: Option<&Frame>,
    cfg: &CodecConfig,
) -> Result<(Frame, FrameStats)> {
    let inter = !cfg.is_intra_frame(coded.frame_index);
    if inter && reference.is_none() {
        return Err(Error::MissingReference(coded.frame_index));
    }
    if let Some(r) = reference {
        if r.width != coded.width || r.height != coded.height {
            return Err(Error::DimensionMismatch(format!(
                "reference {}x{} for a {}x{} frame",
                r.width, r.height, coded.width, coded.height
            )));
        }
    }
    let (ctus, costs) = parse_frame(coded, cfg)?;
    let ctu = cfg.ctu_size;
    let (pw, ph) = (
        coded.width.div_ceil(ctu) * ctu,
        coded.height.div_ceil(ctu) * ctu,
    );
    let refp = if inter {
        reference.map(|r| r.padded(pw, ph))
    } else {
        None
    };
    let q = QuantParams::new(cfg.qp);
    let mid = 1u16 << (coded.bit_depth - 1);
    let mut recon = Frame::filled(pw, ph, coded.bit_depth, mid);
    for cu in ctus.iter().flatten() {
        reconstruct_cu(cu, refp.as_ref(), &mut recon, &q)?;
    }
    let stats = stats_from_parse(coded, cfg, &ctus, &costs);
    Ok((
        recon
            .cropped(coded.width, coded.height)
            .with_index(coded.frame_index),
        stats,
    ))
}

/// Sequential decoder holding the reference reconstruction.
#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: CodecConfig,
    reference: Option<Frame>,
}

impl Decoder {
    pub fn new(cfg: CodecConfig) -> Result<Decoder> {
        cfg.validate()?;
        Ok(Decoder {
            cfg,
            reference: None,
        })
    }

    pub fn decode(&mut self, coded: &CodedFrame) -> Result<(Frame, FrameStats)> {
        let (frame, stats) = decode_frame(coded, self.reference.as_ref(), &self.cfg)?;
        self.reference = Some(frame.clone());
        Ok((frame, stats))
    }
}
