//! Rate-distortion controlled encoder with forced skip outside the ROI.

use std::collections::HashMap;

use rayon::prelude::*;

use super::decoder::{apply_residual, reconstruct_cu};
use super::predict::{inter_predict, intra_predict, motion_search, ssd, MotionVector};
use super::rangecoder::{BinSink, CostCounter, RangeEncoder, COST_ONE_BIT};
use super::syntax::{write_cu, write_split, Contexts};
use super::transform::{transform_quantize, QuantParams};
use super::{
    apportion_bits, BlockMode, CodecConfig, CodedFrame, CodingUnit, CtuStats, FrameStats, IntraDir,
    LeafInfo, PredMode, SkipPolicy,
};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::Homography;
use crate::roi::RoiMask;

/// CUs below this size refine their parent's vector instead of searching
/// the full window.
const FULL_SEARCH_MIN: usize = 16;
const REFINE_RANGE: i32 = 2;

enum Node {
    Leaf(CodingUnit),
    Split(Vec<Node>),
}

impl Node {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a CodingUnit>) {
        match self {
            Node::Leaf(cu) => out.push(cu),
            Node::Split(children) => children.iter().for_each(|c| c.leaves(out)),
        }
    }
}

struct Choice {
    j: f64,
    node: Node,
    mvp: MotionVector,
}

type MotionTable = HashMap<(usize, usize, usize), MotionVector>;

fn rect_all_roi(mask: &RoiMask, x: usize, y: usize, size: usize) -> bool {
    let bs = mask.block_size;
    let (x1, y1) = ((x + size).div_ceil(bs), (y + size).div_ceil(bs));
    if x1 > mask.grid_width || y1 > mask.grid_height {
        return false;
    }
    (y / bs..y1).all(|by| (x / bs..x1).all(|bx| mask.get(bx, by).is_roi()))
}

struct FrameCoder<'a> {
    cfg: &'a CodecConfig,
    src: &'a Frame,
    reference: Option<&'a Frame>,
    mask: &'a RoiMask,
    q: QuantParams,
    lambda: f64,
    inter: bool,
    recon: Frame,
}

impl FrameCoder<'_> {
    fn needs_motion(&self, x: usize, y: usize) -> bool {
        self.inter
            && match self.cfg.skip_policy {
                SkipPolicy::Off => true,
                _ => self
                    .mask
                    .rect_has_roi(x, y, self.cfg.ctu_size, self.cfg.ctu_size),
            }
    }

    fn search_ctu(&self, x: usize, y: usize) -> MotionTable {
        let mut table = MotionTable::new();
        let Some(reference) = self.reference else {
            return table;
        };
        let range = self.cfg.search_range as i32;
        self.search_node(
            reference,
            x,
            y,
            self.cfg.ctu_size,
            MotionVector::ZERO,
            range,
            &mut table,
        );
        table
    }

    #[allow(clippy::too_many_arguments)]
    fn search_node(
        &self,
        reference: &Frame,
        x: usize,
        y: usize,
        size: usize,
        parent: MotionVector,
        range: i32,
        table: &mut MotionTable,
    ) {
        let (mv, _) = if size >= FULL_SEARCH_MIN {
            motion_search(self.src, x, y, size, reference, MotionVector::ZERO, range)
        } else {
            motion_search(
                self.src,
                x,
                y,
                size,
                reference,
                parent,
                REFINE_RANGE.min(range),
            )
        };
        table.insert((x, y, size), mv);
        if size > self.cfg.min_cu_size() {
            let h = size / 2;
            for (cx, cy) in [(x, y), (x + h, y), (x, y + h), (x + h, y + h)] {
                self.search_node(reference, cx, cy, h, mv, range, table);
            }
        }
    }

    fn rate(
        &self,
        snap: &Contexts,
        cu: &CodingUnit,
        can_split: bool,
        mvp: MotionVector,
    ) -> (f64, MotionVector) {
        let mut c = CostCounter::default();
        let mut ctx = snap.clone();
        let mut m = mvp;
        if can_split {
            write_split(&mut c, &mut ctx, cu.depth, false);
        }
        write_cu(&mut c, &mut ctx, cu, self.inter, &mut m);
        (c.cost() as f64 / COST_ONE_BIT as f64, m)
    }

    /// Quantized residual of `pred` against the source and the resulting
    /// reconstruction.
    fn code_residual(
        &self,
        x: usize,
        y: usize,
        n: usize,
        pred: &[i32],
    ) -> (Vec<Option<Vec<i32>>>, Vec<u16>) {
        let t = n.min(super::transform::MAX_TRANSFORM);
        let per_row = n / t;
        let mut residual = Vec::with_capacity(per_row * per_row);
        let mut block = vec![0i32; t * t];
        for ti in 0..per_row * per_row {
            let (ox, oy) = ((ti % per_row) * t, (ti / per_row) * t);
            for j in 0..t {
                for i in 0..t {
                    let s = self.src.get(x + ox + i, y + oy + j) as i32;
                    block[j * t + i] = s - pred[(oy + j) * n + ox + i];
                }
            }
            let levels = transform_quantize(&block, t, &self.q);
            residual.push(levels.iter().any(|&l| l != 0).then_some(levels));
        }
        let recon = apply_residual(pred, &residual, n, &self.q, self.src.max_value());
        (residual, recon)
    }

    fn block_ssd(&self, x: usize, y: usize, n: usize, recon: &[u16]) -> f64 {
        let mut acc = 0u64;
        for j in 0..n {
            let row =
                &self.src.luma[(y + j) * self.src.width + x..(y + j) * self.src.width + x + n];
            for (i, &s) in row.iter().enumerate() {
                let d = s as i64 - recon[j * n + i] as i64;
                acc += (d * d) as u64;
            }
        }
        acc as f64
    }

    fn write_block(&mut self, x: usize, y: usize, n: usize, block: &[u16]) {
        let w = self.recon.width;
        for j in 0..n {
            self.recon.luma[(y + j) * w + x..(y + j) * w + x + n]
                .copy_from_slice(&block[j * n..(j + 1) * n]);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rdo_node(
        &mut self,
        snap: &Contexts,
        motion: &MotionTable,
        x: usize,
        y: usize,
        size: usize,
        depth: u8,
        mvp: MotionVector,
        ctu_roi: bool,
    ) -> Choice {
        let can_split = depth < self.cfg.max_depth;
        let roi = self.mask.rect_has_roi(x, y, size, size);
        let policy = self.cfg.skip_policy;
        let forced_skip = self.inter
            && match policy {
                SkipPolicy::Ns => !ctu_roi,
                SkipPolicy::Subskip => !roi,
                SkipPolicy::Off => false,
            };
        let forced_split = self.inter
            && policy == SkipPolicy::Subskip
            && can_split
            && roi
            && size > self.mask.block_size
            && !rect_all_roi(self.mask, x, y, size);
        let skip_allowed = self.inter && policy == SkipPolicy::Off;

        let mut best: Option<(f64, CodingUnit, Vec<u16>, MotionVector)> = None;
        if !forced_split {
            let mut candidates = Vec::with_capacity(7);
            if forced_skip || skip_allowed {
                candidates.push(BlockMode::skip());
            }
            if !forced_skip {
                if self.inter {
                    let mv = motion
                        .get(&(x, y, size))
                        .copied()
                        .unwrap_or(MotionVector::ZERO);
                    candidates.push(BlockMode::inter(mv, false));
                    if skip_allowed {
                        candidates.push(BlockMode::inter(MotionVector::ZERO, true));
                    }
                }
                candidates.extend(IntraDir::ALL.iter().map(|&d| BlockMode::intra(d)));
            }
            for mode in candidates {
                let pred = match mode.mode {
                    PredMode::Intra => intra_predict(&self.recon, x, y, size, mode.intra_dir),
                    _ => inter_predict(
                        self.reference.expect("inter frame has a reference"),
                        x,
                        y,
                        size,
                        mode.mv,
                    ),
                };
                let (residual, block) = if mode.mode == PredMode::Skip {
                    (Vec::new(), pred.iter().map(|&v| v as u16).collect())
                } else {
                    self.code_residual(x, y, size, &pred)
                };
                let cu = CodingUnit {
                    x,
                    y,
                    size,
                    depth,
                    mode,
                    residual,
                };
                let d = if mode.mode == PredMode::Skip {
                    ssd(self.src, x, y, size, &pred) as f64
                } else {
                    self.block_ssd(x, y, size, &block)
                };
                let (bits, mvp_out) = self.rate(snap, &cu, can_split, mvp);
                let j = d + self.lambda * bits;
                if best.as_ref().is_none_or(|b| j < b.0) {
                    best = Some((j, cu, block, mvp_out));
                }
            }
        }

        let leaf = best.map(|(j, cu, block, mvp_out)| {
            self.write_block(x, y, size, &block);
            (j, cu, block, mvp_out)
        });
        if !can_split || forced_skip {
            let (j, cu, _, mvp_out) = leaf.expect("leaf candidate exists");
            return Choice {
                j,
                node: Node::Leaf(cu),
                mvp: mvp_out,
            };
        }

        let mut c = CostCounter::default();
        write_split(&mut c, &mut snap.clone(), depth, true);
        let mut j_split = self.lambda * c.cost() as f64 / COST_ONE_BIT as f64;
        let mut children = Vec::with_capacity(4);
        let mut m = mvp;
        let h = size / 2;
        for (cx, cy) in [(x, y), (x + h, y), (x, y + h), (x + h, y + h)] {
            if let Some((j_leaf, ..)) = &leaf {
                if j_split >= *j_leaf {
                    break;
                }
            }
            let ch = self.rdo_node(snap, motion, cx, cy, h, depth + 1, m, ctu_roi);
            j_split += ch.j;
            m = ch.mvp;
            children.push(ch.node);
        }
        match leaf {
            Some((j_leaf, cu, block, mvp_out)) if children.len() < 4 || j_leaf <= j_split => {
                self.write_block(x, y, size, &block);
                Choice {
                    j: j_leaf,
                    node: Node::Leaf(cu),
                    mvp: mvp_out,
                }
            }
            _ => Choice {
                j: j_split,
                node: Node::Split(children),
                mvp: m,
            },
        }
    }
}

fn write_node<S: BinSink>(
    s: &mut S,
    ctx: &mut Contexts,
    node: &Node,
    depth: u8,
    max_depth: u8,
    inter: bool,
    mvp: &mut MotionVector,
) {
    let can_split = depth < max_depth;
    match node {
        Node::Split(children) => {
            write_split(s, ctx, depth, true);
            for c in children {
                write_node(s, ctx, c, depth + 1, max_depth, inter, mvp);
            }
        }
        Node::Leaf(cu) => {
            if can_split {
                write_split(s, ctx, depth, false);
            }
            write_cu(s, ctx, cu, inter, mvp);
        }
    }
}

/// Codes one frame.
///
/// `reference` is the previous reconstruction at the frame's own size;
/// the returned frame is this frame's reconstruction, identical to what
/// [`super::decode_frame`] produces from the returned [`CodedFrame`].
pub fn encode_frame(
    curr: &Frame,
    reference: Option<&Frame>,
    mask: &RoiMask,
    h: &Homography,
    cfg: &CodecConfig,
) -> Result<(CodedFrame, Frame)> {
    cfg.validate()?;
    let (w, hgt) = (curr.width, curr.height);
    let expected = RoiMask::new(w, hgt, mask.block_size);
    if !mask.same_grid(&expected) {
        return Err(Error::GridMismatch(format!(
            "mask grid {}x{} (block {}) does not fit a {}x{} frame",
            mask.grid_width, mask.grid_height, mask.block_size, w, hgt
        )));
    }
    let index = curr.index;
    let inter = !cfg.is_intra_frame(index);
    if inter && reference.is_none() {
        return Err(Error::MissingReference(index));
    }
    if let Some(r) = reference {
        if !r.same_geometry(curr) {
            return Err(Error::DimensionMismatch(format!(
                "reference {}x{} for a {}x{} frame",
                r.width, r.height, w, hgt
            )));
        }
    }
    let ctu = cfg.ctu_size;
    let (pw, ph) = (w.div_ceil(ctu) * ctu, hgt.div_ceil(ctu) * ctu);
    let src = curr.padded(pw, ph);
    let refp = if inter {
        reference.map(|r| r.padded(pw, ph))
    } else {
        None
    };
    let q = QuantParams::new(cfg.qp);
    let mut coder = FrameCoder {
        cfg,
        src: &src,
        reference: refp.as_ref(),
        mask,
        q,
        lambda: q.lambda(),
        inter,
        recon: Frame::filled(pw, ph, curr.bit_depth, curr.mid_gray()),
    };

    let (gw, gh) = (pw / ctu, ph / ctu);
    let origins: Vec<(usize, usize)> = (0..gh)
        .flat_map(|r| (0..gw).map(move |c| (c * ctu, r * ctu)))
        .collect();
    let motion: Vec<MotionTable> = origins
        .par_iter()
        .map(|&(x, y)| {
            if coder.needs_motion(x, y) {
                coder.search_ctu(x, y)
            } else {
                MotionTable::new()
            }
        })
        .collect();

    let mut ctx = Contexts::default();
    let mut enc = RangeEncoder::new();
    let mut mvp = MotionVector::ZERO;
    let mut rdo_mvp = MotionVector::ZERO;
    let mut costs = Vec::with_capacity(origins.len());
    let mut trees = Vec::with_capacity(origins.len());
    for (i, &(x, y)) in origins.iter().enumerate() {
        let ctu_roi = mask.rect_has_roi(x, y, ctu, ctu);
        let snap = ctx.clone();
        let choice = coder.rdo_node(&snap, &motion[i], x, y, ctu, 0, rdo_mvp, ctu_roi);
        rdo_mvp = choice.mvp;
        let before = enc.cost();
        write_node(
            &mut enc,
            &mut ctx,
            &choice.node,
            0,
            cfg.max_depth,
            inter,
            &mut mvp,
        );
        debug_assert_eq!(mvp, rdo_mvp);
        costs.push(enc.cost() - before);
        trees.push(choice.node);
    }
    let payload = enc.finish();
    let bits = apportion_bits(&costs, payload.len() as u64 * 8);

    // the reconstruction handed on is produced by the decoder's own path
    let mut recon = Frame::filled(pw, ph, curr.bit_depth, curr.mid_gray());
    let mut ctus = Vec::with_capacity(trees.len());
    for (i, tree) in trees.iter().enumerate() {
        let mut leaves = Vec::new();
        tree.leaves(&mut leaves);
        for cu in &leaves {
            reconstruct_cu(cu, refp.as_ref(), &mut recon, &q)?;
        }
        let (x, y) = origins[i];
        ctus.push(CtuStats {
            bits: bits[i],
            cost: costs[i],
            is_roi: mask.rect_has_roi(x, y, ctu, ctu),
            leaves: leaves.iter().map(|cu| LeafInfo::from(*cu)).collect(),
        });
    }
    debug_assert!(
        recon.luma == coder.recon.luma,
        "rate-distortion pass diverged from reconstruction"
    );

    let mut roi_mask = mask.clone();
    roi_mask.frame_index = index;
    let coded = CodedFrame {
        frame_index: index,
        width: w,
        height: hgt,
        bit_depth: curr.bit_depth,
        homography: *h,
        roi_mask,
        payload,
        stats: FrameStats {
            frame_index: index,
            ctu_size: ctu,
            grid_width: gw,
            grid_height: gh,
            ctus,
        },
    };
    Ok((coded, recon.cropped(w, hgt).with_index(index)))
}

/// Sequential encoder holding the reference reconstruction.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: CodecConfig,
    reference: Option<Frame>,
    next_index: u32,
}

impl Encoder {
    pub fn new(cfg: CodecConfig) -> Result<Encoder> {
        cfg.validate()?;
        Ok(Encoder {
            cfg,
            reference: None,
            next_index: 0,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Codes the next frame of the sequence; frames are numbered from 0 in
    /// call order.
    pub fn encode(&mut self, frame: &Frame, mask: &RoiMask, h: &Homography) -> Result<CodedFrame> {
        let curr = frame.clone().with_index(self.next_index);
        let (coded, recon) = encode_frame(&curr, self.reference.as_ref(), mask, h, &self.cfg)?;
        self.reference = Some(recon);
        self.next_index += 1;
        Ok(coded)
    }

    /// Reconstruction of the most recently coded frame.
    pub fn reconstruction(&self) -> Option<&Frame> {
        self.reference.as_ref()
    }
}
