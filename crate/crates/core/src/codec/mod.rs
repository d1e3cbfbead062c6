//! Block-based luma codec with externally controlled skip mode.
//!
//! Frames are padded to a whole number of CTUs by edge replication, split
//! into a quadtree of coding units, and coded with one of three modes:
//! skip (co-located copy, no residual), intra (DC, planar, horizontal,
//! vertical) or inter (integer motion, optional merge onto the single
//! co-located zero-motion candidate). Everything is entropy coded with the
//! adaptive binary range coder in [`rangecoder`].
//!
//! Motion vectors point from the current block into the reference:
//! `pred(x, y) = ref(x + mv.x, y + mv.y)`, with reference fetches clamped
//! to the padded picture.

pub mod decoder;
pub mod encoder;
pub mod predict;
pub mod rangecoder;
pub mod syntax;
pub mod transform;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::roi::RoiMask;

pub use decoder::{decode_frame, frame_stats, parse_frame, Decoder};
pub use encoder::{encode_frame, Encoder};
pub use predict::{motion_search, MotionVector};
pub use transform::{transform_quantize, QuantParams};

/// How ROI-containing CTUs are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SkipPolicy {
    /// A CTU touching the ROI is coded in full; skip and merge are disabled
    /// inside it.
    Ns = 0,
    /// Inside a ROI CTU, sub-CUs that carry no ROI are forced to skip.
    Subskip = 1,
    /// No ROI control at all: ordinary rate-distortion coding of every
    /// CTU. Used for reference encodes.
    Off = 2,
}

impl SkipPolicy {
    pub fn from_code(c: u8) -> Result<SkipPolicy> {
        match c {
            0 => Ok(SkipPolicy::Ns),
            1 => Ok(SkipPolicy::Subskip),
            2 => Ok(SkipPolicy::Off),
            _ => Err(Error::MalformedHeader(format!("skip policy {c}"))),
        }
    }
}

impl FromStr for SkipPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<SkipPolicy> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Ok(SkipPolicy::Ns),
            "subskip" => Ok(SkipPolicy::Subskip),
            "off" | "none" => Ok(SkipPolicy::Off),
            _ => Err(Error::InvalidConfig(format!("unknown skip policy '{s}'"))),
        }
    }
}

impl fmt::Display for SkipPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipPolicy::Ns => "ns",
            SkipPolicy::Subskip => "subskip",
            SkipPolicy::Off => "off",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gop {
    LowDelayP = 0,
    AllIntra = 1,
}

impl Gop {
    pub fn from_code(c: u8) -> Result<Gop> {
        match c {
            0 => Ok(Gop::LowDelayP),
            1 => Ok(Gop::AllIntra),
            _ => Err(Error::MalformedHeader(format!("gop {c}"))),
        }
    }
}

impl FromStr for Gop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Gop> {
        match s.to_ascii_lowercase().as_str() {
            "ldp" | "lowdelayp" | "low-delay-p" => Ok(Gop::LowDelayP),
            "ai" | "allintra" | "all-intra" => Ok(Gop::AllIntra),
            _ => Err(Error::InvalidConfig(format!("unknown gop '{s}'"))),
        }
    }
}

impl fmt::Display for Gop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gop::LowDelayP => "ldp",
            Gop::AllIntra => "ai",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    pub ctu_size: usize,
    pub max_depth: u8,
    pub qp: u8,
    pub skip_policy: SkipPolicy,
    pub gop: Gop,
    /// Full-search range in integer pels. Encoder only.
    pub search_range: u32,
}

impl Default for CodecConfig {
    fn default() -> CodecConfig {
        CodecConfig {
            ctu_size: 16,
            max_depth: 2,
            qp: 25,
            skip_policy: SkipPolicy::Subskip,
            gop: Gop::LowDelayP,
            search_range: 8,
        }
    }
}

impl CodecConfig {
    /// Configuration for a given CTU size with the deepest partitioning
    /// that still ends at 4x4.
    pub fn with_ctu(ctu_size: usize) -> CodecConfig {
        CodecConfig {
            ctu_size,
            max_depth: (ctu_size.trailing_zeros() as u8).saturating_sub(2),
            ..CodecConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![16, 32, 64].contains(&self.ctu_size) {
            return Err(Error::InvalidConfig(format!(
                "ctu size {} not in {{16, 32, 64}}",
                self.ctu_size
            )));
        }
        if self.min_cu_size() < 4
            || self.ctu_size >> self.max_depth << self.max_depth != self.ctu_size
        {
            return Err(Error::InvalidConfig(format!(
                "depth {} leaves CUs smaller than 4 at ctu {}",
                self.max_depth, self.ctu_size
            )));
        }
        if self.qp > 51 {
            return Err(Error::InvalidConfig(format!(
                "qp {} outside 0..=51",
                self.qp
            )));
        }
        if self.search_range > 64 {
            return Err(Error::InvalidConfig(format!(
                "search range {} above 64",
                self.search_range
            )));
        }
        Ok(())
    }

    pub fn min_cu_size(&self) -> usize {
        self.ctu_size
            .checked_shr(self.max_depth as u32)
            .unwrap_or(0)
    }

    /// Whether the frame is coded without reference.
    pub fn is_intra_frame(&self, frame_index: u32) -> bool {
        self.gop == Gop::AllIntra || frame_index == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredMode {
    Skip,
    Intra,
    Inter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum IntraDir {
    #[default]
    Dc = 0,
    Planar = 1,
    Horizontal = 2,
    Vertical = 3,
}

impl IntraDir {
    pub const ALL: [IntraDir; 4] = [
        IntraDir::Dc,
        IntraDir::Planar,
        IntraDir::Horizontal,
        IntraDir::Vertical,
    ];

    pub fn from_code(c: u8) -> IntraDir {
        IntraDir::ALL[(c & 3) as usize]
    }
}

/// Prediction parameters of one coding unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMode {
    pub mode: PredMode,
    pub merge_flag: bool,
    /// Always 0: the candidate list holds only the co-located zero vector.
    pub merge_index: u8,
    pub mv: MotionVector,
    pub intra_dir: IntraDir,
}

impl BlockMode {
    pub fn skip() -> BlockMode {
        BlockMode {
            mode: PredMode::Skip,
            merge_flag: true,
            merge_index: 0,
            mv: MotionVector::ZERO,
            intra_dir: IntraDir::Dc,
        }
    }

    pub fn intra(dir: IntraDir) -> BlockMode {
        BlockMode {
            mode: PredMode::Intra,
            merge_flag: false,
            merge_index: 0,
            mv: MotionVector::ZERO,
            intra_dir: dir,
        }
    }

    pub fn inter(mv: MotionVector, merge: bool) -> BlockMode {
        BlockMode {
            mode: PredMode::Inter,
            merge_flag: merge,
            merge_index: 0,
            mv: if merge { MotionVector::ZERO } else { mv },
            intra_dir: IntraDir::Dc,
        }
    }
}

/// A leaf of the coding quadtree with its quantized residual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodingUnit {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub depth: u8,
    pub mode: BlockMode,
    /// Levels per transform unit in raster order inside the CU; `None`
    /// when the unit has no nonzero coefficient. Empty for skip.
    pub residual: Vec<Option<Vec<i32>>>,
}

impl CodingUnit {
    pub fn has_residual(&self) -> bool {
        self.residual.iter().any(|t| t.is_some())
    }

    pub fn nonzero_levels(&self) -> usize {
        self.residual
            .iter()
            .flatten()
            .map(|t| t.iter().filter(|&&l| l != 0).count())
            .sum()
    }

    /// Transform size used inside this CU.
    pub fn tu_size(&self) -> usize {
        self.size.min(transform::MAX_TRANSFORM)
    }
}

/// Summary of one leaf for statistics and mode maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafInfo {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub mode: BlockMode,
    pub nonzero_levels: usize,
}

impl From<&CodingUnit> for LeafInfo {
    fn from(cu: &CodingUnit) -> LeafInfo {
        LeafInfo {
            x: cu.x,
            y: cu.y,
            size: cu.size,
            mode: cu.mode,
            nonzero_levels: cu.nonzero_levels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtuStats {
    /// Payload bits attributed to this CTU.
    pub bits: u64,
    /// Ideal code length in 1/32768 bit.
    pub cost: u64,
    pub is_roi: bool,
    pub leaves: Vec<LeafInfo>,
}

impl CtuStats {
    /// The mode covering the largest area of the CTU; ties prefer intra,
    /// then inter.
    pub fn dominant_mode(&self) -> PredMode {
        let mut area = [0usize; 3];
        for l in &self.leaves {
            let i = match l.mode.mode {
                PredMode::Intra => 0,
                PredMode::Inter => 1,
                PredMode::Skip => 2,
            };
            area[i] += l.size * l.size;
        }
        let best = (0..3).max_by_key(|&i| (area[i], 3 - i)).unwrap_or(2);
        [PredMode::Intra, PredMode::Inter, PredMode::Skip][best]
    }

    pub fn is_split(&self) -> bool {
        self.leaves.len() > 1
    }
}

/// Per-CTU accounting of one coded frame, in raster CTU order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameStats {
    pub frame_index: u32,
    pub ctu_size: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub ctus: Vec<CtuStats>,
}

impl FrameStats {
    pub fn total_bits(&self) -> u64 {
        self.ctus.iter().map(|c| c.bits).sum()
    }

    pub fn roi_bits(&self) -> u64 {
        self.ctus.iter().filter(|c| c.is_roi).map(|c| c.bits).sum()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &LeafInfo> {
        self.ctus.iter().flat_map(|c| c.leaves.iter())
    }

    /// Leaf counts per mode: `[intra, inter, skip]`.
    pub fn mode_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for l in self.leaves() {
            match l.mode.mode {
                PredMode::Intra => h[0] += 1,
                PredMode::Inter => h[1] += 1,
                PredMode::Skip => h[2] += 1,
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodedFrame {
    pub frame_index: u32,
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub homography: Homography,
    pub roi_mask: RoiMask,
    pub payload: Vec<u8>,
    pub stats: FrameStats,
}

impl CodedFrame {
    pub fn payload_bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }
}

/// Splits `total` bits over CTUs in proportion to their ideal costs, by
/// largest remainder with ties to the earlier CTU. Encoder and decoder
/// see identical costs, so both sides arrive at the same split.
pub fn apportion_bits(costs: &[u64], total: u64) -> Vec<u64> {
    let sum: u128 = costs.iter().map(|&c| c as u128).sum();
    if sum == 0 {
        let mut out = vec![0; costs.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let mut out = Vec::with_capacity(costs.len());
    let mut rem = Vec::with_capacity(costs.len());
    let mut assigned = 0u64;
    for (i, &c) in costs.iter().enumerate() {
        let num = c as u128 * total as u128;
        let q = (num / sum) as u64;
        out.push(q);
        rem.push((num % sum, i));
        assigned += q;
    }
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in rem.iter().take((total - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Whether the leaf `cu` lies outside the ROI under `policy`, i.e. whether
/// it must have been force-skipped.
pub fn must_skip(policy: SkipPolicy, mask: &RoiMask, ctu_size: usize, cu: &LeafInfo) -> bool {
    match policy {
        SkipPolicy::Off => false,
        SkipPolicy::Ns => {
            let (cx, cy) = (cu.x / ctu_size * ctu_size, cu.y / ctu_size * ctu_size);
            !mask.rect_has_roi(cx, cy, ctu_size, ctu_size)
        }
        SkipPolicy::Subskip => !mask.rect_has_roi(cu.x, cu.y, cu.size, cu.size),
    }
}
