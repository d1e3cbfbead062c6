//! Binarization and context modelling of the coding-tree syntax.
//!
//! Per CU, in coding order:
//!
//! ```text
//! split_flag                  if depth < max_depth
//! skip_flag                   inter frames only
//! intra_flag                  inter frames, non-skip
//! intra_dir (2 bins)          intra
//! merge_flag, [mvd x, mvd y]  inter
//! per TU: cbf, [last, levels] non-skip
//! ```
//!
//! Levels are sent in reverse zig-zag order from the last significant
//! position: a significance flag (implied at the last position), a
//! greater-than-one flag, an order-0 Exp-Golomb remainder and a bypass
//! sign.

use super::predict::MotionVector;
use super::rangecoder::{BinSink, Prob, RangeDecoder, PROB_INIT};
use super::transform::scan;
use super::{BlockMode, CodingUnit, IntraDir, PredMode};
use crate::error::{Error, Result};

const SIZE_CLASSES: usize = 4;
const LAST_CTX: usize = 11;
const SIG_CLASSES: usize = 11;
const GT1_CTX: usize = 4;
const MAX_LEVEL: u32 = 1 << 20;
const MAX_MV: u32 = 1 << 14;

/// Adaptive probability state for every context-coded bin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contexts {
    split: [Prob; 4],
    skip: Prob,
    intra: Prob,
    intra_dir: [Prob; 3],
    merge: Prob,
    mvd: [[Prob; 2]; 2],
    cbf: [Prob; SIZE_CLASSES],
    last: [[Prob; LAST_CTX]; SIZE_CLASSES],
    sig: [[Prob; SIG_CLASSES]; SIZE_CLASSES],
    gt1: [[Prob; GT1_CTX]; SIZE_CLASSES],
}

impl Default for Contexts {
    fn default() -> Contexts {
        Contexts {
            split: [PROB_INIT; 4],
            skip: PROB_INIT,
            intra: PROB_INIT,
            intra_dir: [PROB_INIT; 3],
            merge: PROB_INIT,
            mvd: [[PROB_INIT; 2]; 2],
            cbf: [PROB_INIT; SIZE_CLASSES],
            last: [[PROB_INIT; LAST_CTX]; SIZE_CLASSES],
            sig: [[PROB_INIT; SIG_CLASSES]; SIZE_CLASSES],
            gt1: [[PROB_INIT; GT1_CTX]; SIZE_CLASSES],
        }
    }
}

fn size_class(n: usize) -> usize {
    n.trailing_zeros() as usize - 2
}

fn sig_class(k: usize) -> usize {
    const BOUNDS: [usize; SIG_CLASSES - 1] = [1, 3, 6, 10, 15, 21, 36, 64, 128, 256];
    BOUNDS.iter().take_while(|&&b| k >= b).count()
}

fn bit_length(v: u32) -> u32 {
    32 - v.leading_zeros()
}

fn write_exp_golomb<S: BinSink>(s: &mut S, value: u32, k: u32) {
    let m = (value as u64 >> k) + 1;
    let nb = 64 - m.leading_zeros() - 1;
    for _ in 0..nb {
        s.bypass(true);
    }
    s.bypass(false);
    s.bypass_bits((m - (1 << nb)) as u32, nb);
    s.bypass_bits(value & ((1 << k) - 1), k);
}

fn read_exp_golomb(d: &mut RangeDecoder<'_>, k: u32) -> Result<u32> {
    let mut nb = 0;
    while d.bypass()? {
        nb += 1;
        if nb > 24 {
            return Err(Error::CorruptStream("exp-golomb prefix too long".into()));
        }
    }
    let m = (1u32 << nb) + d.bypass_bits(nb)?;
    Ok(((m - 1) << k) + d.bypass_bits(k)?)
}

pub fn write_split<S: BinSink>(s: &mut S, ctx: &mut Contexts, depth: u8, split: bool) {
    s.encode(&mut ctx.split[depth as usize], split);
}

pub fn read_split(d: &mut RangeDecoder<'_>, ctx: &mut Contexts, depth: u8) -> Result<bool> {
    d.decode(&mut ctx.split[depth as usize])
}

fn write_mvd_component<S: BinSink>(s: &mut S, p: &mut [Prob; 2], v: i32) {
    let a = v.unsigned_abs();
    s.encode(&mut p[0], a > 0);
    if a == 0 {
        return;
    }
    s.encode(&mut p[1], a > 1);
    if a > 1 {
        write_exp_golomb(s, a - 2, 1);
    }
    s.bypass(v < 0);
}

fn read_mvd_component(d: &mut RangeDecoder<'_>, p: &mut [Prob; 2]) -> Result<i32> {
    if !d.decode(&mut p[0])? {
        return Ok(0);
    }
    let mut a = 1;
    if d.decode(&mut p[1])? {
        a = read_exp_golomb(d, 1)? + 2;
    }
    if a > MAX_MV {
        return Err(Error::CorruptStream(format!(
            "motion vector difference {a}"
        )));
    }
    Ok(if d.bypass()? { -(a as i32) } else { a as i32 })
}

/// Residual of one transform unit (`levels` in raster order).
pub fn write_tu<S: BinSink>(s: &mut S, ctx: &mut Contexts, n: usize, levels: Option<&[i32]>) {
    let sc = size_class(n);
    let Some(levels) = levels else {
        s.encode(&mut ctx.cbf[sc], false);
        return;
    };
    s.encode(&mut ctx.cbf[sc], true);
    let order = scan(n);
    let last = order
        .iter()
        .rposition(|&p| levels[p] != 0)
        .expect("coded transform unit has a nonzero level");
    // last position: unary bit-length prefix, fixed-length suffix
    let g = bit_length(last as u32) as usize;
    let gmax = 2 * n.trailing_zeros() as usize;
    for i in 0..g {
        s.encode(&mut ctx.last[sc][i], true);
    }
    if g < gmax {
        s.encode(&mut ctx.last[sc][g], false);
    }
    if g >= 2 {
        s.bypass_bits(last as u32 - (1 << (g - 1)), g as u32 - 1);
    }
    let mut c1 = 1usize;
    for k in (0..=last).rev() {
        let l = levels[order[k]];
        if k < last {
            s.encode(&mut ctx.sig[sc][sig_class(k)], l != 0);
        }
        if l == 0 {
            continue;
        }
        let a = l.unsigned_abs();
        s.encode(&mut ctx.gt1[sc][c1], a > 1);
        if a > 1 {
            write_exp_golomb(s, a - 2, 0);
            c1 = 0;
        } else if c1 > 0 && c1 < GT1_CTX - 1 {
            c1 += 1;
        }
        s.bypass(l < 0);
    }
}

pub fn read_tu(d: &mut RangeDecoder<'_>, ctx: &mut Contexts, n: usize) -> Result<Option<Vec<i32>>> {
    let sc = size_class(n);
    if !d.decode(&mut ctx.cbf[sc])? {
        return Ok(None);
    }
    let order = scan(n);
    let gmax = 2 * n.trailing_zeros() as usize;
    let mut g = 0;
    while g < gmax && d.decode(&mut ctx.last[sc][g])? {
        g += 1;
    }
    let last = match g {
        0 => 0,
        1 => 1,
        _ => (1usize << (g - 1)) + d.bypass_bits(g as u32 - 1)? as usize,
    };
    let mut levels = vec![0i32; n * n];
    let mut c1 = 1usize;
    for k in (0..=last).rev() {
        let sig = k == last || d.decode(&mut ctx.sig[sc][sig_class(k)])?;
        if !sig {
            continue;
        }
        let mut a = 1u32;
        if d.decode(&mut ctx.gt1[sc][c1])? {
            a = read_exp_golomb(d, 0)? + 2;
            if a > MAX_LEVEL {
                return Err(Error::CorruptStream(format!("level {a} out of range")));
            }
            c1 = 0;
        } else if c1 > 0 && c1 < GT1_CTX - 1 {
            c1 += 1;
        }
        let v = if d.bypass()? { -(a as i32) } else { a as i32 };
        levels[order[k]] = v;
    }
    Ok(Some(levels))
}

/// Everything of a leaf CU after its split flag. `mvp` is the running
/// motion vector predictor and is updated by explicitly coded vectors.
pub fn write_cu<S: BinSink>(
    s: &mut S,
    ctx: &mut Contexts,
    cu: &CodingUnit,
    inter_frame: bool,
    mvp: &mut MotionVector,
) {
    let m = &cu.mode;
    if inter_frame {
        s.encode(&mut ctx.skip, m.mode == PredMode::Skip);
        if m.mode == PredMode::Skip {
            return;
        }
        s.encode(&mut ctx.intra, m.mode == PredMode::Intra);
    } else {
        debug_assert_eq!(m.mode, PredMode::Intra);
    }
    match m.mode {
        PredMode::Intra => {
            let c = m.intra_dir as usize;
            s.encode(&mut ctx.intra_dir[0], c >> 1 != 0);
            s.encode(&mut ctx.intra_dir[1 + (c >> 1)], c & 1 != 0);
        }
        PredMode::Inter => {
            s.encode(&mut ctx.merge, m.merge_flag);
            if !m.merge_flag {
                write_mvd_component(s, &mut ctx.mvd[0], m.mv.x - mvp.x);
                write_mvd_component(s, &mut ctx.mvd[1], m.mv.y - mvp.y);
                *mvp = m.mv;
            }
        }
        PredMode::Skip => unreachable!(),
    }
    let t = cu.tu_size();
    for tu in &cu.residual {
        write_tu(s, ctx, t, tu.as_deref());
    }
}

#[allow(clippy::too_many_arguments)]
pub fn read_cu(
    d: &mut RangeDecoder<'_>,
    ctx: &mut Contexts,
    x: usize,
    y: usize,
    size: usize,
    depth: u8,
    inter_frame: bool,
    mvp: &mut MotionVector,
) -> Result<CodingUnit> {
    let mut cu = CodingUnit {
        x,
        y,
        size,
        depth,
        mode: BlockMode::skip(),
        residual: Vec::new(),
    };
    let intra = if inter_frame {
        if d.decode(&mut ctx.skip)? {
            return Ok(cu);
        }
        d.decode(&mut ctx.intra)?
    } else {
        true
    };
    cu.mode = if intra {
        let hi = d.decode(&mut ctx.intra_dir[0])? as usize;
        let lo = d.decode(&mut ctx.intra_dir[1 + hi])? as usize;
        BlockMode::intra(IntraDir::from_code((hi << 1 | lo) as u8))
    } else if d.decode(&mut ctx.merge)? {
        BlockMode::inter(MotionVector::ZERO, true)
    } else {
        let dx = read_mvd_component(d, &mut ctx.mvd[0])?;
        let dy = read_mvd_component(d, &mut ctx.mvd[1])?;
        let mv = MotionVector::new(mvp.x + dx, mvp.y + dy);
        if mv.x.unsigned_abs() > MAX_MV || mv.y.unsigned_abs() > MAX_MV {
            return Err(Error::CorruptStream(format!(
                "motion vector {mv:?} out of range"
            )));
        }
        *mvp = mv;
        BlockMode::inter(mv, false)
    };
    let t = cu.tu_size();
    let count = (size / t) * (size / t);
    cu.residual = (0..count)
        .map(|_| read_tu(d, ctx, t))
        .collect::<Result<_>>()?;
    Ok(cu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::rangecoder::{CostCounter, RangeEncoder};
    use proptest::prelude::*;

    #[test]
    fn sig_classes_are_monotone() {
        assert_eq!(sig_class(0), 0);
        assert_eq!(sig_class(1), 1);
        assert_eq!(sig_class(5), 2);
        assert_eq!(sig_class(1023), SIG_CLASSES - 1);
        for k in 1..1024 {
            assert!(sig_class(k) >= sig_class(k - 1));
        }
    }

    #[test]
    fn exp_golomb_round_trip() {
        let mut e = RangeEncoder::new();
        let values = [0u32, 1, 2, 3, 7, 100, 65535, 1 << 20];
        for &v in &values {
            write_exp_golomb(&mut e, v, 0);
            write_exp_golomb(&mut e, v, 1);
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes).unwrap();
        for &v in &values {
            assert_eq!(read_exp_golomb(&mut d, 0).unwrap(), v);
            assert_eq!(read_exp_golomb(&mut d, 1).unwrap(), v);
        }
        d.finish().unwrap();
    }

    fn arb_cu(inter: bool) -> impl Strategy<Value = CodingUnit> {
        let size = prop::sample::select(vec![4usize, 8, 16, 32, 64]);
        (
            size,
            0u8..4,
            -40i32..40,
            -40i32..40,
            any::<bool>(),
            prop::collection::vec(-300i32..300, 64 * 64),
        )
            .prop_flat_map(move |(size, kind, mx, my, merge, pool)| {
                let t = size.min(32);
                let count = (size / t) * (size / t);
                prop::collection::vec(prop::option::of(0usize..pool.len()), count).prop_map(
                    move |sel| {
                        let residual = sel
                            .iter()
                            .enumerate()
                            .map(|(i, s)| {
                                s.map(|off| {
                                    let mut v: Vec<i32> = (0..t * t)
                                        .map(|j| {
                                            let x = pool[(off + j * 7 + i) % pool.len()];
                                            if x.abs() < 200 {
                                                0
                                            } else {
                                                x / 50
                                            }
                                        })
                                        .collect();
                                    v[(off + i) % (t * t)] = -3;
                                    v
                                })
                            })
                            .collect();
                        let mode = match (inter, kind) {
                            (false, k) => BlockMode::intra(IntraDir::from_code(k)),
                            (true, 0) => BlockMode::skip(),
                            (true, 1) => BlockMode::intra(IntraDir::from_code((mx & 3) as u8)),
                            _ => BlockMode::inter(MotionVector::new(mx, my), merge),
                        };
                        let residual = if mode.mode == PredMode::Skip {
                            Vec::new()
                        } else {
                            residual
                        };
                        CodingUnit {
                            x: 0,
                            y: 0,
                            size,
                            depth: 0,
                            mode,
                            residual,
                        }
                    },
                )
            })
    }

    proptest! {
        #[test]
        fn coding_units_round_trip(inter in any::<bool>(), cus in prop::collection::vec(arb_cu(true), 1..6), intra_cus in prop::collection::vec(arb_cu(false), 1..4)) {
            let cus = if inter { cus } else { intra_cus };
            let mut e = RangeEncoder::new();
            let mut counter = CostCounter::default();
            let (mut ctx, mut cctx) = (Contexts::default(), Contexts::default());
            let (mut mvp, mut cmvp) = (MotionVector::ZERO, MotionVector::ZERO);
            for cu in &cus {
                write_split(&mut e, &mut ctx, 1, false);
                write_cu(&mut e, &mut ctx, cu, inter, &mut mvp);
                write_split(&mut counter, &mut cctx, 1, false);
                write_cu(&mut counter, &mut cctx, cu, inter, &mut cmvp);
            }
            prop_assert_eq!(e.cost(), counter.cost());
            let bytes = e.finish();
            let mut d = RangeDecoder::new(&bytes).unwrap();
            let mut dctx = Contexts::default();
            let mut dmvp = MotionVector::ZERO;
            for cu in &cus {
                prop_assert!(!read_split(&mut d, &mut dctx, 1).unwrap());
                let got = read_cu(&mut d, &mut dctx, 0, 0, cu.size, 0, inter, &mut dmvp).unwrap();
                prop_assert_eq!(&got, cu);
            }
            d.finish().unwrap();
            prop_assert_eq!(d.cost(), counter.cost());
            prop_assert_eq!(dctx, ctx);
        }
    }
}
