//! Adaptive binary range coder.
//!
//! Carry-propagating range coder with 11-bit probabilities adapted by a
//! shift of 5, in the style popularized by LZMA. Every encoder and decoder
//! also accumulates the ideal code length of the bins it processes, in
//! units of 1/32768 bit, from a fixed table. Both sides see the same bins
//! with the same probabilities, so these sums agree exactly and are used
//! for per-block bit accounting.

use std::sync::LazyLock;

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 11;
pub const PROB_ONE: u16 = 1 << PROB_BITS;
pub const PROB_INIT: u16 = PROB_ONE / 2;
const ADAPT_SHIFT: u32 = 5;
const TOP: u32 = 1 << 24;

/// Fixed-point resolution of ideal code lengths.
pub const COST_ONE_BIT: u64 = 1 << 15;

/// Probability of a zero bin, in `1..PROB_ONE`.
pub type Prob = u16;

static COST_TABLE: LazyLock<Vec<u32>> = LazyLock::new(|| {
    (0..=PROB_ONE as u32)
        .map(|p| {
            if p == 0 {
                u32::MAX / 4
            } else {
                let bits = -((p as f64) / PROB_ONE as f64).log2();
                (bits * COST_ONE_BIT as f64).round() as u32
            }
        })
        .collect()
});

/// Ideal cost of coding `bit` with zero-probability `p`.
#[inline]
pub fn bin_cost(p: Prob, bit: bool) -> u64 {
    let q = if bit { PROB_ONE - p } else { p };
    COST_TABLE[q as usize] as u64
}

#[inline]
fn adapt(p: &mut Prob, bit: bool) {
    if bit {
        *p -= *p >> ADAPT_SHIFT;
    } else {
        *p += (PROB_ONE - *p) >> ADAPT_SHIFT;
    }
}

/// Anything that consumes bins: the real encoder or a cost estimator.
pub trait BinSink {
    fn encode(&mut self, p: &mut Prob, bit: bool);
    fn bypass(&mut self, bit: bool);
    /// Ideal cost of everything coded so far, in 1/32768 bit.
    fn cost(&self) -> u64;

    fn bypass_bits(&mut self, value: u32, n: u32) {
        for i in (0..n).rev() {
            self.bypass((value >> i) & 1 != 0);
        }
    }
}

/// Cost estimator used by mode decision; updates probabilities exactly as
/// the encoder would.
#[derive(Clone, Debug, Default)]
pub struct CostCounter {
    pub total: u64,
}

impl BinSink for CostCounter {
    #[inline]
    fn encode(&mut self, p: &mut Prob, bit: bool) {
        self.total += bin_cost(*p, bit);
        adapt(p, bit);
    }

    #[inline]
    fn bypass(&mut self, _bit: bool) {
        self.total += COST_ONE_BIT;
    }

    fn cost(&self) -> u64 {
        self.total
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    /// The very first byte out of the shift register is always zero and
    /// is not stored.
    skip_first: bool,
    bins: u64,
    cost: u64,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        RangeEncoder::new()
    }
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            skip_first: true,
            bins: 0,
            cost: 0,
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                let byte = temp.wrapping_add(carry);
                if self.skip_first {
                    debug_assert_eq!(byte, 0);
                    self.skip_first = false;
                } else {
                    self.out.push(byte);
                }
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    #[inline]
    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Flushes and returns the payload. A coder that saw no bins yields an
    /// empty payload.
    pub fn finish(mut self) -> Vec<u8> {
        if self.bins == 0 {
            return Vec::new();
        }
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

impl BinSink for RangeEncoder {
    #[inline]
    fn encode(&mut self, p: &mut Prob, bit: bool) {
        self.bins += 1;
        self.cost += bin_cost(*p, bit);
        let bound = (self.range >> PROB_BITS) * *p as u32;
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        adapt(p, bit);
        self.normalize();
    }

    #[inline]
    fn bypass(&mut self, bit: bool) {
        self.bins += 1;
        self.cost += COST_ONE_BIT;
        self.range >>= 1;
        if bit {
            self.low += self.range as u64;
        }
        self.normalize();
    }

    fn cost(&self) -> u64 {
        self.cost
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
    cost: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<RangeDecoder<'a>> {
        let mut d = RangeDecoder {
            data,
            pos: 0,
            range: u32::MAX,
            code: 0,
            cost: 0,
        };
        if !data.is_empty() {
            for _ in 0..4 {
                d.code = (d.code << 8) | d.next_byte()? as u32;
            }
        }
        Ok(d)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or_else(|| {
            Error::CorruptStream(format!("range decoder ran past {} bytes", self.data.len()))
        })?;
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode(&mut self, p: &mut Prob) -> Result<bool> {
        if self.data.is_empty() {
            return Err(Error::CorruptStream(
                "bin requested from empty payload".into(),
            ));
        }
        let bound = (self.range >> PROB_BITS) * *p as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        self.cost += bin_cost(*p, bit);
        adapt(p, bit);
        self.normalize()?;
        Ok(bit)
    }

    pub fn bypass(&mut self) -> Result<bool> {
        if self.data.is_empty() {
            return Err(Error::CorruptStream(
                "bin requested from empty payload".into(),
            ));
        }
        self.range >>= 1;
        let bit = if self.code >= self.range {
            self.code -= self.range;
            true
        } else {
            false
        };
        self.cost += COST_ONE_BIT;
        self.normalize()?;
        Ok(bit)
    }

    pub fn bypass_bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..n {
            v = (v << 1) | self.bypass()? as u32;
        }
        Ok(v)
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    /// Fails unless every payload byte was consumed: a mismatch means the
    /// encoder and decoder disagree on the bin sequence.
    pub fn finish(&self) -> Result<()> {
        // the flush writes four bytes past the last normalization, all of
        // which the decoder has already pulled in at this point
        if self.pos != self.data.len() {
            return Err(Error::CorruptStream(format!(
                "decoder consumed {} of {} payload bytes",
                self.pos,
                self.data.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream() {
        let e = RangeEncoder::new();
        assert!(e.finish().is_empty());
        let d = RangeDecoder::new(&[]).unwrap();
        d.finish().unwrap();
    }

    #[test]
    fn identical_symbols_converge() {
        let mut e = RangeEncoder::new();
        let mut p = PROB_INIT;
        for _ in 0..10_000 {
            e.encode(&mut p, false);
        }
        let out = e.finish();
        assert!(out.len() <= 50, "{} bytes", out.len());
        let mut d = RangeDecoder::new(&out).unwrap();
        let mut p = PROB_INIT;
        for _ in 0..10_000 {
            assert!(!d.decode(&mut p).unwrap());
        }
        d.finish().unwrap();
    }

    #[test]
    fn random_bits_cost_one_bit_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let bits: Vec<bool> = (0..8192).map(|_| rng.random()).collect();
        let mut e = RangeEncoder::new();
        let mut p = PROB_INIT;
        for &b in &bits {
            e.encode(&mut p, b);
        }
        let out = e.finish();
        let ratio = out.len() as f64 / 1024.0;
        assert!((ratio - 1.0).abs() <= 0.03, "{} bytes", out.len());

        let mut e = RangeEncoder::new();
        for &b in &bits {
            e.bypass(b);
        }
        let out = e.finish();
        assert!((out.len() as f64 / 1024.0 - 1.0).abs() <= 0.03);
        let mut d = RangeDecoder::new(&out).unwrap();
        for &b in &bits {
            assert_eq!(d.bypass().unwrap(), b);
        }
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let mut e = RangeEncoder::new();
        let mut p = PROB_INIT;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..4000 {
            e.encode(&mut p, rng.random());
        }
        let out = e.finish();
        let cut = &out[..out.len() / 2];
        let mut d = RangeDecoder::new(cut).unwrap();
        let mut p = PROB_INIT;
        let res: Result<Vec<bool>> = (0..4000).map(|_| d.decode(&mut p)).collect();
        assert!(matches!(res, Err(Error::CorruptStream(_))));
    }

    #[test]
    fn ideal_cost_agrees_between_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<bool> = (0..3000).map(|_| rng.random_bool(0.2)).collect();
        let mut e = RangeEncoder::new();
        let mut c = CostCounter::default();
        let (mut p1, mut p2) = (PROB_INIT, PROB_INIT);
        for &b in &bits {
            e.encode(&mut p1, b);
            c.encode(&mut p2, b);
        }
        assert_eq!(e.cost(), c.cost());
        let cost = e.cost();
        let out = e.finish();
        let mut d = RangeDecoder::new(&out).unwrap();
        let mut p = PROB_INIT;
        for &b in &bits {
            assert_eq!(d.decode(&mut p).unwrap(), b);
        }
        assert_eq!(d.cost(), cost);
        // ideal length tracks the real one closely
        let ideal_bytes = cost as f64 / COST_ONE_BIT as f64 / 8.0;
        assert!((out.len() as f64 - ideal_bytes).abs() < 8.0);
    }

    proptest! {
        #[test]
        fn round_trip(ops in prop::collection::vec((any::<bool>(), any::<bool>(), 0usize..4), 0..2000)) {
            let mut e = RangeEncoder::new();
            let mut probs = [PROB_INIT; 4];
            for &(bit, bypass, ctx) in &ops {
                if bypass { e.bypass(bit) } else { e.encode(&mut probs[ctx], bit) }
            }
            let out = e.finish();
            let mut d = RangeDecoder::new(&out).unwrap();
            let mut probs = [PROB_INIT; 4];
            for &(bit, bypass, ctx) in &ops {
                let got = if bypass { d.bypass().unwrap() } else { d.decode(&mut probs[ctx]).unwrap() };
                prop_assert_eq!(got, bit);
            }
            prop_assert!(d.finish().is_ok());
        }
    }
}
