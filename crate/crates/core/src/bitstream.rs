//! Container format.
//!
//! ```text
//! "RSKP" version:u8
//! width:u16 height:u16 fps_num:u16 fps_den:u16
//! bit_depth:u8 ctu_size:u8 max_depth:u8 skip_policy:u8 gop:u8 qp:u8
//! per frame:
//!   frame_index:u32  a1..a8:f64  mask:ceil(cells/4) bytes
//!   payload_length:u32  payload
//! ```
//!
//! All integers and floats are little-endian. The mask is the packed
//! 2-bit ROI grid at 16-pel granularity; its size follows from the frame
//! dimensions.

use std::io::{Read, Write};

use crate::codec::{frame_stats, CodecConfig, CodedFrame, Gop, SkipPolicy};
use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::roi::{RoiMask, DEFAULT_BLOCK_SIZE};

pub const MAGIC: &[u8; 4] = b"RSKP";
pub const VERSION: u8 = 1;
/// Bytes of the sequence header including magic and version.
pub const HEADER_BYTES: usize = 4 + 1 + 8 + 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SequenceHeader {
    pub width: usize,
    pub height: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub bit_depth: u8,
    pub codec: CodecConfig,
}

impl SequenceHeader {
    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    /// Size of the per-frame section excluding the payload.
    pub fn frame_overhead_bytes(&self) -> usize {
        let cells =
            self.width.div_ceil(DEFAULT_BLOCK_SIZE) * self.height.div_ceil(DEFAULT_BLOCK_SIZE);
        4 + 64 + cells.div_ceil(4) + 4
    }

    fn validate(&self) -> Result<()> {
        let fits = |v: usize| v > 0 && v <= u16::MAX as usize;
        if !fits(self.width) || !fits(self.height) {
            return Err(Error::InvalidConfig(format!(
                "frame size {}x{}",
                self.width, self.height
            )));
        }
        if self.fps_num == 0
            || self.fps_den == 0
            || self.fps_num > u16::MAX as u32
            || self.fps_den > u16::MAX as u32
        {
            return Err(Error::InvalidConfig(format!(
                "frame rate {}/{}",
                self.fps_num, self.fps_den
            )));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(Error::InvalidConfig(format!(
                "bit depth {}",
                self.bit_depth
            )));
        }
        self.codec.validate()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        for v in [
            self.width,
            self.height,
            self.fps_num as usize,
            self.fps_den as usize,
        ] {
            w.write_all(&(v as u16).to_le_bytes())?;
        }
        let c = &self.codec;
        w.write_all(&[
            self.bit_depth,
            c.ctu_size as u8,
            c.max_depth,
            c.skip_policy as u8,
            c.gop as u8,
            c.qp,
        ])?;
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<SequenceHeader> {
        let mut b = [0u8; HEADER_BYTES];
        r.read_exact(&mut b)
            .map_err(|_| Error::MalformedHeader("stream shorter than its header".into()))?;
        if &b[..4] != MAGIC {
            return Err(Error::MalformedHeader("missing RSKP signature".into()));
        }
        if b[4] != VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {}",
                b[4]
            )));
        }
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let h = SequenceHeader {
            width: u16_at(5) as usize,
            height: u16_at(7) as usize,
            fps_num: u16_at(9) as u32,
            fps_den: u16_at(11) as u32,
            bit_depth: b[13],
            codec: CodecConfig {
                ctu_size: b[14] as usize,
                max_depth: b[15],
                skip_policy: SkipPolicy::from_code(b[16])?,
                gop: Gop::from_code(b[17])?,
                qp: b[18],
                ..CodecConfig::default()
            },
        };
        h.validate()
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        Ok(h)
    }
}

pub fn write_frame<W: Write>(w: &mut W, header: &SequenceHeader, frame: &CodedFrame) -> Result<()> {
    if frame.width != header.width || frame.height != header.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} frame in a {}x{} stream",
            frame.width, frame.height, header.width, header.height
        )));
    }
    let expected = RoiMask::new(header.width, header.height, DEFAULT_BLOCK_SIZE);
    if !frame.roi_mask.same_grid(&expected) {
        return Err(Error::GridMismatch(format!(
            "stream masks use {DEFAULT_BLOCK_SIZE}-pel cells, got {}",
            frame.roi_mask.block_size
        )));
    }
    let len = u32::try_from(frame.payload.len())
        .map_err(|_| Error::InvalidConfig(format!("payload of {} bytes", frame.payload.len())))?;
    w.write_all(&frame.frame_index.to_le_bytes())?;
    for p in frame.homography.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&frame.roi_mask.pack())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&frame.payload)?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CorruptStream(format!("stream ends inside {what}")))
}

/// Reads the next frame section, or `None` at a clean end of stream.
/// Statistics are recomputed by parsing the payload.
pub fn read_frame<R: Read>(r: &mut R, header: &SequenceHeader) -> Result<Option<CodedFrame>> {
    let mut idx = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut idx[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    match got {
        0 => return Ok(None),
        4 => {}
        _ => {
            return Err(Error::CorruptStream(
                "stream ends inside a frame index".into(),
            ))
        }
    }
    let frame_index = u32::from_le_bytes(idx);
    let mut params = [0f64; 8];
    for p in params.iter_mut() {
        let mut b = [0u8; 8];
        read_exact_or(r, &mut b, "a homography")?;
        *p = f64::from_le_bytes(b);
    }
    let homography = Homography::new(params)
        .map_err(|e| Error::CorruptStream(format!("frame {frame_index}: {e}")))?;
    let cells = RoiMask::new(header.width, header.height, DEFAULT_BLOCK_SIZE)
        .cells
        .len();
    let mut packed = vec![0u8; cells.div_ceil(4)];
    read_exact_or(r, &mut packed, "a mask")?;
    let mut roi_mask = RoiMask::unpack(&packed, header.width, header.height, DEFAULT_BLOCK_SIZE)?;
    roi_mask.frame_index = frame_index;
    let mut len = [0u8; 4];
    read_exact_or(r, &mut len, "a payload length")?;
    let len = u32::from_le_bytes(len) as usize;
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::CorruptStream(format!(
            "frame {frame_index}: payload has {} of {len} bytes",
            payload.len()
        )));
    }
    let mut frame = CodedFrame {
        frame_index,
        width: header.width,
        height: header.height,
        bit_depth: header.bit_depth,
        homography,
        roi_mask,
        payload,
        stats: crate::codec::FrameStats {
            frame_index,
            ctu_size: header.codec.ctu_size,
            grid_width: 0,
            grid_height: 0,
            ctus: Vec::new(),
        },
    };
    frame.stats = frame_stats(&frame, &header.codec)?;
    Ok(Some(frame))
}

/// A whole coded sequence in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: SequenceHeader,
    pub frames: Vec<CodedFrame>,
}

impl Bitstream {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        self.header.write(w)?;
        for f in &self.frames {
            write_frame(w, &self.header, f)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Bitstream> {
        let header = SequenceHeader::read(r)?;
        let mut frames = Vec::new();
        while let Some(f) = read_frame(r, &header)? {
            if f.frame_index as usize != frames.len() {
                return Err(Error::CorruptStream(format!(
                    "frame index {} where {} was expected",
                    f.frame_index,
                    frames.len()
                )));
            }
            frames.push(f);
        }
        Ok(Bitstream { header, frames })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Bitstream> {
        Bitstream::read(&mut bytes)
    }

    /// Exact serialized size in bits.
    pub fn size_bits(&self) -> u64 {
        let per_frame = self.header.frame_overhead_bytes() as u64;
        8 * (HEADER_BYTES as u64
            + self
                .frames
                .iter()
                .map(|f| per_frame + f.payload.len() as u64)
                .sum::<u64>())
    }

    pub fn payload_bits(&self) -> u64 {
        self.frames.iter().map(|f| f.payload_bits()).sum()
    }

    /// Mean rate in kbit/s at the declared frame rate, counting every
    /// byte of the stream.
    pub fn rate_kbps(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.size_bits() as f64 * self.header.fps() / self.frames.len() as f64 / 1000.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Encoder;
    use crate::frame::Frame;
    use crate::roi::{first_frame_mask, RoiLabel};
    use crate::synth::ValueNoise;

    fn stream() -> Bitstream {
        let codec = CodecConfig::default();
        let header = SequenceHeader {
            width: 40,
            height: 24,
            fps_num: 30,
            fps_den: 1,
            bit_depth: 8,
            codec,
        };
        let mut enc = Encoder::new(codec).unwrap();
        let mut frames = Vec::new();
        for k in 0..3 {
            let f: Frame =
                ValueNoise::new(k).render_frame(40, 24, &Homography::translation(k as f64, 0.0), 8);
            let mut mask = if k == 0 {
                first_frame_mask(40, 24, 16)
            } else {
                RoiMask::new(40, 24, 16)
            };
            mask.set(2, 1, RoiLabel::Mo);
            frames.push(
                enc.encode(&f, &mask, &Homography::translation(1.0, 0.5))
                    .unwrap(),
            );
        }
        Bitstream { header, frames }
    }

    #[test]
    fn round_trip() {
        let s = stream();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len() as u64 * 8, s.size_bits());
        assert_eq!(&bytes[..4], b"RSKP");
        let back = Bitstream::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn header_layout() {
        let s = stream();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes[4], VERSION);
        assert_eq!(&bytes[5..13], &[40, 0, 24, 0, 30, 0, 1, 0]);
        assert_eq!(&bytes[13..19], &[8, 16, 2, 1, 0, 25]);
        assert_eq!(u32::from_le_bytes(bytes[19..23].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(bytes[23..31].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[39..47].try_into().unwrap()), 1.0);
    }

    #[test]
    fn damaged_streams_are_rejected() {
        let bytes = stream().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Bitstream::from_bytes(&bad),
            Err(Error::MalformedHeader(_))
        ));
        let mut bad = bytes.clone();
        bad[16] = 9;
        assert!(matches!(
            Bitstream::from_bytes(&bad),
            Err(Error::MalformedHeader(_))
        ));
        for cut in [10, 25, bytes.len() - 1] {
            let e = Bitstream::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(e, Error::MalformedHeader(_) | Error::CorruptStream(_)),
                "{e}"
            );
        }
    }
}
