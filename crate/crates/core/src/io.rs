//! Y4M, raw planar YUV and PGM input/output.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::frame::{Chroma, Frame};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    /// 4:2:0 with the given bit depth.
    C420(u8),
    /// Luma only.
    Mono(u8),
}

impl ColorSpace {
    pub fn bit_depth(&self) -> u8 {
        match *self {
            ColorSpace::C420(b) | ColorSpace::Mono(b) => b,
        }
    }

    fn parse(tag: &str) -> Result<ColorSpace> {
        let cs = match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => ColorSpace::C420(8),
            "mono" => ColorSpace::Mono(8),
            _ => {
                if let Some(d) = tag.strip_prefix("420p") {
                    ColorSpace::C420(parse_depth(d)?)
                } else if let Some(d) = tag.strip_prefix("mono") {
                    ColorSpace::Mono(parse_depth(d)?)
                } else {
                    return Err(Error::MalformedHeader(format!(
                        "unsupported colorspace C{tag}"
                    )));
                }
            }
        };
        Ok(cs)
    }

    fn tag(&self) -> String {
        match *self {
            ColorSpace::C420(8) => "420jpeg".into(),
            ColorSpace::C420(b) => format!("420p{b}"),
            ColorSpace::Mono(8) => "mono".into(),
            ColorSpace::Mono(b) => format!("mono{b}"),
        }
    }
}

fn parse_depth(s: &str) -> Result<u8> {
    match s.parse::<u8>() {
        Ok(b) if (8..=16).contains(&b) => Ok(b),
        _ => Err(Error::MalformedHeader(format!(
            "unsupported bit depth '{s}'"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub colorspace: ColorSpace,
}

impl Y4mHeader {
    pub fn new(width: usize, height: usize, fps_num: u32, fps_den: u32) -> Y4mHeader {
        Y4mHeader {
            width,
            height,
            fps_num,
            fps_den,
            colorspace: ColorSpace::C420(8),
        }
    }

    fn bytes_per_sample(&self) -> usize {
        if self.colorspace.bit_depth() > 8 {
            2
        } else {
            1
        }
    }

    fn chroma_dims(&self) -> (usize, usize) {
        (self.width.div_ceil(2), self.height.div_ceil(2))
    }

    fn frame_samples(&self) -> usize {
        let (cw, ch) = self.chroma_dims();
        match self.colorspace {
            ColorSpace::C420(_) => self.width * self.height + 2 * cw * ch,
            ColorSpace::Mono(_) => self.width * self.height,
        }
    }
}

fn parse_header_line(line: &str) -> Result<Y4mHeader> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Error::MalformedHeader("missing YUV4MPEG2 signature".into()));
    }
    let (mut w, mut h) = (None, None);
    let (mut num, mut den) = (30, 1);
    let mut cs = ColorSpace::C420(8);
    for t in tokens {
        let (key, val) = t.split_at(1);
        let bad = || Error::MalformedHeader(format!("bad header token '{t}'"));
        match key {
            "W" => w = Some(val.parse::<usize>().map_err(|_| bad())?),
            "H" => h = Some(val.parse::<usize>().map_err(|_| bad())?),
            "F" => {
                let (n, d) = val.split_once(':').ok_or_else(bad)?;
                num = n.parse().map_err(|_| bad())?;
                den = d.parse().map_err(|_| bad())?;
                if num == 0 || den == 0 {
                    return Err(bad());
                }
            }
            "C" => cs = ColorSpace::parse(val)?,
            "I" if val != "p" && val != "?" => {
                return Err(Error::MalformedHeader(format!(
                    "interlacing '{val}' not supported"
                )));
            }
            _ => {}
        }
    }
    match (w, h) {
        (Some(width), Some(height)) if width > 0 && height > 0 => Ok(Y4mHeader {
            width,
            height,
            fps_num: num,
            fps_den: den,
            colorspace: cs,
        }),
        _ => Err(Error::MalformedHeader("missing or zero W/H".into())),
    }
}

fn read_line(data: &[u8], pos: &mut usize) -> Option<String> {
    let rest = &data[*pos..];
    let end = rest.iter().position(|&b| b == b'\n')?;
    *pos += end + 1;
    Some(String::from_utf8_lossy(&rest[..end]).into_owned())
}

fn decode_samples(bytes: &[u8], wide: bool) -> Vec<u16> {
    if wide {
        bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    } else {
        bytes.iter().map(|&b| b as u16).collect()
    }
}

fn encode_samples(out: &mut Vec<u8>, samples: &[u16], wide: bool) {
    if wide {
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
    } else {
        out.extend(samples.iter().map(|&s| s.min(255) as u8));
    }
}

fn frame_from_planes(hdr: &Y4mHeader, raw: &[u8], index: usize) -> Result<Frame> {
    let wide = hdr.bytes_per_sample() == 2;
    let bd = hdr.colorspace.bit_depth();
    let samples = decode_samples(raw, wide);
    let n = hdr.width * hdr.height;
    let luma = samples[..n].to_vec();
    let mut f = Frame::from_luma(hdr.width, hdr.height, bd, luma)
        .map_err(|e| Error::MalformedHeader(format!("frame {index}: {e}")))?;
    if let ColorSpace::C420(_) = hdr.colorspace {
        let (cw, ch) = hdr.chroma_dims();
        let c = cw * ch;
        f.chroma = Some(Chroma {
            u: samples[n..n + c].to_vec(),
            v: samples[n + c..n + 2 * c].to_vec(),
        });
    }
    f.index = index as u32;
    Ok(f)
}

/// Parses a complete Y4M file.
pub fn parse_y4m(data: &[u8]) -> Result<(Y4mHeader, Vec<Frame>)> {
    let mut pos = 0;
    let line =
        read_line(data, &mut pos).ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let hdr = parse_header_line(&line)?;
    let frame_bytes = hdr.frame_samples() * hdr.bytes_per_sample();
    let mut frames = Vec::new();
    while pos < data.len() {
        let index = frames.len();
        let line = read_line(data, &mut pos).ok_or(Error::TruncatedFrame(index))?;
        if !line.starts_with("FRAME") {
            return Err(Error::MalformedHeader(format!(
                "frame {index}: expected FRAME marker"
            )));
        }
        if data.len() - pos < frame_bytes {
            return Err(Error::TruncatedFrame(index));
        }
        frames.push(frame_from_planes(
            &hdr,
            &data[pos..pos + frame_bytes],
            index,
        )?);
        pos += frame_bytes;
    }
    Ok((hdr, frames))
}

pub fn read_y4m<R: Read>(r: &mut R) -> Result<(Y4mHeader, Vec<Frame>)> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    parse_y4m(&data)
}

/// Serializes frames; 4:2:0 frames without chroma get neutral chroma.
pub fn write_y4m<W: Write>(w: &mut W, hdr: &Y4mHeader, frames: &[Frame]) -> Result<()> {
    writeln!(
        w,
        "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C{}",
        hdr.width,
        hdr.height,
        hdr.fps_num,
        hdr.fps_den,
        hdr.colorspace.tag()
    )?;
    let wide = hdr.bytes_per_sample() == 2;
    let (cw, ch) = hdr.chroma_dims();
    let mut buf = Vec::with_capacity(hdr.frame_samples() * hdr.bytes_per_sample());
    for f in frames {
        if f.width != hdr.width || f.height != hdr.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} frame in a {}x{} Y4M stream",
                f.width, f.height, hdr.width, hdr.height
            )));
        }
        buf.clear();
        encode_samples(&mut buf, &f.luma, wide);
        if let ColorSpace::C420(bd) = hdr.colorspace {
            match &f.chroma {
                Some(c) if c.u.len() == cw * ch && c.v.len() == cw * ch => {
                    encode_samples(&mut buf, &c.u, wide);
                    encode_samples(&mut buf, &c.v, wide);
                }
                _ => {
                    let neutral = vec![1u16 << (bd - 1); 2 * cw * ch];
                    encode_samples(&mut buf, &neutral, wide);
                }
            }
        }
        w.write_all(b"FRAME\n")?;
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Raw planar 8-bit 4:2:0 frames of known size.
pub fn parse_raw_yuv420(data: &[u8], width: usize, height: usize) -> Result<Vec<Frame>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig(format!(
            "raw frame size {width}x{height}"
        )));
    }
    let hdr = Y4mHeader::new(width, height, 30, 1);
    let size = hdr.frame_samples();
    let mut frames = Vec::new();
    for (index, chunk) in data.chunks(size).enumerate() {
        if chunk.len() < size {
            return Err(Error::TruncatedFrame(index));
        }
        frames.push(frame_from_planes(&hdr, chunk, index)?);
    }
    Ok(frames)
}

/// Binary PGM of the luma plane (16-bit big-endian samples above 8 bits).
pub fn frame_to_pgm(f: &Frame) -> Vec<u8> {
    let max = f.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", f.width, f.height, max).into_bytes();
    if max > 255 {
        for s in &f.luma {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(f.luma.iter().map(|&s| s as u8));
    }
    out
}

/// Binary PGM of a boolean mask, 255 where set.
pub fn mask_to_pgm(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&m| if m { 255 } else { 0 }));
    out
}
