use crate::error::{Error, Result};

/// Chroma planes at 4:2:0 subsampling, each `ceil(w/2) x ceil(h/2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chroma {
    pub u: Vec<u16>,
    pub v: Vec<u16>,
}

/// A single picture. The luma plane is the one every algorithm works on;
/// chroma is carried along for container round-trips only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub luma: Vec<u16>,
    pub chroma: Option<Chroma>,
    pub index: u32,
}

impl Frame {
    pub fn new(width: usize, height: usize, bit_depth: u8) -> Frame {
        Frame::filled(width, height, bit_depth, 0)
    }

    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16) -> Frame {
        Frame {
            width,
            height,
            bit_depth,
            luma: vec![value; width * height],
            chroma: None,
            index: 0,
        }
    }

    pub fn from_luma(width: usize, height: usize, bit_depth: u8, luma: Vec<u16>) -> Result<Frame> {
        if width == 0 || height == 0 || luma.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} samples for a {}x{} plane",
                luma.len(),
                width,
                height
            )));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::InvalidConfig(format!("bit depth {bit_depth}")));
        }
        let max = max_value(bit_depth);
        if let Some(bad) = luma.iter().find(|&&v| v > max) {
            return Err(Error::InvalidConfig(format!(
                "sample {bad} exceeds {bit_depth}-bit range"
            )));
        }
        Ok(Frame {
            width,
            height,
            bit_depth,
            luma,
            chroma: None,
            index: 0,
        })
    }

    pub fn with_index(mut self, index: u32) -> Frame {
        self.index = index;
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.luma[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.luma[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped to the plane (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u16 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.luma[cy * self.width + cx]
    }

    pub fn max_value(&self) -> u16 {
        max_value(self.bit_depth)
    }

    pub fn mid_gray(&self) -> u16 {
        1 << (self.bit_depth - 1)
    }

    pub fn same_geometry(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Extends the plane to `width x height` by replicating the last column/row.
    pub fn padded(&self, width: usize, height: usize) -> Frame {
        debug_assert!(width >= self.width && height >= self.height);
        let mut luma = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.min(self.height - 1);
            let row = &self.luma[sy * self.width..(sy + 1) * self.width];
            luma.extend_from_slice(row);
            let last = row[self.width - 1];
            luma.extend(std::iter::repeat_n(last, width - self.width));
        }
        Frame {
            width,
            height,
            bit_depth: self.bit_depth,
            luma,
            chroma: None,
            index: self.index,
        }
    }

    pub fn cropped(&self, width: usize, height: usize) -> Frame {
        debug_assert!(width <= self.width && height <= self.height);
        let mut luma = Vec::with_capacity(width * height);
        for y in 0..height {
            luma.extend_from_slice(&self.luma[y * self.width..y * self.width + width]);
        }
        Frame {
            width,
            height,
            bit_depth: self.bit_depth,
            luma,
            chroma: None,
            index: self.index,
        }
    }
}

pub fn max_value(bit_depth: u8) -> u16 {
    ((1u32 << bit_depth) - 1) as u16
}

/// Luma PSNR over the whole plane; `f64::INFINITY` when identical.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sse: f64 = a
        .luma
        .iter()
        .zip(&b.luma)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sse / a.luma.len() as f64, a.max_value()))
}

pub fn psnr_from_mse(mse: f64, max: u16) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        let m = max as f64;
        10.0 * (m * m / mse).log10()
    }
}
