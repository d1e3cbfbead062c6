//! Seeded synthetic aerial-like sequences with ground truth.
//!
//! The background is an unbounded, band-limited value-noise field defined
//! in world coordinates and sampled analytically for every frame, so the
//! ground-truth frame-to-frame homographies are exact. Sprites are drawn in
//! frame coordinates on top and play the role of moving objects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{in_bounds, Homography, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Texture {
    /// Octaves from 48 down to 6 pel; plenty of trackable corners.
    #[default]
    Detailed,
    /// Octaves from 64 down to 16 pel; gentle enough for repeated resampling.
    Smooth,
}

impl Texture {
    fn octaves(self) -> &'static [(f64, f64)] {
        match self {
            Texture::Detailed => &[(48.0, 0.42), (24.0, 0.28), (12.0, 0.18), (6.0, 0.12)],
            Texture::Smooth => &[(64.0, 0.5), (32.0, 0.3), (16.0, 0.2)],
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lattice value noise with quintic interpolation, summed over octaves.
#[derive(Clone, Debug)]
pub struct ValueNoise {
    seed: u64,
    texture: Texture,
}

impl ValueNoise {
    pub fn new(seed: u64) -> ValueNoise {
        ValueNoise {
            seed,
            texture: Texture::Detailed,
        }
    }

    pub fn with_texture(seed: u64, texture: Texture) -> ValueNoise {
        ValueNoise { seed, texture }
    }

    fn lattice(&self, octave: usize, ix: i64, iy: i64) -> f64 {
        let h = splitmix(
            self.seed
                ^ splitmix(octave as u64 + 1)
                ^ splitmix((ix as u64).wrapping_mul(0x0001_0000_0001))
                    .wrapping_add(splitmix(iy as u64 ^ 0xabcd_ef01)),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    /// Noise value in roughly `[-1, 1]` at world position `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let mut v = 0.0;
        for (o, &(cell, amp)) in self.texture.octaves().iter().enumerate() {
            let gx = x / cell;
            let gy = y / cell;
            let x0 = gx.floor();
            let y0 = gy.floor();
            let tx = fade(gx - x0);
            let ty = fade(gy - y0);
            let (ix, iy) = (x0 as i64, y0 as i64);
            let a = self.lattice(o, ix, iy);
            let b = self.lattice(o, ix + 1, iy);
            let c = self.lattice(o, ix, iy + 1);
            let d = self.lattice(o, ix + 1, iy + 1);
            let top = a + (b - a) * tx;
            let bot = c + (d - c) * tx;
            v += amp * (top + (bot - top) * ty);
        }
        v
    }

    /// Renders a frame whose pel `p` shows the world point `frame_to_world(p)`.
    pub fn render_frame(
        &self,
        width: usize,
        height: usize,
        frame_to_world: &Homography,
        bit_depth: u8,
    ) -> Frame {
        let max = ((1u32 << bit_depth) - 1) as f64;
        let mid = (1u32 << (bit_depth - 1)) as f64;
        let gain = 0.7 * mid;
        let mut f = Frame::new(width, height, bit_depth);
        for y in 0..height {
            for x in 0..width {
                let (wx, wy) = frame_to_world.map(x as f64, y as f64).unwrap_or((0.0, 0.0));
                let v = (mid + gain * self.sample(wx, wy)).round().clamp(0.0, max);
                f.set(x, y, v as u16);
            }
        }
        f
    }
}

/// A rectangular textured object with one top-left position per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub positions: Vec<(i64, i64)>,
}

impl Sprite {
    /// Sprite moving with constant velocity from `origin`.
    pub fn linear(
        width: usize,
        height: usize,
        seed: u64,
        origin: (i64, i64),
        velocity: (i64, i64),
        frames: usize,
    ) -> Sprite {
        Sprite {
            width,
            height,
            seed,
            positions: (0..frames as i64)
                .map(|k| (origin.0 + velocity.0 * k, origin.1 + velocity.1 * k))
                .collect(),
        }
    }

    /// High-contrast checker of 4-pel squares modulated by noise, so any displacement
    /// of the sprite leaves strong differences behind.
    fn value(&self, lx: i64, ly: i64, bit_depth: u8) -> f64 {
        let max = ((1u32 << bit_depth) - 1) as f64;
        let n = ValueNoise::new(self.seed).sample(lx as f64 * 3.0, ly as f64 * 3.0);
        let check = ((lx.div_euclid(4) + ly.div_euclid(4)) % 2) == 0;
        let base = if check { 0.88 } else { 0.12 };
        ((base + 0.08 * n) * max).round()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub seed: u64,
    pub texture: Texture,
    /// Mapping from frame k-1 to frame k for every frame; entry 0 is ignored.
    pub motion: Vec<Homography>,
    pub sprites: Vec<Sprite>,
    pub noise_sigma: f64,
    pub bit_depth: u8,
    pub fps: (u32, u32),
}

impl SyntheticSpec {
    pub fn new(width: usize, height: usize, frame_count: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            width,
            height,
            frame_count,
            seed,
            texture: Texture::Detailed,
            motion: vec![Homography::identity(); frame_count],
            sprites: Vec::new(),
            noise_sigma: 0.0,
            bit_depth: 8,
            fps: (30, 1),
        }
    }

    pub fn with_constant_motion(mut self, h: Homography) -> SyntheticSpec {
        self.motion = vec![h; self.frame_count];
        self.motion[0] = Homography::identity();
        self
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidConfig(s));
        if self.width < 16 || self.height < 16 || self.frame_count == 0 {
            return bad(format!(
                "need at least a 16x16 frame and one frame, got {}x{} x {}",
                self.width, self.height, self.frame_count
            ));
        }
        if self.motion.len() != self.frame_count {
            return bad(format!(
                "{} motion entries for {} frames",
                self.motion.len(),
                self.frame_count
            ));
        }
        for (k, h) in self.motion.iter().enumerate() {
            if h.invert().is_err() {
                return bad(format!("motion for frame {k} is singular"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(1..=16).contains(&self.bit_depth) || self.fps.0 == 0 || self.fps.1 == 0 {
            return bad("bit depth or frame rate out of range".into());
        }
        for (i, s) in self.sprites.iter().enumerate() {
            if s.positions.len() != self.frame_count {
                return bad(format!("sprite {i} has {} positions", s.positions.len()));
            }
            for &(x, y) in &s.positions {
                if x < 0
                    || y < 0
                    || x + s.width as i64 > self.width as i64
                    || y + s.height as i64 > self.height as i64
                {
                    return bad(format!("sprite {i} leaves the frame at ({x},{y})"));
                }
            }
        }
        Ok(())
    }
}

/// Frames plus per-frame oracles. Masks are per pel, row-major.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    /// Ground-truth mapping from frame k-1 to frame k (identity for k = 0).
    pub homographies: Vec<Homography>,
    /// Pels of frame k not visible in frame k-1 (all pels for frame 0).
    pub na_masks: Vec<Vec<bool>>,
    /// Pels covered by a sprite in frame k.
    pub sprite_masks: Vec<Vec<bool>>,
    /// Sprite pels in frame k plus the motion-compensated sprite footprint
    /// of frame k-1: everything a perfect difference image lights up.
    pub mo_masks: Vec<Vec<bool>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let bg = ValueNoise::with_texture(spec.seed, spec.texture);
    let max = ((1u32 << spec.bit_depth) - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e_6f69_7365);
    let normal = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("sigma is finite");

    let mut world_to_frame = Homography::identity();
    let mut seq = SyntheticSequence {
        frames: Vec::with_capacity(spec.frame_count),
        homographies: Vec::with_capacity(spec.frame_count),
        na_masks: Vec::new(),
        sprite_masks: Vec::new(),
        mo_masks: Vec::new(),
    };
    for k in 0..spec.frame_count {
        let step = if k == 0 {
            Homography::identity()
        } else {
            spec.motion[k]
        };
        world_to_frame = step.compose(&world_to_frame)?;
        let frame_to_world = world_to_frame.invert()?;
        let mut f = bg.render_frame(w, h, &frame_to_world, spec.bit_depth);
        let mut sprite_mask = vec![false; w * h];
        for s in &spec.sprites {
            let (px, py) = s.positions[k];
            for ly in 0..s.height as i64 {
                for lx in 0..s.width as i64 {
                    let (x, y) = ((px + lx) as usize, (py + ly) as usize);
                    f.set(x, y, s.value(lx, ly, spec.bit_depth) as u16);
                    sprite_mask[y * w + x] = true;
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in f.luma.iter_mut() {
                *v = (*v as f64 + normal.sample(&mut rng))
                    .round()
                    .clamp(0.0, max) as u16;
            }
        }
        let inv_step = step.invert()?;
        let mut na = vec![k == 0; w * h];
        let mut mo = vec![false; w * h];
        if k > 0 {
            for y in 0..h {
                for x in 0..w {
                    let src = inv_step.map(x as f64, y as f64);
                    let i = y * w + x;
                    match src {
                        Some((sx, sy)) if in_bounds(sx, sy, w, h) => {
                            let ghost = spec.sprites.iter().any(|s| {
                                let (px, py) = s.positions[k - 1];
                                sx >= px as f64 - 0.5
                                    && sy >= py as f64 - 0.5
                                    && sx < (px + s.width as i64) as f64 - 0.5
                                    && sy < (py + s.height as i64) as f64 - 0.5
                            });
                            mo[i] = ghost || sprite_mask[i];
                        }
                        _ => {
                            na[i] = true;
                            mo[i] = sprite_mask[i];
                        }
                    }
                }
            }
        }
        seq.frames.push(f.with_index(k as u32));
        seq.homographies.push(step);
        seq.na_masks.push(na);
        seq.sprite_masks.push(sprite_mask);
        seq.mo_masks.push(mo);
    }
    Ok(seq)
}

/// Per-frame motion built from simple components around the frame centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionModel {
    pub translate: (f64, f64),
    pub rotate_deg: f64,
    pub zoom: f64,
    pub perspective: (f64, f64),
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel {
            translate: (0.0, 0.0),
            rotate_deg: 0.0,
            zoom: 1.0,
            perspective: (0.0, 0.0),
        }
    }
}

impl MotionModel {
    pub fn homography(&self, width: usize, height: usize) -> Result<Homography> {
        let c = Point::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let sim = Homography::similarity(
            c,
            self.rotate_deg.to_radians(),
            self.zoom,
            self.translate.0,
            self.translate.1,
        );
        let (p7, p8) = self.perspective;
        if p7 == 0.0 && p8 == 0.0 {
            return Ok(sim);
        }
        let to_c = Homography::translation(-c.x, -c.y);
        let from_c = Homography::translation(c.x, c.y);
        let persp = Homography::new([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, p7, p8])?;
        from_c.compose(&persp.compose(&to_c)?)?.compose(&sim)
    }
}

/// Parses the flat `key = value` description used by the `synth` command.
///
/// ```text
/// width = 512
/// height = 512
/// frames = 30
/// seed = 7
/// noise_sigma = 1.0
/// texture = detailed          # or smooth
/// translate = 2.0 0.5         # pel per frame
/// rotate_deg = 0.1            # per frame, about the centre
/// zoom = 1.001                # per frame
/// perspective = 1e-6 0        # a7 a8 per frame, about the centre
/// motion = a1 a2 a3 a4 a5 a6 a7 a8   # overrides the components above
/// sprite = w h x0 y0 vx vy seed      # repeatable
/// fps = 30 1
/// ```
pub fn parse_spec(text: &str) -> Result<SyntheticSpec> {
    let mut width = None;
    let mut height = None;
    let mut frames = None;
    let mut seed = 1u64;
    let mut sigma = 0.0;
    let mut texture = Texture::Detailed;
    let mut model = MotionModel::default();
    let mut raw: Option<[f64; 8]> = None;
    let mut sprites_raw: Vec<[i64; 7]> = Vec::new();
    let mut fps = (30u32, 1u32);
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::InvalidConfig(format!("line {}: {what}: {line:?}", ln + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad("expected key = value"))?;
        let key = key.trim();
        let nums = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = value
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("not a number"))?;
            if v.len() != n {
                return Err(bad(&format!("expected {n} values")));
            }
            Ok(v)
        };
        let int = || -> Result<u64> { value.trim().parse().map_err(|_| bad("not an integer")) };
        match key {
            "width" => width = Some(int()? as usize),
            "height" => height = Some(int()? as usize),
            "frames" => frames = Some(int()? as usize),
            "seed" => seed = int()?,
            "noise_sigma" => sigma = nums(1)?[0],
            "texture" => {
                texture = match value.trim() {
                    "detailed" => Texture::Detailed,
                    "smooth" => Texture::Smooth,
                    _ => return Err(bad("texture is detailed or smooth")),
                }
            }
            "translate" => {
                let v = nums(2)?;
                model.translate = (v[0], v[1]);
            }
            "rotate_deg" => model.rotate_deg = nums(1)?[0],
            "zoom" => model.zoom = nums(1)?[0],
            "perspective" => {
                let v = nums(2)?;
                model.perspective = (v[0], v[1]);
            }
            "motion" => {
                let v = nums(8)?;
                let mut a = [0.0; 8];
                a.copy_from_slice(&v);
                raw = Some(a);
            }
            "sprite" => {
                let v = nums(7)?;
                let mut a = [0i64; 7];
                for (d, s) in a.iter_mut().zip(&v) {
                    *d = *s as i64;
                }
                sprites_raw.push(a);
            }
            "fps" => {
                let v = nums(2)?;
                fps = (v[0] as u32, v[1] as u32);
            }
            _ => return Err(bad("unknown key")),
        }
    }
    let missing = |k: &str| Error::InvalidConfig(format!("missing key {k}"));
    let width = width.ok_or_else(|| missing("width"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    let frames = frames.ok_or_else(|| missing("frames"))?;
    let h = match raw {
        Some(a) => Homography::new(a)?,
        None => model.homography(width, height)?,
    };
    let mut spec = SyntheticSpec::new(width, height, frames, seed).with_constant_motion(h);
    spec.noise_sigma = sigma;
    spec.texture = texture;
    spec.fps = fps;
    spec.sprites = sprites_raw
        .iter()
        .map(|a| {
            Sprite::linear(
                a[0] as usize,
                a[1] as usize,
                a[6] as u64,
                (a[2], a[3]),
                (a[4], a[5]),
                frames,
            )
        })
        .collect();
    spec.validate()?;
    Ok(spec)
}
