//! Python bindings for the roiskip toolkit.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use roiskip::analysis::{rate_diff_table, roi_area_ratio, FrameReport, RateEntry};
use roiskip::bitstream::Bitstream;
use roiskip::codec::{CodecConfig, Gop, SkipPolicy};
use roiskip::global_motion::{estimate_global_motion, GmeConfig};
use roiskip::io::{parse_y4m, write_y4m, Y4mHeader};
use roiskip::pipeline::{
    analyze_stream, decode_sequence, detect_sequence, encode_with_masks, DetectConfig,
};
use roiskip::synth::{generate_synthetic, Sprite, SyntheticSpec};

fn err(e: roiskip::Error) -> PyErr {
    match e {
        roiskip::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(format!("[{}] {e}", e.category())),
    }
}

/// Luma picture with samples as unsigned integers.
#[pyclass(name = "Frame", module = "roiskip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyFrame {
    inner: roiskip::Frame,
}

#[pymethods]
impl PyFrame {
    #[new]
    #[pyo3(signature = (width, height, luma, bit_depth = 8))]
    fn new(width: usize, height: usize, luma: Vec<u16>, bit_depth: u8) -> PyResult<Self> {
        Ok(PyFrame {
            inner: roiskip::Frame::from_luma(width, height, bit_depth, luma).map_err(err)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn bit_depth(&self) -> u8 {
        self.inner.bit_depth
    }

    /// Samples in raster order.
    #[getter]
    fn luma(&self) -> Vec<u16> {
        self.inner.luma.clone()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<u16> {
        if x >= self.inner.width || y >= self.inner.height {
            return Err(PyValueError::new_err(format!(
                "({x}, {y}) outside the frame"
            )));
        }
        Ok(self.inner.get(x, y))
    }

    fn psnr(&self, other: &PyFrame) -> PyResult<f64> {
        roiskip::frame::psnr(&self.inner, &other.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame({}x{}, {} bit)",
            self.inner.width, self.inner.height, self.inner.bit_depth
        )
    }
}

/// Eight-parameter projective transform from frame k-1 to frame k.
#[pyclass(name = "Homography", module = "roiskip_py", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyHomography {
    inner: roiskip::Homography,
}

#[pymethods]
impl PyHomography {
    #[new]
    fn new(params: [f64; 8]) -> PyResult<Self> {
        Ok(PyHomography {
            inner: roiskip::Homography::new(params).map_err(err)?,
        })
    }

    #[staticmethod]
    fn identity() -> Self {
        PyHomography {
            inner: roiskip::Homography::identity(),
        }
    }

    #[staticmethod]
    fn translation(tx: f64, ty: f64) -> Self {
        PyHomography {
            inner: roiskip::Homography::translation(tx, ty),
        }
    }

    #[getter]
    fn params(&self) -> [f64; 8] {
        self.inner.params
    }

    /// Maps a point; None when it lands on the line at infinity.
    fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.inner.map(x, y)
    }

    fn invert(&self) -> PyResult<Self> {
        Ok(PyHomography {
            inner: self.inner.invert().map_err(err)?,
        })
    }

    /// `self` after `first`.
    fn compose(&self, first: &PyHomography) -> PyResult<Self> {
        Ok(PyHomography {
            inner: self.inner.compose(&first.inner).map_err(err)?,
        })
    }

    fn corner_error(&self, other: &PyHomography, width: usize, height: usize) -> f64 {
        self.inner.corner_error(&other.inner, width, height)
    }

    fn __repr__(&self) -> String {
        format!("Homography({:?})", self.inner.params)
    }
}

/// Block-grid ROI labels: 0 non-ROI, 1 moving object, 2 new area, 3 both.
#[pyclass(name = "RoiMask", module = "roiskip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyRoiMask {
    inner: roiskip::RoiMask,
}

#[pymethods]
impl PyRoiMask {
    #[getter]
    fn grid_width(&self) -> usize {
        self.inner.grid_width
    }

    #[getter]
    fn grid_height(&self) -> usize {
        self.inner.grid_height
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.inner.block_size
    }

    #[getter]
    fn labels(&self) -> Vec<u8> {
        self.inner.cells.iter().map(|c| c.code()).collect()
    }

    fn get(&self, bx: usize, by: usize) -> PyResult<u8> {
        if bx >= self.inner.grid_width || by >= self.inner.grid_height {
            return Err(PyValueError::new_err(format!(
                "cell ({bx}, {by}) outside the grid"
            )));
        }
        Ok(self.inner.get(bx, by).code())
    }

    fn roi_count(&self) -> usize {
        self.inner.roi_count()
    }

    fn area_ratio(&self) -> f64 {
        roi_area_ratio(&self.inner)
    }
}

#[pyclass(name = "Detection", module = "roiskip_py", get_all)]
struct PyDetection {
    homography: PyHomography,
    mask: PyRoiMask,
    fallback: bool,
}

#[pyclass(name = "FrameReport", module = "roiskip_py", get_all)]
struct PyFrameReport {
    frame_index: u32,
    bits: u64,
    c: f64,
    a: f64,
    r: Option<f64>,
    roi_psnr: Option<f64>,
    intra: usize,
    inter: usize,
    skip: usize,
}

impl From<&FrameReport> for PyFrameReport {
    fn from(f: &FrameReport) -> Self {
        PyFrameReport {
            frame_index: f.frame_index,
            bits: f.bits,
            c: f.c,
            a: f.a,
            r: f.r,
            roi_psnr: f.roi_psnr,
            intra: f.modes[0],
            inter: f.modes[1],
            skip: f.modes[2],
        }
    }
}

fn frames_of(frames: &[PyRef<'_, PyFrame>]) -> Vec<roiskip::Frame> {
    frames.iter().map(|f| f.inner.clone()).collect()
}

fn wrap_frames(frames: Vec<roiskip::Frame>) -> Vec<PyFrame> {
    frames.into_iter().map(|inner| PyFrame { inner }).collect()
}

#[pyfunction]
fn read_y4m(path: &str) -> PyResult<(Vec<PyFrame>, (u32, u32))> {
    let data = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    let (hdr, frames) = parse_y4m(&data).map_err(err)?;
    Ok((wrap_frames(frames), (hdr.fps_num, hdr.fps_den)))
}

#[pyfunction]
#[pyo3(name = "write_y4m", signature = (path, frames, fps = (30, 1)))]
fn py_write_y4m(path: &str, frames: Vec<PyRef<'_, PyFrame>>, fps: (u32, u32)) -> PyResult<()> {
    let frames = frames_of(&frames);
    let first = frames
        .first()
        .ok_or_else(|| PyValueError::new_err("no frames"))?;
    let hdr = Y4mHeader::new(first.width, first.height, fps.0, fps.1);
    let mut out = Vec::new();
    write_y4m(&mut out, &hdr, &frames).map_err(err)?;
    std::fs::write(path, out).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
}

/// Renders a synthetic pan over value-noise texture with optional square
/// sprites given as (size, x0, y0, vx, vy). Returns the frames and the true
/// per-frame homographies.
#[pyfunction]
#[pyo3(signature = (width, height, frames, seed = 1, translate = (2.0, 1.0), noise_sigma = 1.0, sprites = Vec::new()))]
fn synthesize(
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
    translate: (f64, f64),
    noise_sigma: f64,
    sprites: Vec<(usize, i64, i64, i64, i64)>,
) -> PyResult<(Vec<PyFrame>, Vec<PyHomography>)> {
    let mut spec = SyntheticSpec::new(width, height, frames, seed)
        .with_constant_motion(roiskip::Homography::translation(translate.0, translate.1));
    spec.noise_sigma = noise_sigma;
    for (i, &(size, x0, y0, vx, vy)) in sprites.iter().enumerate() {
        spec.sprites.push(Sprite::linear(
            size,
            size,
            seed + i as u64 + 1,
            (x0, y0),
            (vx, vy),
            frames,
        ));
    }
    let seq = generate_synthetic(&spec).map_err(err)?;
    let homs = seq
        .homographies
        .iter()
        .map(|&inner| PyHomography { inner })
        .collect();
    Ok((wrap_frames(seq.frames), homs))
}

#[pyfunction]
fn estimate_motion(prev: &PyFrame, curr: &PyFrame) -> PyResult<PyHomography> {
    let r = estimate_global_motion(&prev.inner, &curr.inner, &GmeConfig::default()).map_err(err)?;
    Ok(PyHomography {
        inner: r.homography,
    })
}

#[pyfunction]
fn detect(frames: Vec<PyRef<'_, PyFrame>>) -> PyResult<Vec<PyDetection>> {
    let det = detect_sequence(&frames_of(&frames), &DetectConfig::default()).map_err(err)?;
    Ok(det
        .into_iter()
        .map(|d| PyDetection {
            homography: PyHomography {
                inner: d.homography,
            },
            mask: PyRoiMask { inner: d.mask },
            fallback: d.fallback,
        })
        .collect())
}

/// Detects ROIs and encodes; returns the stream bytes.
#[pyfunction]
#[pyo3(signature = (frames, qp = 25, ctu = 16, skip_policy = "subskip", gop = "ldp", fps = (30, 1)))]
fn encode<'py>(
    py: Python<'py>,
    frames: Vec<PyRef<'py, PyFrame>>,
    qp: u8,
    ctu: usize,
    skip_policy: &str,
    gop: &str,
    fps: (u32, u32),
) -> PyResult<Bound<'py, PyBytes>> {
    let frames = frames_of(&frames);
    let cfg = CodecConfig {
        qp,
        skip_policy: skip_policy.parse::<SkipPolicy>().map_err(err)?,
        gop: gop.parse::<Gop>().map_err(err)?,
        ..CodecConfig::with_ctu(ctu)
    };
    let det = detect_sequence(&frames, &DetectConfig::default()).map_err(err)?;
    let masks: Vec<_> = det.iter().map(|d| d.mask.clone()).collect();
    let homs: Vec<_> = det.iter().map(|d| d.homography).collect();
    let enc = encode_with_masks(&frames, &masks, &homs, fps, &cfg).map_err(err)?;
    Ok(PyBytes::new(py, &enc.bitstream.to_bytes().map_err(err)?))
}

/// Decodes a stream; returns (mosaic output frames, plain reconstructions).
#[pyfunction]
fn decode(data: &[u8]) -> PyResult<(Vec<PyFrame>, Vec<PyFrame>)> {
    let bs = Bitstream::from_bytes(data).map_err(err)?;
    let out = decode_sequence(&bs).map_err(err)?;
    Ok((wrap_frames(out.frames), wrap_frames(out.decoded)))
}

/// Per-frame bit accounting of a stream; ROI-PSNR needs the originals.
#[pyfunction]
#[pyo3(signature = (data, originals = None))]
fn analyze(
    data: &[u8],
    originals: Option<Vec<PyRef<'_, PyFrame>>>,
) -> PyResult<Vec<PyFrameReport>> {
    let bs = Bitstream::from_bytes(data).map_err(err)?;
    let originals = originals.map(|o| frames_of(&o));
    let report = analyze_stream(&bs, originals.as_deref()).map_err(err)?;
    Ok(report.frames.iter().map(PyFrameReport::from).collect())
}

/// Percentage rate differences of `rates` against `reference`.
#[pyfunction]
fn rate_diff(reference: f64, rates: Vec<f64>) -> PyResult<Vec<f64>> {
    let entries: Vec<RateEntry> = rates
        .iter()
        .enumerate()
        .map(|(i, &r)| RateEntry::new(format!("r{i}"), r))
        .collect();
    let table = rate_diff_table(&RateEntry::new("reference", reference), &entries).map_err(err)?;
    Ok(table.iter().map(|d| d.diff_percent).collect())
}

#[pymodule]
fn roiskip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrame>()?;
    m.add_class::<PyHomography>()?;
    m.add_class::<PyRoiMask>()?;
    m.add_class::<PyDetection>()?;
    m.add_class::<PyFrameReport>()?;
    m.add_function(wrap_pyfunction!(read_y4m, m)?)?;
    m.add_function(wrap_pyfunction!(py_write_y4m, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_motion, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(rate_diff, m)?)?;
    Ok(())
}
