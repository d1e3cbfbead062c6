//! The `roiskip` command line.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    format_rate_table, rate_diff_table, render_heatmap, render_mode_map, RateEntry,
};
use crate::bitstream::Bitstream;
use crate::codec::{CodecConfig, Gop, SkipPolicy};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::global_motion::GmeConfig;
use crate::io::{
    frame_to_pgm, mask_to_pgm, parse_raw_yuv420, parse_y4m, write_y4m, ColorSpace, Y4mHeader,
};
use crate::pipeline::{
    analyze_stream, decode_sequence, detect_sequence, encode_sequence, DetectConfig, FrameDetection,
};
use crate::roi::{mask_from_pels, MoConfig, RoiLabel};
use crate::synth::{generate_synthetic, parse_spec};

#[derive(Parser, Debug)]
#[command(
    name = "roiskip",
    version,
    about = "ROI-based skip coding for moving-camera aerial video"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Detect ROIs and code a sequence.
    Encode(EncodeArgs),
    /// Decode a stream and reconstruct full frames through the mosaic.
    Decode(DecodeArgs),
    /// Run global motion estimation and ROI detection only.
    Detect(DetectArgs),
    /// Bit-distribution report, heat maps and mode maps of a stream.
    Analyze(AnalyzeArgs),
    /// Render a synthetic sequence with ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Y4M file, or raw 8-bit 4:2:0 when --width and --height are given.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, requires = "height")]
    pub width: Option<usize>,
    #[arg(long, requires = "width")]
    pub height: Option<usize>,
    /// Frame rate for raw input, `N` or `N:D`.
    #[arg(long, default_value = "30")]
    pub fps: String,
}

#[derive(Args, Debug, Clone)]
pub struct GmeArgs {
    #[arg(long = "gme-max-features", id = "gme-max-features", default_value_t = GmeConfig::default().max_features)]
    pub max_features: usize,
    #[arg(long = "gme-harris-k", id = "gme-harris-k", default_value_t = GmeConfig::default().harris_k)]
    pub harris_k: f64,
    #[arg(long = "gme-quality", id = "gme-quality", default_value_t = GmeConfig::default().harris_quality)]
    pub quality: f64,
    #[arg(long = "gme-min-distance", id = "gme-min-distance", default_value_t = GmeConfig::default().min_feature_distance)]
    pub min_distance: f64,
    #[arg(long = "gme-window", id = "gme-window", default_value_t = GmeConfig::default().klt_window)]
    pub window: usize,
    #[arg(long = "gme-levels", id = "gme-levels", default_value_t = GmeConfig::default().klt_pyramid_levels)]
    pub levels: usize,
    #[arg(long = "gme-klt-iterations", id = "gme-klt-iterations", default_value_t = GmeConfig::default().klt_max_iterations)]
    pub klt_iterations: usize,
    #[arg(long = "gme-ransac-iterations", id = "gme-ransac-iterations", default_value_t = GmeConfig::default().ransac_iterations)]
    pub ransac_iterations: usize,
    #[arg(long = "gme-threshold", id = "gme-threshold", default_value_t = GmeConfig::default().ransac_inlier_threshold)]
    pub threshold: f64,
    #[arg(long = "gme-min-inliers", id = "gme-min-inliers", default_value_t = GmeConfig::default().min_inliers)]
    pub min_inliers: usize,
    #[arg(long = "gme-seed", id = "gme-seed", default_value_t = GmeConfig::default().ransac_seed)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct MoArgs {
    #[arg(long = "mo-threshold", id = "mo-threshold", default_value_t = MoConfig::default().diff_threshold)]
    pub threshold: f64,
    #[arg(long = "mo-blur", id = "mo-blur", default_value_t = MoConfig::default().blur_radius)]
    pub blur: usize,
    #[arg(long = "mo-min-area", id = "mo-min-area", default_value_t = MoConfig::default().min_blob_area)]
    pub min_area: usize,
    #[arg(long = "mo-dilate", id = "mo-dilate", default_value_t = MoConfig::default().dilate_radius)]
    pub dilate: usize,
}

impl GmeArgs {
    fn config(&self) -> GmeConfig {
        GmeConfig {
            max_features: self.max_features,
            harris_k: self.harris_k,
            harris_quality: self.quality,
            min_feature_distance: self.min_distance,
            klt_window: self.window,
            klt_pyramid_levels: self.levels,
            klt_max_iterations: self.klt_iterations,
            ransac_iterations: self.ransac_iterations,
            ransac_inlier_threshold: self.threshold,
            min_inliers: self.min_inliers,
            ransac_seed: self.seed,
        }
    }
}

impl MoArgs {
    fn config(&self) -> MoConfig {
        MoConfig {
            diff_threshold: self.threshold,
            blur_radius: self.blur,
            min_blob_area: self.min_area,
            dilate_radius: self.dilate,
        }
    }
}

fn detect_config(gme: &GmeArgs, mo: &MoArgs) -> DetectConfig {
    DetectConfig {
        gme: gme.config(),
        mo: mo.config(),
        ..DetectConfig::default()
    }
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u8).range(0..=51))]
    pub qp: u8,
    #[arg(long, default_value_t = 16, value_parser = parse_ctu)]
    pub ctu: usize,
    /// Maximum quadtree depth; defaults to the depth reaching 4x4.
    #[arg(long)]
    pub depth: Option<u8>,
    /// ns, subskip, or off (full RDO everywhere).
    #[arg(long, default_value = "subskip")]
    pub skip_policy: SkipPolicy,
    /// ldp or ai.
    #[arg(long, default_value = "ldp")]
    pub gop: Gop,
    #[arg(long, default_value_t = 8)]
    pub search_range: u32,
    /// Write per-frame ROI mask PGMs here.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Per-frame statistics CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Global motion log.
    #[arg(long)]
    pub gme_log: Option<PathBuf>,
    #[command(flatten)]
    pub gme: GmeArgs,
    #[command(flatten)]
    pub mo: MoArgs,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Write ROI masks and mosaic validity PGMs here.
    #[arg(long)]
    pub dump_masks: Option<PathBuf>,
    /// Also write the plain decoder reconstruction (no mosaic) as Y4M.
    #[arg(long)]
    pub decoded: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Global motion log; printed to stdout when omitted.
    #[arg(long)]
    pub gme_log: Option<PathBuf>,
    #[command(flatten)]
    pub gme: GmeArgs,
    #[command(flatten)]
    pub mo: MoArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub modemap: Option<PathBuf>,
    /// Pels per image pixel in heat and mode maps.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Original Y4M, enables ROI-PSNR in the report.
    #[arg(long)]
    pub original: Option<PathBuf>,
    /// Reference stream for a rate-difference table.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

fn parse_ctu(s: &str) -> std::result::Result<usize, String> {
    match s.parse() {
        Ok(n @ (16 | 32 | 64)) => Ok(n),
        _ => Err(format!("'{s}' is not one of 16, 32, 64")),
    }
}

fn parse_fps(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidConfig(format!("frame rate '{s}'"));
    let (n, d) = match s.split_once(':') {
        Some((n, d)) => (
            n.trim().parse().map_err(|_| bad())?,
            d.trim().parse().map_err(|_| bad())?,
        ),
        None => (s.trim().parse().map_err(|_| bad())?, 1),
    };
    if n == 0 || d == 0 {
        return Err(bad());
    }
    Ok((n, d))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Frames and frame rate of a Y4M or raw input.
pub fn load_video(args: &InputArgs) -> Result<(Vec<Frame>, (u32, u32))> {
    let data = read_file(&args.input)?;
    match (args.width, args.height) {
        (Some(w), Some(h)) if !data.starts_with(b"YUV4MPEG2") => {
            Ok((parse_raw_yuv420(&data, w, h)?, parse_fps(&args.fps)?))
        }
        _ => {
            let (hdr, frames) = parse_y4m(&data)?;
            Ok((frames, (hdr.fps_num, hdr.fps_den)))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

fn write_masks(dir: &Path, det: &[FrameDetection]) -> Result<()> {
    create_dir(dir)?;
    for d in det {
        write_file(
            &dir.join(format!("mask_{:05}.pgm", d.mask.frame_index)),
            &d.mask.to_pgm(),
        )?;
    }
    Ok(())
}

fn write_gme_log(path: Option<&Path>, det: &[FrameDetection], out: &mut dyn Write) -> Result<()> {
    let mut text = String::new();
    for d in &det[1..] {
        text.push_str(&d.log_line());
        text.push('\n');
    }
    match path {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            out.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn y4m_header_for(frames: &[Frame], fps: (u32, u32)) -> Y4mHeader {
    let mut hdr = Y4mHeader::new(frames[0].width, frames[0].height, fps.0, fps.1);
    hdr.colorspace = ColorSpace::C420(frames[0].bit_depth);
    hdr
}

fn save_y4m(path: &Path, frames: &[Frame], fps: (u32, u32)) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_y4m(&mut w, &y4m_header_for(frames, fps), frames)?;
    w.flush()?;
    Ok(())
}

fn encode(a: &EncodeArgs, out: &mut dyn Write) -> Result<()> {
    let (frames, fps) = load_video(&a.input)?;
    let mut cfg = CodecConfig::with_ctu(a.ctu);
    cfg.qp = a.qp;
    cfg.skip_policy = a.skip_policy;
    cfg.gop = a.gop;
    cfg.search_range = a.search_range;
    if let Some(d) = a.depth {
        cfg.max_depth = d;
    }
    cfg.validate()?;
    let (enc, det) = encode_sequence(&frames, fps, &detect_config(&a.gme, &a.mo), &cfg)?;
    write_file(&a.output, &enc.bitstream.to_bytes()?)?;
    if let Some(dir) = &a.masks {
        write_masks(dir, &det)?;
    }
    if let Some(p) = &a.stats {
        let mut w = BufWriter::new(fs::File::create(p)?);
        enc.report.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.gme_log {
        write_gme_log(Some(p), &det, out)?;
    }
    let fallbacks = det.iter().filter(|d| d.fallback).count();
    writeln!(out, "{}", enc.report.summary())?;
    if fallbacks > 0 {
        writeln!(
            out,
            "global motion fell back to full-frame ROI on {fallbacks} frame(s)"
        )?;
    }
    Ok(())
}

fn decode(a: &DecodeArgs, out: &mut dyn Write) -> Result<()> {
    let bs = Bitstream::from_bytes(&read_file(&a.input)?)?;
    if bs.frames.is_empty() {
        return Err(Error::CorruptStream("stream holds no frames".into()));
    }
    let dec = decode_sequence(&bs)?;
    let fps = (bs.header.fps_num, bs.header.fps_den);
    save_y4m(&a.output, &dec.frames, fps)?;
    if let Some(p) = &a.decoded {
        save_y4m(p, &dec.decoded, fps)?;
    }
    if let Some(dir) = &a.dump_masks {
        create_dir(dir)?;
        for (cf, valid) in bs.frames.iter().zip(&dec.validity) {
            let k = cf.frame_index;
            write_file(&dir.join(format!("mask_{k:05}.pgm")), &cf.roi_mask.to_pgm())?;
            write_file(
                &dir.join(format!("valid_{k:05}.pgm")),
                &mask_to_pgm(valid.width, valid.height, &valid.covered),
            )?;
        }
    }
    writeln!(
        out,
        "decoded {} frames {}x{}",
        dec.frames.len(),
        bs.header.width,
        bs.header.height
    )?;
    Ok(())
}

fn detect(a: &DetectArgs, out: &mut dyn Write) -> Result<()> {
    let (frames, _) = load_video(&a.input)?;
    let det = detect_sequence(&frames, &detect_config(&a.gme, &a.mo))?;
    if let Some(dir) = &a.masks {
        write_masks(dir, &det)?;
    }
    write_gme_log(a.gme_log.as_deref(), &det, out)
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let bs = Bitstream::from_bytes(&read_file(&a.input)?)?;
    let originals = match &a.original {
        Some(p) => Some(parse_y4m(&read_file(p)?)?.1),
        None => None,
    };
    let report = analyze_stream(&bs, originals.as_deref())?;
    let mut w = BufWriter::new(fs::File::create(&a.report)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    for (dir, heat) in [(&a.heatmap, true), (&a.modemap, false)] {
        let Some(dir) = dir else { continue };
        create_dir(dir)?;
        for cf in &bs.frames {
            let img = if heat {
                render_heatmap(&cf.stats, a.scale)
            } else {
                render_mode_map(&cf.stats, a.scale)
            };
            let name = if heat { "heat" } else { "modes" };
            write_file(
                &dir.join(format!("{name}_{:05}.ppm", cf.frame_index)),
                &img.to_ppm(),
            )?;
        }
    }
    writeln!(out, "{}", report.summary())?;
    if let Some(p) = &a.reference {
        let r = Bitstream::from_bytes(&read_file(p)?)?;
        let reference = RateEntry::new(p.display().to_string(), r.rate_kbps());
        let entry = RateEntry::new(a.input.display().to_string(), bs.rate_kbps());
        let diffs = rate_diff_table(&reference, &[entry])?;
        write!(out, "{}", format_rate_table(&reference, &diffs))?;
    }
    Ok(())
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.spec)?;
    let spec = parse_spec(&text)?;
    let seq = generate_synthetic(&spec)?;
    save_y4m(&a.output, &seq.frames, spec.fps)?;
    if let Some(dir) = &a.truth {
        create_dir(dir)?;
        let mut log = String::new();
        for (k, h) in seq.homographies.iter().enumerate() {
            log.push_str(&k.to_string());
            for p in &h.params {
                log.push_str(&format!(" {p:?}"));
            }
            log.push('\n');
        }
        write_file(&dir.join("homographies.txt"), log.as_bytes())?;
        let (w, h) = (spec.width, spec.height);
        for k in 0..seq.frames.len() {
            write_file(
                &dir.join(format!("na_{k:05}.pgm")),
                &mask_to_pgm(w, h, &seq.na_masks[k]),
            )?;
            write_file(
                &dir.join(format!("mo_{k:05}.pgm")),
                &mask_to_pgm(w, h, &seq.mo_masks[k]),
            )?;
            write_file(
                &dir.join(format!("sprite_{k:05}.pgm")),
                &mask_to_pgm(w, h, &seq.sprite_masks[k]),
            )?;
            let mut cells = mask_from_pels(&seq.na_masks[k], w, h, 16, RoiLabel::Na);
            let mo = mask_from_pels(&seq.mo_masks[k], w, h, 16, RoiLabel::Mo);
            cells = crate::roi::merge_masks(&cells, &mo)?;
            write_file(&dir.join(format!("mask_{k:05}.pgm")), &cells.to_pgm())?;
        }
        if let Some(f) = seq.frames.first() {
            write_file(&dir.join("frame_00000.pgm"), &frame_to_pgm(f))?;
        }
    }
    writeln!(
        out,
        "wrote {} frames {}x{}",
        seq.frames.len(),
        spec.width,
        spec.height
    )?;
    Ok(())
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => encode(a, out),
        Command::Decode(a) => decode(a, out),
        Command::Detect(a) => detect(a, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Synth(a) => synth(a, out),
    }
}

/// Process entry point; returns the exit code. Failures print
/// `error[<category>]: <message>` to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_forms() {
        assert_eq!(parse_fps("25").unwrap(), (25, 1));
        assert_eq!(parse_fps("30000:1001").unwrap(), (30000, 1001));
        assert!(parse_fps("0").is_err());
        assert!(parse_fps("x:1").is_err());
    }

    #[test]
    fn command_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn argument_parsing() {
        let cli = Cli::try_parse_from([
            "roiskip",
            "encode",
            "-i",
            "a.y4m",
            "-o",
            "a.rsk",
            "--qp",
            "30",
            "--ctu",
            "64",
            "--skip-policy",
            "ns",
            "--gop",
            "ai",
            "--gme-seed",
            "3",
            "--mo-dilate",
            "4",
        ])
        .unwrap();
        let Command::Encode(a) = cli.command else {
            panic!()
        };
        assert_eq!(
            (a.qp, a.ctu, a.skip_policy, a.gop),
            (30, 64, SkipPolicy::Ns, Gop::AllIntra)
        );
        assert_eq!(a.gme.config().ransac_seed, 3);
        assert_eq!(a.mo.config().dilate_radius, 4);
        assert_eq!(
            a.gme.config(),
            GmeConfig {
                ransac_seed: 3,
                ..GmeConfig::default()
            }
        );
        assert!(
            Cli::try_parse_from(["roiskip", "encode", "-i", "a", "-o", "b", "--ctu", "8"]).is_err()
        );
        assert!(
            Cli::try_parse_from(["roiskip", "encode", "-i", "a", "-o", "b", "--qp", "60"]).is_err()
        );
        assert!(Cli::try_parse_from([
            "roiskip",
            "encode",
            "-i",
            "a",
            "-o",
            "b",
            "--skip-policy",
            "x"
        ])
        .is_err());
    }
}
