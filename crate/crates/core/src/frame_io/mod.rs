//! Frame decoding, normalization and seed-frame selection.

pub mod codec;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::proposal::{self, ProposalBackend, ProposalError};
use crate::raster::Plane;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("input directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("need at least 2 frames, found {found}")]
    TooFewFrames { found: usize },
    #[error("cannot decode {file}: {reason}")]
    UndecodableImage { file: String, reason: String },
    #[error("bad target dimensions {width}x{height} (both must be >= 2)")]
    BadDimensions { width: usize, height: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("no frame with hand presence among {frames} frames")]
    NoHandFrameFound { frames: usize },
    #[error("seed frame {index} out of range for {frame_count} frames")]
    SeedFrameOutOfRange { index: usize, frame_count: usize },
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Frames(#[from] FrameError),
}

/// Per-channel colour planes.
pub type RgbPlanes = [Plane; 3];

/// One decoded frame. Luminance and colour samples live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub gray: Plane,
    pub rgb: Option<RgbPlanes>,
}

fn check_unit_range(p: &Plane, what: &str) -> Result<(), FrameError> {
    match p.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(FrameError::InvalidFrame(format!("{what} sample {i} outside [0,1]"))),
        None => Ok(()),
    }
}

impl Frame {
    pub fn new(index: usize, gray: Plane, rgb: Option<RgbPlanes>) -> Result<Self, FrameError> {
        if gray.width() < 2 || gray.height() < 2 {
            return Err(FrameError::BadDimensions { width: gray.width(), height: gray.height() });
        }
        check_unit_range(&gray, "gray")?;
        if let Some(planes) = &rgb {
            for (c, p) in planes.iter().enumerate() {
                if p.width() != gray.width() || p.height() != gray.height() {
                    return Err(FrameError::InvalidFrame(format!("rgb channel {c} has mismatched size")));
                }
                check_unit_range(p, "rgb")?;
            }
        }
        Ok(Self { index, gray, rgb })
    }

    /// Gray-only frame; for synthetic sequences and tests.
    pub fn from_gray(index: usize, gray: Plane) -> Result<Self, FrameError> {
        Self::new(index, gray, None)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.gray.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.gray.height()
    }
}

/// Ordered, immutable frames of uniform size.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    pub fps: Option<f64>,
    pub source_id: String,
    /// Files the frames were decoded from; empty for in-memory sequences.
    files: Vec<PathBuf>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: Option<f64>, source_id: impl Into<String>) -> Result<Self, FrameError> {
        if frames.len() < 2 {
            return Err(FrameError::TooFewFrames { found: frames.len() });
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        for (i, f) in frames.iter().enumerate() {
            if f.index != i {
                return Err(FrameError::InvalidFrame(format!("frame at position {i} has index {}", f.index)));
            }
            if f.width() != w || f.height() != h {
                return Err(FrameError::InvalidFrame(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.width(),
                    f.height()
                )));
            }
        }
        Ok(Self { frames, fps, source_id: source_id.into(), files: Vec::new() })
    }

    /// Builds a sequence from luminance planes, assigning indices 0..n.
    pub fn from_planes(planes: Vec<Plane>, source_id: impl Into<String>) -> Result<Self, FrameError> {
        let frames =
            planes.into_iter().enumerate().map(|(i, p)| Frame::from_gray(i, p)).collect::<Result<Vec<_>, _>>()?;
        Self::new(frames, None, source_id)
    }

    /// Frame `i` at its original resolution, decoded again from disk.
    /// In-memory sequences return the stored frame.
    pub fn original(&self, i: usize) -> Result<Frame, FrameError> {
        match self.files.get(i) {
            Some(path) => {
                let mut f = decode_file(path)?;
                f.index = i;
                Ok(f)
            }
            None => Ok(self.frames[i].clone()),
        }
    }

    #[inline]
    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }
}

/// Luma from an RGB triple with fixed Rec. 601 weights.
#[inline]
pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

/// Per-pixel luminance of three colour planes.
pub fn to_grayscale(rgb: &RgbPlanes) -> Plane {
    let [r, g, b] = rgb;
    let data = r
        .data()
        .iter()
        .zip(g.data())
        .zip(b.data())
        .map(|((&r, &g), &b)| {
            // rounding can push the weighted sum a hair outside the channel span
            let lo = r.min(g).min(b);
            let hi = r.max(g).max(b);
            luminance(r, g, b).clamp(lo, hi)
        })
        .collect();
    Plane::new(r.width(), r.height(), data)
}

fn resize_plane(src: &Plane, w: usize, h: usize) -> Plane {
    if src.width() == w && src.height() == h {
        return src.clone();
    }
    let sx = src.width() as f64 / w as f64;
    let sy = src.height() as f64 / h as f64;
    Plane::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5) * sx - 0.5;
        let v = (y as f64 + 0.5) * sy - 0.5;
        (src.sample(u, v) as f32).clamp(0.0, 1.0)
    })
}

/// Bilinear resize with pixel-center alignment (`src = (dst + 0.5) * scale - 0.5`).
pub fn resize_bilinear(f: &Frame, w: usize, h: usize) -> Result<Frame, FrameError> {
    if w < 2 || h < 2 {
        return Err(FrameError::BadDimensions { width: w, height: h });
    }
    let gray = resize_plane(&f.gray, w, h);
    let rgb = f.rgb.as_ref().map(|[r, g, b]| [resize_plane(r, w, h), resize_plane(g, w, h), resize_plane(b, w, h)]);
    Ok(Frame { index: f.index, gray, rgb })
}

const EXTENSIONS: &[&str] = &["pgm", "ppm", "pnm", "png"];

/// Lists numbered frame files sorted by (number, name).
fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>, FrameError> {
    let entries = std::fs::read_dir(dir).map_err(|e| FrameError::Io { path: dir.to_path_buf(), source: e })?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| FrameError::Io { path: dir.to_path_buf(), source: e })?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        match stem.parse::<u64>() {
            Ok(n) if stem.bytes().all(|b| b.is_ascii_digit()) => {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                numbered.push((n, name, path));
            }
            _ => log::warn!("skipping {}: name is not a frame number", path.display()),
        }
    }
    numbered.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    Ok(numbered.into_iter().map(|(_, _, p)| p).collect())
}

fn decode_file(path: &Path) -> Result<Frame, FrameError> {
    let file = path.file_name().unwrap().to_string_lossy().into_owned();
    let bytes = std::fs::read(path).map_err(|e| FrameError::Io { path: path.to_path_buf(), source: e })?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let img = codec::decode_by_extension(ext, &bytes)
        .map_err(|reason| FrameError::UndecodableImage { file: file.clone(), reason })?;
    if img.width < 2 || img.height < 2 {
        return Err(FrameError::UndecodableImage { file, reason: "image smaller than 2x2".into() });
    }
    let (w, h) = (img.width, img.height);
    let frame = if img.channels == 1 {
        Frame::new(0, Plane::new(w, h, img.samples), None)?
    } else {
        let channel = |c: usize| Plane::new(w, h, img.samples.iter().skip(c).step_by(3).copied().collect());
        let rgb = [channel(0), channel(1), channel(2)];
        Frame::new(0, to_grayscale(&rgb), Some(rgb))?
    };
    Ok(frame)
}

/// Loads a directory of numbered frames, converts to luminance and resizes
/// to `cfg.resize_w x cfg.resize_h`. Files decode in parallel.
pub fn load_sequence(path: &Path, cfg: &PipelineConfig) -> Result<FrameSequence, FrameError> {
    if !path.is_dir() {
        return Err(FrameError::MissingDirectory(path.to_path_buf()));
    }
    let files = list_frame_files(path)?;
    if files.len() < 2 {
        return Err(FrameError::TooFewFrames { found: files.len() });
    }
    let frames = files
        .par_iter()
        .enumerate()
        .map(|(i, file)| {
            let mut f = resize_bilinear(&decode_file(file)?, cfg.resize_w, cfg.resize_h)?;
            f.index = i;
            Ok(f)
        })
        .collect::<Result<Vec<_>, FrameError>>()?;
    log::info!("loaded {} frames from {}", frames.len(), path.display());
    let source_id = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut seq = FrameSequence::new(frames, None, source_id)?;
    seq.files = files;
    Ok(seq)
}

/// Finds the first frame on which the backend reports a clearly visible hand.
///
/// Probes every `seed_probe_stride`-th frame (plus the last one), then scans
/// linearly from just after the last negative probe to the first positive.
pub fn select_seed_frame(
    seq: &FrameSequence,
    backend: &dyn ProposalBackend,
    cfg: &PipelineConfig,
) -> Result<usize, SeedError> {
    let n = seq.len();
    if let Some(index) = cfg.seed_frame_override {
        if index >= n {
            return Err(SeedError::SeedFrameOutOfRange { index, frame_count: n });
        }
        return Ok(index);
    }
    let retry = proposal::RetryPolicy::from_config(&cfg.backend);
    let mut probes: Vec<usize> = (0..n).step_by(cfg.seed_probe_stride).collect();
    if probes.last() != Some(&(n - 1)) {
        probes.push(n - 1);
    }
    let mut last_negative: Option<usize> = None;
    for &p in &probes {
        if proposal::query_hand_presence(backend, &seq.original(p)?, &retry)? {
            let start = last_negative.map_or(0, |t| t + 1);
            for t in start..p {
                if proposal::query_hand_presence(backend, &seq.original(t)?, &retry)? {
                    return Ok(t);
                }
            }
            return Ok(p);
        }
        last_negative = Some(p);
    }
    Err(SeedError::NoHandFrameFound { frames: n })
}
