//! Draws tracks over the frames they came from.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{StoreError, TrajectoryBundle};
use crate::config::PipelineConfig;
use crate::frame_io::codec::{encode_png, encode_ppm, to_bytes};
use crate::frame_io::{Frame, FrameSequence};
use crate::proposal::Category;
use crate::tracker::{Source, Track};
use crate::Point;

pub const PALETTE_HAND: [u8; 3] = [255, 0, 0];
pub const PALETTE_TOOL: [u8; 3] = [0, 0, 255];
pub const PALETTE_OBJECT: [u8; 3] = [0, 255, 0];

const DISC_RADIUS: i64 = 3;
const RING_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Ppm => "ppm",
            ImageFormat::Png => "png",
        }
    }
}

fn color(c: Category) -> [u8; 3] {
    match c {
        Category::Hand => PALETTE_HAND,
        Category::Tool => PALETTE_TOOL,
        Category::Object => PALETTE_OBJECT,
    }
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn from_frame(f: &Frame) -> Self {
        let (w, h) = (f.width(), f.height());
        let planes: Vec<Vec<u8>> = match &f.rgb {
            Some(rgb) => rgb.iter().map(|p| to_bytes(p.data())).collect(),
            None => vec![to_bytes(f.gray.data()); 3],
        };
        let rgb = (0..w * h).flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]]).collect();
        Canvas { w, h, rgb }
    }

    fn blend(&mut self, x: i64, y: i64, c: [u8; 3], alpha: f64) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = 3 * (y as usize * self.w + x as usize);
        for (dst, &src) in self.rgb[i..i + 3].iter_mut().zip(&c) {
            *dst = (*dst as f64 * (1.0 - alpha) + src as f64 * alpha).round() as u8;
        }
    }

    fn line(&mut self, a: Point, b: Point, c: [u8; 3], alpha: f64) {
        let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
        let mut last = None;
        for s in 0..=steps {
            let p = a.lerp(b, s as f64 / steps as f64);
            let px = (p.x.round() as i64, p.y.round() as i64);
            if last != Some(px) {
                self.blend(px.0, px.1, c, alpha);
                last = Some(px);
            }
        }
    }

    fn disc(&mut self, p: Point, c: [u8; 3]) {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for dy in -DISC_RADIUS..=DISC_RADIUS {
            for dx in -DISC_RADIUS..=DISC_RADIUS {
                if dx * dx + dy * dy <= DISC_RADIUS * DISC_RADIUS {
                    self.blend(cx + dx, cy + dy, c, 1.0);
                }
            }
        }
    }

    fn ring(&mut self, p: Point, c: [u8; 3]) {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        let r = RING_RADIUS as i64 + 1;
        for dy in -r..=r {
            for dx in -r..=r {
                let d = ((dx * dx + dy * dy) as f64).sqrt();
                if (d - RING_RADIUS).abs() < 0.5 {
                    self.blend(cx + dx, cy + dy, c, 1.0);
                }
            }
        }
    }
}

fn draw_frame(frame: &Frame, tracks: &[&Track], t: usize, trail_len: usize) -> Canvas {
    let mut canvas = Canvas::from_frame(frame);
    for track in tracks {
        let c = color(track.category);
        let start = t.saturating_sub(trail_len);
        for s in start..t {
            let (a, b) = (&track.points[s], &track.points[s + 1]);
            if a.visible && b.visible {
                let age = (t - s) as f64;
                canvas.line(a.pos, b.pos, c, 1.0 - age / (trail_len + 1) as f64);
            }
        }
    }
    for track in tracks {
        let p = &track.points[t];
        if !p.visible {
            continue;
        }
        if p.source == Source::Interpolated {
            canvas.ring(p.pos, color(track.category));
        } else {
            canvas.disc(p.pos, color(track.category));
        }
    }
    canvas
}

/// Writes one image per frame, named `000000.ppm` (or `.png`) upward, and
/// returns the number written. Dropped tracks are not drawn.
pub fn render_overlay(
    seq: &FrameSequence,
    bundle: &TrajectoryBundle,
    out_dir: &Path,
    cfg: &PipelineConfig,
    format: ImageFormat,
) -> Result<usize, StoreError> {
    let (w, h) = seq.dims();
    if bundle.frame_count != seq.len() || (bundle.width, bundle.height) != (w, h) {
        return Err(StoreError::DimensionMismatch {
            bundle_frames: bundle.frame_count,
            bundle_w: bundle.width,
            bundle_h: bundle.height,
            seq_frames: seq.len(),
            seq_w: w,
            seq_h: h,
        });
    }
    if let Some(t) = bundle.tracks.iter().find(|t| t.points.len() != seq.len()) {
        return Err(StoreError::InvariantViolation(format!("track {:?} has {} points", t.label, t.points.len())));
    }
    fs::create_dir_all(out_dir).map_err(|e| StoreError::io(out_dir, e))?;
    let tracks: Vec<&Track> = bundle.tracks.iter().filter(|t| !t.dropped).collect();

    seq.frames()
        .par_iter()
        .enumerate()
        .map(|(t, frame)| {
            let canvas = draw_frame(frame, &tracks, t, cfg.trail_len);
            let bytes = match format {
                ImageFormat::Ppm => encode_ppm(canvas.w, canvas.h, &canvas.rgb),
                ImageFormat::Png => {
                    encode_png(canvas.w, canvas.h, 3, &canvas.rgb).map_err(|e| StoreError::io(out_dir, e))?
                }
            };
            let path = out_dir.join(format!("{t:06}.{}", format.extension()));
            fs::write(&path, bytes).map_err(|e| StoreError::io(&path, e))
        })
        .collect::<Result<Vec<()>, _>>()?;
    Ok(seq.len())
}
