//! Shared helpers: deterministic synthetic scenes and small fixtures.
//!
//! Scene generators use only IEEE-exact arithmetic (no libm calls) so that
//! frames, and therefore golden outputs, are bit-identical on every platform.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use trajex::frame_io::codec::encode_ppm;
use trajex::frame_io::FrameSequence;
use trajex::proposal::{Category, Keypoint, ProposalResult};
use trajex::raster::Plane;
use trajex::Point;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1000_0000_01B3) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise in `[0.1, 0.9]`.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    seed: u64,
    cells: Vec<f64>,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed, cells: vec![10.0, 5.0] }
    }

    pub fn with_cells(seed: u64, cells: &[f64]) -> Self {
        Self { seed, cells: cells.to_vec() }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for (o, &cell) in self.cells.iter().enumerate() {
            let (u, v) = (x / cell, y / cell);
            let (fx, fy) = (u.floor(), v.floor());
            let (ix, iy) = (fx as i64, fy as i64);
            let (tx, ty) = (fade(u - fx), fade(v - fy));
            let s = self.seed.wrapping_add(o as u64 * 7919);
            let a = lattice(s, ix, iy);
            let b = lattice(s, ix + 1, iy);
            let c = lattice(s, ix, iy + 1);
            let d = lattice(s, ix + 1, iy + 1);
            let top = a + (b - a) * tx;
            let bottom = c + (d - c) * tx;
            sum += amp * (top + (bottom - top) * ty);
            norm += amp;
            amp *= 0.6;
        }
        0.1 + 0.8 * sum / norm
    }
}

/// Deterministic xorshift stream for test parameters.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(splitmix(seed) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = splitmix(self.0);
        self.0
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn int(&mut self, lo: i64, hi_inclusive: i64) -> i64 {
        lo + (self.next_u64() % (hi_inclusive - lo + 1) as u64) as i64
    }
}

/// `n` frames of `noise` translated by `t * (vx, vy)`.
pub fn translating_sequence(noise: &ValueNoise, n: usize, size: usize, vx: f64, vy: f64) -> FrameSequence {
    let planes = (0..n)
        .map(|t| {
            let (dx, dy) = (vx * t as f64, vy * t as f64);
            Plane::from_fn(size, size, |x, y| noise.at(x as f64 - dx, y as f64 - dy) as f32)
        })
        .collect();
    FrameSequence::from_planes(planes, "synthetic").unwrap()
}

/// Frames following an arbitrary per-frame offset.
pub fn offset_sequence(noise: &ValueNoise, size: usize, offsets: &[(f64, f64)]) -> FrameSequence {
    let planes = offsets
        .iter()
        .map(|&(dx, dy)| Plane::from_fn(size, size, |x, y| noise.at(x as f64 - dx, y as f64 - dy) as f32))
        .collect();
    FrameSequence::from_planes(planes, "synthetic").unwrap()
}

pub fn proposal_at(seed_frame: usize, points: &[Point]) -> ProposalResult {
    ProposalResult {
        frame_index: seed_frame,
        keypoints: points
            .iter()
            .enumerate()
            .map(|(i, &pos)| Keypoint {
                label: if i == 0 { "wrist".into() } else { format!("p{i:02}") },
                category: if i == 0 { Category::Hand } else { Category::Object },
                pos,
                confidence: 1.0,
            })
            .collect(),
        model_id: "synthetic".into(),
        raw_response: String::new(),
        prompt_id: "grasp_v1".into(),
    }
}

// Golden scene: 80 RGB frames of 320x240 with a textured disc ("hand") that
// appears on frame 6 and moves diagonally, a textured bar ("tool") sliding
// right at 2 px/frame until it leaves the frame, over a static textured
// background ("object").

pub const SCENE_FRAMES: usize = 80;
pub const SCENE_W: usize = 320;
pub const SCENE_H: usize = 240;
pub const HAND_FIRST_FRAME: usize = 6;
pub const HAND_RADIUS: f64 = 30.0;

pub fn hand_center(t: usize) -> (f64, f64) {
    (90.0 + 1.25 * t as f64, 160.0 - 0.75 * t as f64)
}

pub fn tool_origin(t: usize) -> (f64, f64) {
    (170.0 + 2.0 * t as f64, 40.0)
}

pub const TOOL_SIZE: (f64, f64) = (60.0, 30.0);

fn scene_pixel(t: usize, x: f64, y: f64, bg: &ValueNoise, hand: &ValueNoise, tool: &ValueNoise) -> [f64; 3] {
    let (tx, ty) = tool_origin(t);
    if x >= tx && x < tx + TOOL_SIZE.0 && y >= ty && y < ty + TOOL_SIZE.1 {
        let v = tool.at(x - tx, y - ty);
        return [0.6 * v, 0.7 * v, 0.3 + 0.7 * v];
    }
    if t >= HAND_FIRST_FRAME {
        let (cx, cy) = hand_center(t);
        let (dx, dy) = (x - cx, y - cy);
        if dx * dx + dy * dy <= HAND_RADIUS * HAND_RADIUS {
            let v = hand.at(dx + 100.0, dy + 100.0);
            return [0.1 + 0.9 * v, 0.05 + 0.8 * v, 0.6 * v];
        }
    }
    let v = bg.at(x, y);
    [v, 0.9 * v, 0.8 * v]
}

pub fn scene_frame_rgb(t: usize) -> Vec<u8> {
    let bg = ValueNoise::new(11);
    let hand = ValueNoise::with_cells(23, &[10.0, 5.0]);
    let tool = ValueNoise::with_cells(37, &[8.0, 4.0]);
    let mut out = Vec::with_capacity(SCENE_W * SCENE_H * 3);
    for y in 0..SCENE_H {
        for x in 0..SCENE_W {
            let px = scene_pixel(t, x as f64, y as f64, &bg, &hand, &tool);
            out.extend(px.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8));
        }
    }
    out
}

/// Writes the golden scene as `0000.ppm ..` into `dir`.
pub fn write_scene(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for t in 0..SCENE_FRAMES {
        fs::write(dir.join(format!("{t:04}.ppm")), encode_ppm(SCENE_W, SCENE_H, &scene_frame_rgb(t))).unwrap();
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trajex")
}

/// Scene frames in a directory named `clip01`, generated once per call site.
pub fn scene_dir(root: &Path) -> PathBuf {
    let dir = root.join("clip01");
    write_scene(&dir);
    dir
}
