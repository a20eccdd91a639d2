//! Coarse-to-fine iterative least-squares point alignment (Lucas-Kanade,
//! forward additive with a fixed template-side structure tensor per level).

use rayon::prelude::*;

use super::pyramid::{build_pyramid, Pyramid};
use super::{PointTracker, StepOutcome, TrackError, TrackerWindow};
use crate::config::TrackerParams;
use crate::frame_io::Frame;
use crate::raster::Plane;
use crate::Point;

/// `true` when a window of radius `r` centered on `p` fits inside a `w x h` frame.
#[inline]
pub fn in_margin(p: Point, w: usize, h: usize, r: usize) -> bool {
    let r = r as f64;
    p.x >= r && p.y >= r && p.x <= (w - 1) as f64 - r && p.y <= (h - 1) as f64 - r
}

/// Template samples and central-difference gradients around one point.
struct Patch {
    values: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    gxx: f64,
    gxy: f64,
    gyy: f64,
}

fn window_offsets(r: usize) -> impl Iterator<Item = (f64, f64)> + Clone {
    let r = r as i64;
    (-r..=r).flat_map(move |j| (-r..=r).map(move |i| (i as f64, j as f64)))
}

impl Patch {
    fn extract(img: &Plane, c: Point, r: usize) -> Self {
        let n = (2 * r + 1) * (2 * r + 1);
        let mut p = Patch {
            values: Vec::with_capacity(n),
            gx: Vec::with_capacity(n),
            gy: Vec::with_capacity(n),
            gxx: 0.0,
            gxy: 0.0,
            gyy: 0.0,
        };
        for (i, j) in window_offsets(r) {
            let (x, y) = (c.x + i, c.y + j);
            let gx = (img.sample(x + 1.0, y) - img.sample(x - 1.0, y)) * 0.5;
            let gy = (img.sample(x, y + 1.0) - img.sample(x, y - 1.0)) * 0.5;
            p.values.push(img.sample(x, y));
            p.gx.push(gx);
            p.gy.push(gy);
            p.gxx += gx * gx;
            p.gxy += gx * gy;
            p.gyy += gy * gy;
        }
        p
    }

    fn len(&self) -> f64 {
        self.values.len() as f64
    }

    /// Smallest eigenvalue of the window-averaged structure tensor.
    fn min_eig(&self) -> f64 {
        let n = self.len();
        let (a, b, c) = (self.gxx / n, self.gxy / n, self.gyy / n);
        let half_trace = 0.5 * (a + c);
        let spread = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        half_trace - spread
    }

    fn det(&self) -> f64 {
        self.gxx * self.gyy - self.gxy * self.gxy
    }

    /// Solves `G d = sum((T - J) * grad)` for the update `d`, or `None` when
    /// `G` is numerically singular.
    fn solve(&self, next: &Plane, c: Point, r: usize) -> Option<Point> {
        let det = self.det();
        let scale = (self.gxx + self.gyy) * (self.gxx + self.gyy);
        if !(det > 1e-12 * scale) || scale == 0.0 {
            return None;
        }
        let (mut bx, mut by) = (0.0, 0.0);
        for (k, (i, j)) in window_offsets(r).enumerate() {
            let diff = self.values[k] - next.sample(c.x + i, c.y + j);
            bx += diff * self.gx[k];
            by += diff * self.gy[k];
        }
        Some(Point::new((self.gyy * bx - self.gxy * by) / det, (self.gxx * by - self.gxy * bx) / det))
    }

    fn residual(&self, next: &Plane, c: Point, r: usize) -> f64 {
        let sum: f64 = window_offsets(r)
            .enumerate()
            .map(|(k, (i, j))| (self.values[k] - next.sample(c.x + i, c.y + j)).abs())
            .sum();
        sum / self.len()
    }
}

/// Maps a level-0 position to level `l` with pixel-center alignment.
#[inline]
fn to_level(p: Point, l: usize) -> Point {
    let s = (1u64 << l) as f64;
    Point::new((p.x + 0.5) / s - 0.5, (p.y + 0.5) / s - 0.5)
}

/// Moves `pos` from `prev` to `next`.
///
/// The displacement is estimated at the coarsest level first, doubled on the
/// way down and refined at each level with up to `max_iters` Gauss-Newton
/// updates, stopping early once an update is shorter than `epsilon`. At full
/// resolution an update that carries the window outside the frame ends the
/// step, returning the last in-bounds position as not converged.
pub fn track_point_step(prev: &Pyramid, next: &Pyramid, pos: Point, params: &TrackerParams) -> StepOutcome {
    let r = params.win_radius;
    let base = prev.level(0);
    let (w, h) = (base.width(), base.height());
    let levels = params.pyramid_levels.min(prev.len()).min(next.len()).max(1);

    if !in_margin(pos, w, h, r) {
        let patch = Patch::extract(base, pos, r);
        return StepOutcome { pos, residual: patch.residual(next.level(0), pos, r), converged: false };
    }

    let mut disp = Point::new(0.0, 0.0);
    let mut final_update = f64::INFINITY;
    let mut level0_patch = None;

    for l in (0..levels).rev() {
        let p_l = to_level(pos, l);
        let img_prev = prev.level(l);
        let img_next = next.level(l);
        let patch = Patch::extract(img_prev, p_l, r);

        for _ in 0..params.max_iters {
            let current = Point::new(p_l.x + disp.x, p_l.y + disp.y);
            let Some(d) = patch.solve(img_next, current, r) else {
                final_update = f64::INFINITY;
                break;
            };
            let candidate = Point::new(disp.x + d.x, disp.y + d.y);
            if l == 0 && !in_margin(Point::new(pos.x + candidate.x, pos.y + candidate.y), w, h, r) {
                let last = Point::new(pos.x + disp.x, pos.y + disp.y);
                return StepOutcome { pos: last, residual: patch.residual(img_next, last, r), converged: false };
            }
            disp = candidate;
            final_update = d.x.hypot(d.y);
            if final_update < params.epsilon {
                break;
            }
        }

        if l > 0 {
            disp = Point::new(disp.x * 2.0, disp.y * 2.0);
        } else {
            level0_patch = Some(patch);
        }
    }

    let patch = level0_patch.expect("level 0 processed");
    let new_pos = Point::new(pos.x + disp.x, pos.y + disp.y);
    let residual = patch.residual(next.level(0), new_pos, r);
    let converged = final_update < params.epsilon && patch.min_eig() >= params.min_eig && in_margin(new_pos, w, h, r);
    StepOutcome { pos: new_pos, residual, converged }
}

/// The bundled tracker.
#[derive(Debug, Clone)]
pub struct LkTracker {
    pub params: TrackerParams,
}

impl LkTracker {
    pub fn new(params: TrackerParams) -> Self {
        Self { params }
    }
}

struct LkWindow<'a> {
    pyramids: Vec<Pyramid>,
    params: &'a TrackerParams,
}

impl PointTracker for LkTracker {
    fn begin_window<'a>(&'a self, frames: &[&'a Frame]) -> Result<Box<dyn TrackerWindow + 'a>, TrackError> {
        let pyramids =
            frames.par_iter().map(|f| build_pyramid(f, self.params.pyramid_levels)).collect::<Result<Vec<_>, _>>()?;
        Ok(Box::new(LkWindow { pyramids, params: &self.params }))
    }
}

impl TrackerWindow for LkWindow<'_> {
    fn step(&self, from: usize, to: usize, points: &[Point]) -> Result<Vec<StepOutcome>, TrackError> {
        let (prev, next) = (&self.pyramids[from], &self.pyramids[to]);
        Ok(points.par_iter().map(|&p| track_point_step(prev, next, p, self.params)).collect())
    }
}
