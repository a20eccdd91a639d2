//! Point tracking through a frame sequence.
//!
//! Frames are processed in fixed-length temporal windows (stride 1). Inside a
//! window, points are chained frame to frame; the last position of one window
//! is the entry position of the next. A point whose step fails (no
//! convergence, weak texture, residual too high, window leaving the frame) is
//! frozen at its last good position and stays invisible for the rest of the
//! run.

pub mod external;
pub mod lk;
pub mod pyramid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PipelineConfig, TrackerParams};
use crate::frame_io::{Frame, FrameSequence};
use crate::proposal::{Category, ProposalResult};
use crate::Point;

pub use lk::{in_margin, track_point_step, LkTracker};
pub use pyramid::{build_pyramid, Pyramid};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("frame {width}x{height} too small for a pyramid (need 8x8)")]
    FrameTooSmall { width: usize, height: usize },
    #[error("seed frame {index} out of range for {frame_count} frames")]
    SeedFrameOutOfRange { index: usize, frame_count: usize },
    #[error("window of {len} frames exceeds window size {window_size}")]
    WindowTooLong { len: usize, window_size: usize },
    #[error("{entries} entry points for {expected} tracks")]
    EntryMismatch { entries: usize, expected: usize },
    #[error("external tracker: {0}")]
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Tracked,
    Seed,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Result of moving one point between two frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pos: Point,
    /// Mean absolute intensity difference over the matching window.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_index: usize,
    pub pos: Point,
    pub visible: bool,
    pub confidence: f64,
    pub residual: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub label: String,
    pub category: Category,
    pub seed_frame: usize,
    /// One point per frame, in frame order.
    pub points: Vec<TrackPoint>,
    pub dropped: bool,
    pub drop_reason: Option<String>,
}

impl Track {
    pub fn visible_count(&self) -> usize {
        self.points.iter().filter(|p| p.visible).count()
    }

    /// Checks frame coverage and, when `seed_pos` is given, seed exactness.
    pub fn check_invariants(&self, frame_count: usize, seed_pos: Option<Point>) -> Result<(), String> {
        if self.points.len() != frame_count {
            return Err(format!("track {:?} has {} points for {frame_count} frames", self.label, self.points.len()));
        }
        if let Some(i) = self.points.iter().enumerate().position(|(i, p)| p.frame_index != i) {
            return Err(format!("track {:?}: point {i} has frame_index {}", self.label, self.points[i].frame_index));
        }
        if self.seed_frame >= frame_count {
            return Err(format!("track {:?}: seed frame {} out of range", self.label, self.seed_frame));
        }
        let seed = &self.points[self.seed_frame];
        if seed.source != Source::Seed {
            return Err(format!("track {:?}: seed frame point is {:?}", self.label, seed.source));
        }
        if let Some(i) = self.points.iter().position(|p| p.source == Source::Seed && p.frame_index != self.seed_frame) {
            return Err(format!("track {:?}: seed source at non-seed frame {i}", self.label));
        }
        if let Some(expected) = seed_pos {
            if seed.pos != expected {
                return Err(format!("track {:?}: seed position {:?} != proposal {:?}", self.label, seed.pos, expected));
            }
        }
        for p in &self.points {
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(format!("track {:?}: confidence {} at frame {}", self.label, p.confidence, p.frame_index));
            }
            if !p.pos.x.is_finite() || !p.pos.y.is_finite() || !p.residual.is_finite() {
                return Err(format!("track {:?}: non-finite value at frame {}", self.label, p.frame_index));
            }
        }
        Ok(())
    }
}

/// A tracking backend. `begin_window` receives the frames of one temporal
/// window in traversal order and may precompute per-frame data.
pub trait PointTracker: Sync {
    fn begin_window<'a>(&'a self, frames: &[&'a Frame]) -> Result<Box<dyn TrackerWindow + 'a>, TrackError>;
}

pub trait TrackerWindow: Sync {
    /// Moves `points` from window frame `from` to window frame `to`.
    fn step(&self, from: usize, to: usize, points: &[Point]) -> Result<Vec<StepOutcome>, TrackError>;
}

/// Where and how a point enters a directed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    /// Position in the traversal order at which the point appears.
    pub step: usize,
    pub pos: Point,
    /// Confidence at entry; tracked confidences are scaled from it.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy)]
enum PointState {
    Pending,
    Active { pos: Point },
    Lost { pos: Point, residual: f64 },
}

/// Visibility and confidence rules applied to every tracker's step output.
#[derive(Debug, Clone, Copy)]
pub struct VisibilityRule {
    pub margin: usize,
    pub max_residual: f64,
}

impl VisibilityRule {
    pub fn from_params(p: &TrackerParams) -> Self {
        Self { margin: p.win_radius, max_residual: p.max_residual }
    }

    pub fn accepts(&self, o: &StepOutcome, w: usize, h: usize) -> bool {
        o.converged && o.residual <= self.max_residual && in_margin(o.pos, w, h, self.margin)
    }

    pub fn confidence(&self, base: f64, residual: f64) -> f64 {
        if self.max_residual > 0.0 {
            (base * (1.0 - residual / self.max_residual)).clamp(0.0, 1.0)
        } else {
            base.clamp(0.0, 1.0)
        }
    }
}

/// Half-open spans `[start, end)` of traversal positions, one per window.
pub fn window_spans(len: usize, window_size: usize) -> Vec<(usize, usize)> {
    (0..len).step_by(window_size.max(1)).map(|s| (s, (s + window_size).min(len))).collect()
}

/// Tracks points along `frames` (already in traversal order).
///
/// Returns, per entry, one slot per traversal position: `None` before the
/// point enters, otherwise the point state at that frame. Entries marked
/// `None` never enter.
pub fn run_directed(
    frames: &[&Frame],
    entries: &[Option<Entry>],
    tracker: &dyn PointTracker,
    rule: VisibilityRule,
    window_size: usize,
) -> Result<Vec<Vec<Option<TrackPoint>>>, TrackError> {
    let len = frames.len();
    let (w, h) = match frames.first() {
        Some(f) => (f.width(), f.height()),
        None => return Ok(vec![Vec::new(); entries.len()]),
    };
    let mut out: Vec<Vec<Option<TrackPoint>>> = vec![vec![None; len]; entries.len()];
    let mut state = vec![PointState::Pending; entries.len()];

    for (start, end) in window_spans(len, window_size) {
        let first = start.saturating_sub(1);
        let window = tracker.begin_window(&frames[first..end])?;

        for k in start..end {
            let frame_index = frames[k].index;
            if k > 0 {
                let active: Vec<usize> =
                    (0..entries.len()).filter(|&i| matches!(state[i], PointState::Active { .. })).collect();
                let positions: Vec<Point> = active
                    .iter()
                    .map(|&i| match state[i] {
                        PointState::Active { pos, .. } => pos,
                        _ => unreachable!(),
                    })
                    .collect();
                let outcomes = if positions.is_empty() {
                    Vec::new()
                } else {
                    window.step(k - 1 - first, k - first, &positions)?
                };
                if outcomes.len() != positions.len() {
                    return Err(TrackError::External(format!(
                        "tracker returned {} results for {} points",
                        outcomes.len(),
                        positions.len()
                    )));
                }
                for (&i, o) in active.iter().zip(&outcomes) {
                    let prev_pos = match state[i] {
                        PointState::Active { pos, .. } => pos,
                        _ => unreachable!(),
                    };
                    let base = entries[i].map_or(1.0, |e| e.confidence);
                    if rule.accepts(o, w, h) {
                        state[i] = PointState::Active { pos: o.pos };
                        out[i][k] = Some(TrackPoint {
                            frame_index,
                            pos: o.pos,
                            visible: true,
                            confidence: rule.confidence(base, o.residual),
                            residual: o.residual,
                            source: Source::Tracked,
                        });
                    } else {
                        let residual = if o.residual.is_finite() { o.residual } else { 0.0 };
                        state[i] = PointState::Lost { pos: prev_pos, residual };
                    }
                }
                for i in 0..entries.len() {
                    if let PointState::Lost { pos, residual } = state[i] {
                        out[i][k] = Some(TrackPoint {
                            frame_index,
                            pos,
                            visible: false,
                            confidence: 0.0,
                            residual,
                            source: Source::Tracked,
                        });
                    }
                }
            }
            for (i, e) in entries.iter().enumerate() {
                let Some(e) = e else { continue };
                if e.step != k || !matches!(state[i], PointState::Pending) {
                    continue;
                }
                let visible = in_margin(e.pos, w, h, rule.margin);
                state[i] = if visible {
                    PointState::Active { pos: e.pos }
                } else {
                    PointState::Lost { pos: e.pos, residual: 0.0 }
                };
                out[i][k] = Some(TrackPoint {
                    frame_index,
                    pos: e.pos,
                    visible,
                    confidence: if visible { e.confidence.clamp(0.0, 1.0) } else { 0.0 },
                    residual: 0.0,
                    source: Source::Seed,
                });
            }
        }
    }
    Ok(out)
}

/// Tracks `entry` positions (on the first frame of the traversal) through one
/// window of at most `cfg.window_size` frames. `frames` are in sequence
/// order; `Direction::Backward` walks them from last to first. Results are
/// returned per point in sequence order; the entry frame is marked as seed.
pub fn track_window(
    frames: &[&Frame],
    entry: &[Point],
    direction: Direction,
    tracker: &dyn PointTracker,
    cfg: &PipelineConfig,
) -> Result<Vec<Vec<TrackPoint>>, TrackError> {
    if frames.len() > cfg.window_size {
        return Err(TrackError::WindowTooLong { len: frames.len(), window_size: cfg.window_size });
    }
    let mut ordered: Vec<&Frame> = frames.to_vec();
    if direction == Direction::Backward {
        ordered.reverse();
    }
    let entries: Vec<Option<Entry>> = entry.iter().map(|&pos| Some(Entry { step: 0, pos, confidence: 1.0 })).collect();
    let rule = VisibilityRule::from_params(&cfg.tracker);
    let runs = run_directed(&ordered, &entries, tracker, rule, cfg.window_size)?;
    Ok(runs
        .into_iter()
        .map(|slots| {
            let mut pts: Vec<TrackPoint> = slots.into_iter().map(|s| s.expect("entered at step 0")).collect();
            if direction == Direction::Backward {
                pts.reverse();
            }
            pts
        })
        .collect())
}

/// Frame indices visited when tracking from `seed` in `direction`.
pub fn traversal(frame_count: usize, seed: usize, direction: Direction) -> Vec<usize> {
    match direction {
        Direction::Forward => (seed..frame_count).collect(),
        Direction::Backward => (0..=seed).rev().collect(),
    }
}

fn placeholder(frame_index: usize, pos: Point) -> TrackPoint {
    TrackPoint { frame_index, pos, visible: false, confidence: 0.0, residual: 0.0, source: Source::Tracked }
}

/// Runs one directed pass per keypoint from the proposal's seed frame.
/// Frames on the other side of the seed are present but invisible.
pub fn track_sequence(
    seq: &FrameSequence,
    proposal: &ProposalResult,
    direction: Direction,
    tracker: &dyn PointTracker,
    cfg: &PipelineConfig,
) -> Result<Vec<Track>, TrackError> {
    let n = seq.len();
    let seed = proposal.frame_index;
    if seed >= n {
        return Err(TrackError::SeedFrameOutOfRange { index: seed, frame_count: n });
    }
    let order = traversal(n, seed, direction);
    let frames: Vec<&Frame> = order.iter().map(|&i| seq.frame(i)).collect();
    let entries: Vec<Option<Entry>> =
        proposal.keypoints.iter().map(|k| Some(Entry { step: 0, pos: k.pos, confidence: k.confidence })).collect();
    let runs = run_directed(&frames, &entries, tracker, VisibilityRule::from_params(&cfg.tracker), cfg.window_size)?;

    Ok(proposal
        .keypoints
        .iter()
        .zip(runs)
        .map(|(k, slots)| {
            let mut points: Vec<TrackPoint> = (0..n).map(|i| placeholder(i, k.pos)).collect();
            for (&frame, slot) in order.iter().zip(slots) {
                points[frame] = slot.expect("entered at step 0");
            }
            Track {
                label: k.label.clone(),
                category: k.category,
                seed_frame: seed,
                points,
                dropped: false,
                drop_reason: None,
            }
        })
        .collect())
}

/// Forward and backward runs from the seed, merged into full-coverage tracks.
pub fn track_both_directions(
    seq: &FrameSequence,
    proposal: &ProposalResult,
    tracker: &dyn PointTracker,
    cfg: &PipelineConfig,
) -> Result<Vec<Track>, TrackError> {
    let fwd = track_sequence(seq, proposal, Direction::Forward, tracker, cfg)?;
    let bwd = track_sequence(seq, proposal, Direction::Backward, tracker, cfg)?;
    let seed = proposal.frame_index;
    Ok(fwd
        .into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            for (dst, src) in f.points[..seed].iter_mut().zip(b.points) {
                *dst = src;
            }
            f
        })
        .collect())
}
