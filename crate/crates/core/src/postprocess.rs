//! Gap filling, optional smoothing and wrist retargeting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::tracker::{Source, Track};
use crate::trajstore::TrajectoryBundle;
use crate::Point;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("no track labelled {0:?}")]
    WristTrackMissing(String),
    #[error("track {0:?} was dropped by the consistency filter")]
    WristTrackDropped(String),
    #[error("need at least 2 visible samples, found {found}")]
    TooFewVisibleSamples { found: usize },
    #[error("sample count must be at least 2, got {0}")]
    InvalidSampleCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeSample {
    pub t_norm: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorTrajectory {
    pub source_label: String,
    pub length: usize,
    pub samples: Vec<EeSample>,
}

impl EndEffectorTrajectory {
    pub fn new(source_label: impl Into<String>, samples: Vec<EeSample>) -> Self {
        Self { source_label: source_label.into(), length: samples.len(), samples }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.length != self.samples.len() {
            return Err(format!("length {} but {} samples", self.length, self.samples.len()));
        }
        if let (Some(first), Some(last)) = (self.samples.first(), self.samples.last()) {
            if first.t_norm != 0.0 || last.t_norm != 1.0 {
                return Err("t_norm must run from 0 to 1".into());
            }
        }
        if self.samples.windows(2).any(|w| !(w[0].t_norm < w[1].t_norm)) {
            return Err("t_norm not strictly increasing".into());
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if let Some(i) = self.samples.iter().position(|s| !unit(s.x_norm) || !unit(s.y_norm)) {
            return Err(format!("sample {i} outside the unit square"));
        }
        Ok(())
    }

    fn pos(&self, i: usize) -> Point {
        Point::new(self.samples[i].x_norm, self.samples[i].y_norm)
    }
}

/// Fills invisible runs of at most `max_gap` frames that have a visible frame
/// on both sides by linear interpolation. Nothing else changes.
pub fn interpolate_gaps(track: &Track, max_gap: usize) -> Track {
    let mut out = track.clone();
    let pts = &track.points;
    let mut i = 0;
    while i < pts.len() {
        if pts[i].visible {
            i += 1;
            continue;
        }
        let start = i;
        while i < pts.len() && !pts[i].visible {
            i += 1;
        }
        let end = i; // exclusive
        if start == 0 || end == pts.len() || end - start > max_gap {
            continue;
        }
        let (a, b) = (&pts[start - 1], &pts[end]);
        let span = (end - start + 1) as f64;
        for (k, p) in out.points[start..end].iter_mut().enumerate() {
            let w = (k + 1) as f64 / span;
            p.pos = a.pos.lerp(b.pos, w);
            p.visible = true;
            p.source = Source::Interpolated;
            p.confidence = a.confidence.min(b.confidence);
            p.residual = a.residual.max(b.residual);
        }
    }
    out
}

/// Centered moving average over visible points, truncated at visibility
/// boundaries. The seed point keeps the proposed position.
pub fn smooth_track(track: &Track, radius: usize) -> Track {
    let mut out = track.clone();
    if radius == 0 {
        return out;
    }
    let pts = &track.points;
    let n = pts.len();
    for t in 0..n {
        if !pts[t].visible || pts[t].source == Source::Seed {
            continue;
        }
        let mut lo = t;
        while lo > 0 && t - lo < radius && pts[lo - 1].visible {
            lo -= 1;
        }
        let mut hi = t;
        while hi + 1 < n && hi - t < radius && pts[hi + 1].visible {
            hi += 1;
        }
        let count = (hi - lo + 1) as f64;
        let (sx, sy) = pts[lo..=hi].iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.pos.x, sy + p.pos.y));
        out.points[t].pos = Point::new(sx / count, sy / count);
    }
    out
}

fn normalize(v: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        (v / (extent - 1) as f64).clamp(0.0, 1.0)
    }
}

/// Maps the wrist track to normalized image coordinates over the span from
/// its first to its last visible frame.
pub fn retarget_wrist(
    bundle: &TrajectoryBundle,
    cfg: &PipelineConfig,
) -> Result<EndEffectorTrajectory, PostprocessError> {
    let label = &cfg.wrist_label;
    let track = bundle
        .tracks
        .iter()
        .find(|t| &t.label == label)
        .ok_or_else(|| PostprocessError::WristTrackMissing(label.clone()))?;
    if track.dropped {
        return Err(PostprocessError::WristTrackDropped(label.clone()));
    }
    let visible: Vec<usize> = track.points.iter().filter(|p| p.visible).map(|p| p.frame_index).collect();
    let (Some(&first), Some(&last)) = (visible.first(), visible.last()) else {
        return Err(PostprocessError::TooFewVisibleSamples { found: 0 });
    };
    if visible.len() < 2 {
        return Err(PostprocessError::TooFewVisibleSamples { found: visible.len() });
    }
    let span = (last - first) as f64;
    let samples = track.points[first..=last]
        .iter()
        .map(|p| EeSample {
            t_norm: (p.frame_index - first) as f64 / span,
            x_norm: normalize(p.pos.x, bundle.width),
            y_norm: normalize(p.pos.y, bundle.height),
            visible: p.visible,
        })
        .collect();
    Ok(EndEffectorTrajectory::new(label.clone(), samples))
}

/// Nearest visible sample to `u` among those bounding the invisible span
/// around segment `[i, i + 1]`.
fn nearest_boundary(traj: &EndEffectorTrajectory, i: usize, u: f64) -> usize {
    let s = &traj.samples;
    let left = (0..=i).rev().find(|&j| s[j].visible);
    let right = (i..s.len()).find(|&j| s[j].visible);
    match (left, right) {
        (Some(l), Some(r)) => {
            if (u - s[l].t_norm).abs() <= (s[r].t_norm - u).abs() {
                l
            } else {
                r
            }
        }
        (Some(l), None) => l,
        (None, Some(r)) => r,
        (None, None) => unreachable!("caller checked for visible samples"),
    }
}

/// Resamples to `n` samples at uniform `t_norm = k / (n - 1)`.
pub fn resample_uniform(traj: &EndEffectorTrajectory, n: usize) -> Result<EndEffectorTrajectory, PostprocessError> {
    if n < 2 {
        return Err(PostprocessError::InvalidSampleCount(n));
    }
    let found = traj.samples.iter().filter(|s| s.visible).count();
    if found < 2 {
        return Err(PostprocessError::TooFewVisibleSamples { found });
    }
    let s = &traj.samples;
    let mut seg = 0;
    let samples = (0..n)
        .map(|k| {
            let u = k as f64 / (n - 1) as f64;
            while seg + 2 < s.len() && s[seg + 1].t_norm <= u {
                seg += 1;
            }
            let exact = if s[seg].t_norm == u {
                Some(seg)
            } else if s[seg + 1].t_norm == u {
                Some(seg + 1)
            } else {
                None
            };
            let (pos, visible) = match exact {
                Some(j) if s[j].visible => (traj.pos(j), true),
                Some(j) => (traj.pos(nearest_boundary(traj, j, u)), false),
                None if s[seg].visible && s[seg + 1].visible => {
                    let w = (u - s[seg].t_norm) / (s[seg + 1].t_norm - s[seg].t_norm);
                    (traj.pos(seg).lerp(traj.pos(seg + 1), w), true)
                }
                None => {
                    let j = if s[seg].visible { seg + 1 } else { seg };
                    (traj.pos(nearest_boundary(traj, j, u)), false)
                }
            };
            EeSample { t_norm: u, x_norm: pos.x.clamp(0.0, 1.0), y_norm: pos.y.clamp(0.0, 1.0), visible }
        })
        .collect();
    Ok(EndEffectorTrajectory::new(traj.source_label.clone(), samples))
}
