//! Forward-backward cycle consistency.
//!
//! The forward pass tracks every keypoint from the seed frame to both ends of
//! the sequence. The backward pass re-seeds each point where its forward track
//! was last visible and tracks it back toward the seed frame. Frames where the
//! two passes disagree by more than `fb_threshold` pixels are hidden; tracks
//! with too few consistent frames are marked dropped but kept for audit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::frame_io::{Frame, FrameSequence};
use crate::proposal::ProposalResult;
use crate::tracker::{
    run_directed, track_both_directions, Entry, PointTracker, Source, Track, TrackError, TrackPoint, VisibilityRule,
};

pub const DROP_REASON_FB: &str = "fb_consistency";

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("cannot compare frame {fwd} with frame {bwd}")]
    FrameMismatch { fwd: usize, bwd: usize },
    #[error("forward and backward track sets differ: {0}")]
    TrackSetMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackCycle {
    pub label: String,
    /// Per frame; `None` where either pass is invisible (infinite error).
    pub fb_errors: Vec<Option<f64>>,
    pub reliable: Vec<bool>,
    pub reliable_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub fb_threshold: f64,
    pub tracks: Vec<TrackCycle>,
}

/// Euclidean distance between the two estimates; infinite when either is invisible.
pub fn cycle_error(fwd: &TrackPoint, bwd: &TrackPoint) -> Result<f64, FilterError> {
    if fwd.frame_index != bwd.frame_index {
        return Err(FilterError::FrameMismatch { fwd: fwd.frame_index, bwd: bwd.frame_index });
    }
    if !fwd.visible || !bwd.visible {
        return Ok(f64::INFINITY);
    }
    Ok(fwd.pos.distance(bwd.pos))
}

/// Runs the forward pass (seed to both ends) and the backward pass (each
/// terminal back to the seed).
pub fn track_bidirectional(
    seq: &FrameSequence,
    proposal: &ProposalResult,
    tracker: &dyn PointTracker,
    cfg: &PipelineConfig,
) -> Result<(Vec<Track>, Vec<Track>), TrackError> {
    let fwd = track_both_directions(seq, proposal, tracker, cfg)?;
    let bwd = backward_pass(seq, &fwd, tracker, cfg)?;
    Ok((fwd, bwd))
}

fn backward_pass(
    seq: &FrameSequence,
    fwd: &[Track],
    tracker: &dyn PointTracker,
    cfg: &PipelineConfig,
) -> Result<Vec<Track>, TrackError> {
    let n = seq.len();
    let rule = VisibilityRule::from_params(&cfg.tracker);
    let Some(seed) = fwd.first().map(|t| t.seed_frame) else {
        return Ok(Vec::new());
    };

    // terminal frames: last visible after the seed, first visible before it
    let last_visible: Vec<Option<usize>> = fwd.iter().map(|t| (seed..n).rev().find(|&i| t.points[i].visible)).collect();
    let first_visible: Vec<Option<usize>> = fwd.iter().map(|t| (0..=seed).find(|&i| t.points[i].visible)).collect();

    // after the seed: walk from the farthest terminal down to the seed
    let far_end = last_visible.iter().flatten().copied().max().unwrap_or(seed);
    let order_after: Vec<usize> = (seed..=far_end).rev().collect();
    let entries_after: Vec<Option<Entry>> = fwd
        .iter()
        .zip(&last_visible)
        .map(|(t, e)| e.map(|e| Entry { step: far_end - e, pos: t.points[e].pos, confidence: t.points[e].confidence }))
        .collect();
    let frames_after: Vec<&Frame> = order_after.iter().map(|&i| seq.frame(i)).collect();
    let runs_after = run_directed(&frames_after, &entries_after, tracker, rule, cfg.window_size)?;

    // before the seed: walk from the earliest terminal up to the seed
    let near_end = first_visible.iter().flatten().copied().min().unwrap_or(seed);
    let order_before: Vec<usize> = (near_end..=seed).collect();
    let entries_before: Vec<Option<Entry>> = fwd
        .iter()
        .zip(&first_visible)
        .map(|(t, s)| s.map(|s| Entry { step: s - near_end, pos: t.points[s].pos, confidence: t.points[s].confidence }))
        .collect();
    let frames_before: Vec<&Frame> = order_before.iter().map(|&i| seq.frame(i)).collect();
    let runs_before = run_directed(&frames_before, &entries_before, tracker, rule, cfg.window_size)?;

    Ok(fwd
        .iter()
        .zip(runs_after)
        .zip(runs_before)
        .zip(&last_visible)
        .map(|(((f, after), before), terminal)| {
            let mut points: Vec<TrackPoint> = f
                .points
                .iter()
                .map(|p| TrackPoint {
                    visible: false,
                    confidence: 0.0,
                    residual: 0.0,
                    source: Source::Tracked,
                    ..p.clone()
                })
                .collect();
            for (&frame, slot) in order_before.iter().zip(before) {
                if let Some(p) = slot {
                    points[frame] = p;
                }
            }
            // the seed frame takes the post-seed estimate unless that pass started there
            let after_is_trivial = *terminal == Some(seed);
            for (&frame, slot) in order_after.iter().zip(after) {
                if frame == seed && after_is_trivial {
                    continue;
                }
                if let Some(p) = slot {
                    points[frame] = p;
                }
            }
            Track { points, dropped: false, drop_reason: None, ..f.clone() }
        })
        .collect())
}

fn check_pair(f: &Track, b: &Track) -> Result<(), FilterError> {
    if f.label != b.label {
        return Err(FilterError::TrackSetMismatch(format!("label {:?} vs {:?}", f.label, b.label)));
    }
    if f.points.len() != b.points.len() {
        return Err(FilterError::TrackSetMismatch(format!(
            "track {:?}: {} vs {} frames",
            f.label,
            f.points.len(),
            b.points.len()
        )));
    }
    Ok(())
}

/// Hides forward-track frames that fail the cycle check and drops tracks
/// whose reliable fraction falls below `min_reliable_fraction`.
///
/// Only `visible`, `dropped` and `drop_reason` change. The seed frame keeps
/// its visibility since it is the proposal itself.
pub fn filter_tracks(
    fwd: &[Track],
    bwd: &[Track],
    cfg: &PipelineConfig,
) -> Result<(Vec<Track>, CycleReport), FilterError> {
    if fwd.len() != bwd.len() {
        return Err(FilterError::TrackSetMismatch(format!("{} vs {} tracks", fwd.len(), bwd.len())));
    }
    let mut out = Vec::with_capacity(fwd.len());
    let mut report = CycleReport { fb_threshold: cfg.fb_threshold, tracks: Vec::with_capacity(fwd.len()) };

    for (f, b) in fwd.iter().zip(bwd) {
        check_pair(f, b)?;
        let errors = f.points.iter().zip(&b.points).map(|(p, q)| cycle_error(p, q)).collect::<Result<Vec<f64>, _>>()?;
        let reliable: Vec<bool> = errors.iter().map(|&e| e <= cfg.fb_threshold).collect();
        let claimed = f.points.iter().filter(|p| p.visible).count();
        let confirmed = f.points.iter().zip(&reliable).filter(|(p, &r)| p.visible && r).count();
        let fraction = if claimed == 0 { 0.0 } else { confirmed as f64 / claimed as f64 };

        let mut track = f.clone();
        for (p, &r) in track.points.iter_mut().zip(&reliable) {
            if p.visible && !r && p.frame_index != track.seed_frame {
                p.visible = false;
            }
        }
        if fraction < cfg.min_reliable_fraction {
            track.dropped = true;
            track.drop_reason = Some(DROP_REASON_FB.into());
        }
        report.tracks.push(TrackCycle {
            label: f.label.clone(),
            fb_errors: errors.iter().map(|&e| e.is_finite().then_some(e)).collect(),
            reliable,
            reliable_fraction: fraction,
        });
        out.push(track);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposal::Category;
    use crate::Point;
    use proptest::prelude::*;

    fn pt(frame: usize, x: f64, y: f64, visible: bool) -> TrackPoint {
        TrackPoint {
            frame_index: frame,
            pos: Point::new(x, y),
            visible,
            confidence: 1.0,
            residual: 0.0,
            source: if frame == 0 { Source::Seed } else { Source::Tracked },
        }
    }

    fn track(label: &str, pts: Vec<TrackPoint>) -> Track {
        Track {
            label: label.into(),
            category: Category::Hand,
            seed_frame: 0,
            points: pts,
            dropped: false,
            drop_reason: None,
        }
    }

    /// Forward track at x = 50 with backward offsets `errs` along x.
    fn pair(errs: &[f64]) -> (Track, Track) {
        let f = track("a", errs.iter().enumerate().map(|(i, _)| pt(i, 50.0, 50.0, true)).collect());
        let b = track("a", errs.iter().enumerate().map(|(i, &e)| pt(i, 50.0 + e, 50.0, true)).collect());
        (f, b)
    }

    #[test]
    fn cycle_error_cases() {
        assert!((cycle_error(&pt(1, 10.0, 10.0, true), &pt(1, 10.6, 10.8, true)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cycle_error(&pt(1, 3.0, 4.0, true), &pt(1, 3.0, 4.0, true)).unwrap(), 0.0);
        assert_eq!(cycle_error(&pt(1, 3.0, 4.0, true), &pt(1, 3.0, 4.0, false)).unwrap(), f64::INFINITY);
        assert_eq!(
            cycle_error(&pt(1, 0.0, 0.0, true), &pt(2, 0.0, 0.0, true)).unwrap_err(),
            FilterError::FrameMismatch { fwd: 1, bwd: 2 }
        );
    }

    #[test]
    fn threshold_hides_middle_frame() {
        // seed at frame 3 so that no frame is exempt
        let (mut f, mut b) = pair(&[0.2, 1.5, 0.3]);
        for t in [&mut f, &mut b] {
            t.seed_frame = 3;
            for p in &mut t.points {
                p.source = Source::Tracked;
            }
        }
        let cfg = PipelineConfig { fb_threshold: 1.0, ..PipelineConfig::default() };
        let (out, report) = filter_tracks(&[f], &[b], &cfg).unwrap();
        let vis: Vec<bool> = out[0].points.iter().map(|p| p.visible).collect();
        assert_eq!(vis, vec![true, false, true]);
        assert!(!out[0].dropped);
        assert!((report.tracks[0].reliable_fraction - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_bad_drops_track() {
        let (f, b) = pair(&[0.0, 5.0, 6.0, 7.0]);
        let (out, report) = filter_tracks(&[f], &[b], &PipelineConfig::default()).unwrap();
        assert!(out[0].dropped);
        assert_eq!(out[0].drop_reason.as_deref(), Some(DROP_REASON_FB));
        assert_eq!(report.tracks[0].reliable_fraction, 0.25);
        assert!(out[0].points[0].visible, "seed frame stays visible");
    }

    #[test]
    fn invisible_backward_is_unreliable() {
        let (f, mut b) = pair(&[0.0, 0.0, 0.0]);
        b.points[2].visible = false;
        let (out, report) = filter_tracks(&[f], &[b], &PipelineConfig::default()).unwrap();
        assert!(!out[0].points[2].visible);
        assert_eq!(report.tracks[0].fb_errors[2], None);
    }

    #[test]
    fn mismatched_sets() {
        let (f, b) = pair(&[0.0, 0.0]);
        let mut other = b.clone();
        other.label = "z".into();
        assert!(matches!(
            filter_tracks(std::slice::from_ref(&f), &[other], &PipelineConfig::default()),
            Err(FilterError::TrackSetMismatch(_))
        ));
        assert!(matches!(filter_tracks(&[f], &[], &PipelineConfig::default()), Err(FilterError::TrackSetMismatch(_))));
    }

    proptest! {
        #[test]
        fn filter_properties(errs in proptest::collection::vec(0.0..6.0f64, 2..30), t1 in 0.0..6.0f64, t2 in 0.0..6.0f64, min_frac in 0.0..=1.0f64) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let (f, b) = pair(&errs);
            let run = |thr: f64| {
                let cfg = PipelineConfig { fb_threshold: thr, min_reliable_fraction: min_frac, ..PipelineConfig::default() };
                filter_tracks(std::slice::from_ref(&f), std::slice::from_ref(&b), &cfg).unwrap()
            };
            let (out_lo, rep_lo) = run(lo);
            let (_, rep_hi) = run(hi);
            // monotone in the threshold
            prop_assert!(rep_hi.tracks[0].reliable_fraction >= rep_lo.tracks[0].reliable_fraction);
            // positions untouched
            for (p, q) in out_lo[0].points.iter().zip(&f.points) {
                prop_assert_eq!(p.pos, q.pos);
                prop_assert_eq!(p.confidence, q.confidence);
            }
            // exact drop rule
            prop_assert_eq!(out_lo[0].dropped, rep_lo.tracks[0].reliable_fraction < min_frac);
        }
    }
}
