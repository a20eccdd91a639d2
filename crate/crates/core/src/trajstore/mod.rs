//! Trajectory bundles: canonical JSON on disk, CSV export and overlays.

mod overlay;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidi_filter::CycleReport;
use crate::canonical::to_canonical_json;
use crate::config::PipelineConfig;
use crate::postprocess::EndEffectorTrajectory;
use crate::proposal::ProposalResult;
use crate::tracker::Track;

pub use overlay::{render_overlay, ImageFormat, PALETTE_HAND, PALETTE_OBJECT, PALETTE_TOOL};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("bundle schema version {0} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersionUnsupported(u64),
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("bundle invariant violated: {0}")]
    InvariantViolation(String),
    #[error(
        "bundle covers {bundle_frames} frames of {bundle_w}x{bundle_h}, sequence has {seq_frames} of {seq_w}x{seq_h}"
    )]
    DimensionMismatch {
        bundle_frames: usize,
        bundle_w: usize,
        bundle_h: usize,
        seq_frames: usize,
        seq_w: usize,
        seq_h: usize,
    },
}

impl StoreError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        StoreError::Io { path: path.to_path_buf(), reason: e.to_string() }
    }
}

/// Failure recorded in a partial bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub stage: String,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub schema_version: u64,
    pub source_id: String,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: Option<f64>,
    pub proposal: ProposalResult,
    pub tracks: Vec<Track>,
    /// Backward-pass tracks, kept only between tracking and filtering.
    pub backward_tracks: Option<Vec<Track>>,
    pub cycle_report: Option<CycleReport>,
    pub end_effector: Option<EndEffectorTrajectory>,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub stages: Vec<String>,
    pub error: Option<ErrorReport>,
}

impl TrajectoryBundle {
    /// A bundle holding only the proposal, before any tracking.
    pub fn new(
        source_id: impl Into<String>,
        dims: (usize, usize),
        frame_count: usize,
        fps: Option<f64>,
        proposal: ProposalResult,
        config: &PipelineConfig,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            source_id: source_id.into(),
            width: dims.0,
            height: dims.1,
            frame_count,
            fps,
            proposal,
            tracks: Vec::new(),
            backward_tracks: None,
            cycle_report: None,
            end_effector: None,
            config: config.clone(),
            config_hash: config.hash(),
            stages: Vec::new(),
            error: None,
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {}", self.schema_version));
        }
        self.config.validate().map_err(|e| e.to_string())?;
        if self.config_hash != self.config.hash() {
            return Err("config_hash does not match the embedded config".into());
        }
        if self.proposal.frame_index >= self.frame_count {
            return Err(format!("proposal frame {} out of range", self.proposal.frame_index));
        }
        for t in &self.tracks {
            let seed = self.proposal.keypoint(&t.label).map(|k| k.pos);
            if seed.is_none() {
                return Err(format!("track {:?} has no proposal keypoint", t.label));
            }
            if t.seed_frame != self.proposal.frame_index {
                return Err(format!(
                    "track {:?} seeded at {} not {}",
                    t.label, t.seed_frame, self.proposal.frame_index
                ));
            }
            t.check_invariants(self.frame_count, seed)?;
        }
        if let Some(bwd) = &self.backward_tracks {
            if bwd.len() != self.tracks.len() {
                return Err("backward track count differs from forward".into());
            }
            if let Some(t) = bwd.iter().find(|t| t.points.len() != self.frame_count) {
                return Err(format!("backward track {:?} has {} points", t.label, t.points.len()));
            }
        }
        if let Some(report) = &self.cycle_report {
            if report.tracks.len() != self.tracks.len() {
                return Err("cycle report track count differs".into());
            }
            for (c, t) in report.tracks.iter().zip(&self.tracks) {
                if c.label != t.label || c.fb_errors.len() != self.frame_count || c.reliable.len() != self.frame_count {
                    return Err(format!("cycle report entry {:?} inconsistent", c.label));
                }
            }
        }
        if let Some(ee) = &self.end_effector {
            ee.check_invariants().map_err(|e| format!("end effector: {e}"))?;
        }
        Ok(())
    }

    /// Canonical document bytes, as written by [`save_bundle`].
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        to_canonical_json(self).expect("bundle serializes")
    }
}

pub fn save_bundle(bundle: &TrajectoryBundle, path: &Path) -> Result<(), StoreError> {
    fs::write(path, bundle.to_canonical_bytes()).map_err(|e| StoreError::io(path, e))
}

pub fn parse_bundle(bytes: &[u8]) -> Result<TrajectoryBundle, StoreError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| StoreError::Malformed(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(StoreError::SchemaVersionUnsupported(v)),
        None => return Err(StoreError::Malformed("missing schema_version".into())),
    }
    let bundle: TrajectoryBundle = serde_json::from_slice(bytes).map_err(|e| StoreError::Malformed(e.to_string()))?;
    bundle.check_invariants().map_err(StoreError::InvariantViolation)?;
    Ok(bundle)
}

pub fn load_bundle(path: &Path) -> Result<TrajectoryBundle, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    parse_bundle(&bytes)
}

pub const CSV_HEADER: [&str; 8] = ["label", "category", "frame", "x", "y", "visible", "source", "confidence"];

fn source_name(s: crate::tracker::Source) -> &'static str {
    match s {
        crate::tracker::Source::Tracked => "tracked",
        crate::tracker::Source::Seed => "seed",
        crate::tracker::Source::Interpolated => "interpolated",
    }
}

/// One row per (track, frame); RFC 4180 quoting.
pub fn write_csv<W: std::io::Write>(bundle: &TrajectoryBundle, out: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in &bundle.tracks {
        for p in &t.points {
            w.write_record([
                t.label.as_str(),
                t.category.as_str(),
                &p.frame_index.to_string(),
                &p.pos.x.to_string(),
                &p.pos.y.to_string(),
                if p.visible { "true" } else { "false" },
                source_name(p.source),
                &p.confidence.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(bundle: &TrajectoryBundle, path: &Path) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    write_csv(bundle, std::io::BufWriter::new(file)).map_err(|e| StoreError::io(path, e))
}

/// End-effector samples as `t_norm,x_norm,y_norm,visible`.
pub fn export_end_effector_csv(traj: &EndEffectorTrajectory, path: &Path) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(std::io::BufWriter::new(file));
    let rows = std::iter::once(["t_norm".to_string(), "x_norm".into(), "y_norm".into(), "visible".into()]).chain(
        traj.samples
            .iter()
            .map(|s| [s.t_norm.to_string(), s.x_norm.to_string(), s.y_norm.to_string(), s.visible.to_string()]),
    );
    for r in rows {
        w.write_record(&r).map_err(|e| StoreError::io(path, e))?;
    }
    w.flush().map_err(|e| StoreError::io(path, e))
}
