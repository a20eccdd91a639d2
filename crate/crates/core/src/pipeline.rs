//! Stage orchestration. Each stage is a function from a bundle (plus frames
//! where needed) to the next bundle, so the CLI subcommands and the full run
//! share one code path.

use std::path::Path;

use thiserror::Error;

use crate::bidi_filter::{filter_tracks, track_bidirectional, FilterError};
use crate::config::{ConfigError, PipelineConfig};
use crate::frame_io::{load_sequence, select_seed_frame, FrameError, FrameSequence, SeedError};
use crate::postprocess::{interpolate_gaps, resample_uniform, retarget_wrist, smooth_track, PostprocessError};
use crate::proposal::{build_prompt, propose_keypoints, ProposalBackend, ProposalError};
use crate::tracker::external::ExternalTracker;
use crate::tracker::{LkTracker, PointTracker, TrackError};
use crate::trajstore::{save_bundle, ErrorReport, StoreError, TrajectoryBundle};

pub const BUNDLE_FILE: &str = "bundle.json";

pub mod stage {
    pub const LOAD: &str = "load";
    pub const SEED: &str = "seed";
    pub const PROPOSE: &str = "propose";
    pub const TRACK: &str = "track";
    pub const FILTER: &str = "filter";
    pub const INTERPOLATE: &str = "interpolate";
    pub const SMOOTH: &str = "smooth";
    pub const RETARGET: &str = "retarget";
    pub const RESAMPLE: &str = "resample";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error(transparent)]
    Seed(#[from] SeedError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Usage(String),
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const NO_HAND_FRAME: i32 = 4;
    pub const SEED_OUT_OF_RANGE: i32 = 5;
    pub const BACKEND: i32 = 6;
    pub const PROPOSAL_INVALID: i32 = 7;
    pub const TRACKING: i32 = 8;
    pub const FILTER: i32 = 9;
    pub const POSTPROCESS: i32 = 10;
    pub const BUNDLE: i32 = 11;
    pub const DIMENSION_MISMATCH: i32 = 12;
    pub const IO: i32 = 13;
    pub const USAGE: i32 = 64;
}

fn proposal_code(e: &ProposalError) -> i32 {
    match e {
        ProposalError::Backend(_) => exit::BACKEND,
        ProposalError::Parse(_) | ProposalError::Validation(_) => exit::PROPOSAL_INVALID,
        ProposalError::UnknownTemplate(_) => exit::CONFIG,
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => exit::CONFIG,
            PipelineError::Frames(_) => exit::INPUT,
            PipelineError::Seed(SeedError::NoHandFrameFound { .. }) => exit::NO_HAND_FRAME,
            PipelineError::Seed(SeedError::SeedFrameOutOfRange { .. }) => exit::SEED_OUT_OF_RANGE,
            PipelineError::Seed(SeedError::Proposal(e)) => proposal_code(e),
            PipelineError::Seed(SeedError::Frames(_)) => exit::INPUT,
            PipelineError::Proposal(e) => proposal_code(e),
            PipelineError::Track(TrackError::SeedFrameOutOfRange { .. }) => exit::SEED_OUT_OF_RANGE,
            PipelineError::Track(_) => exit::TRACKING,
            PipelineError::Filter(_) => exit::FILTER,
            PipelineError::Postprocess(_) => exit::POSTPROCESS,
            PipelineError::Store(StoreError::DimensionMismatch { .. }) => exit::DIMENSION_MISMATCH,
            PipelineError::Store(StoreError::Io { .. }) => exit::IO,
            PipelineError::Store(_) => exit::BUNDLE,
            PipelineError::Usage(_) => exit::USAGE,
        }
    }
}

/// Which point tracker to run.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum TrackerChoice {
    #[default]
    Builtin,
    /// Program and arguments of a process speaking the JSON-lines protocol.
    External(Vec<String>),
}

pub fn make_tracker(
    choice: &TrackerChoice,
    seq: &FrameSequence,
    cfg: &PipelineConfig,
) -> Result<Box<dyn PointTracker>, TrackError> {
    Ok(match choice {
        TrackerChoice::Builtin => Box::new(LkTracker::new(cfg.tracker.clone())),
        TrackerChoice::External(cmd) => Box::new(ExternalTracker::spawn(cmd, seq)?),
    })
}

fn push(bundle: &mut TrajectoryBundle, name: &str) {
    bundle.stages.push(name.to_string());
}

/// Seed selection and keypoint proposal; the start of every bundle.
pub fn stage_propose(
    seq: &FrameSequence,
    backend: &dyn ProposalBackend,
    cfg: &PipelineConfig,
) -> Result<TrajectoryBundle, PipelineError> {
    let seed = select_seed_frame(seq, backend, cfg)?;
    log::info!("seed frame {seed}");
    // the model sees the frame at its original resolution
    let original = seq.original(seed).map_err(SeedError::from)?;
    let prompt = build_prompt(&cfg.prompt_template, &cfg.task, (original.width(), original.height()))?;
    let proposal = propose_keypoints(backend, &original, seq.dims(), &prompt, cfg)?;
    log::info!("{} keypoints proposed", proposal.keypoints.len());
    let mut bundle = TrajectoryBundle::new(seq.source_id.clone(), seq.dims(), seq.len(), seq.fps, proposal, cfg);
    for s in [stage::LOAD, stage::SEED, stage::PROPOSE] {
        push(&mut bundle, s);
    }
    Ok(bundle)
}

fn check_sequence(seq: &FrameSequence, bundle: &TrajectoryBundle) -> Result<(), StoreError> {
    let (w, h) = seq.dims();
    if seq.len() != bundle.frame_count || (w, h) != (bundle.width, bundle.height) {
        return Err(StoreError::DimensionMismatch {
            bundle_frames: bundle.frame_count,
            bundle_w: bundle.width,
            bundle_h: bundle.height,
            seq_frames: seq.len(),
            seq_w: w,
            seq_h: h,
        });
    }
    Ok(())
}

pub fn stage_track(
    seq: &FrameSequence,
    mut bundle: TrajectoryBundle,
    tracker: &dyn PointTracker,
) -> Result<TrajectoryBundle, PipelineError> {
    check_sequence(seq, &bundle)?;
    let (fwd, bwd) = track_bidirectional(seq, &bundle.proposal, tracker, &bundle.config)?;
    bundle.tracks = fwd;
    bundle.backward_tracks = Some(bwd);
    push(&mut bundle, stage::TRACK);
    Ok(bundle)
}

pub fn stage_filter(mut bundle: TrajectoryBundle) -> Result<TrajectoryBundle, PipelineError> {
    let bwd = bundle
        .backward_tracks
        .take()
        .ok_or_else(|| FilterError::TrackSetMismatch("bundle has no backward tracks".into()))?;
    let (tracks, report) = filter_tracks(&bundle.tracks, &bwd, &bundle.config)?;
    let dropped = tracks.iter().filter(|t| t.dropped).count();
    log::info!("filter: {dropped} of {} tracks dropped", tracks.len());
    bundle.tracks = tracks;
    bundle.cycle_report = Some(report);
    push(&mut bundle, stage::FILTER);
    Ok(bundle)
}

/// Gap filling, then smoothing when `smooth_radius > 0`.
pub fn stage_interpolate(mut bundle: TrajectoryBundle) -> Result<TrajectoryBundle, PipelineError> {
    let cfg = &bundle.config;
    let tracks = bundle.tracks.iter().map(|t| interpolate_gaps(t, cfg.max_gap)).collect();
    bundle.tracks = tracks;
    push(&mut bundle, stage::INTERPOLATE);
    if bundle.config.smooth_radius > 0 {
        let r = bundle.config.smooth_radius;
        bundle.tracks = bundle.tracks.iter().map(|t| smooth_track(t, r)).collect();
        push(&mut bundle, stage::SMOOTH);
    }
    Ok(bundle)
}

/// Wrist retargeting followed by uniform resampling.
pub fn stage_retarget(mut bundle: TrajectoryBundle) -> Result<TrajectoryBundle, PipelineError> {
    let traj = retarget_wrist(&bundle, &bundle.config)?;
    push(&mut bundle, stage::RETARGET);
    bundle.end_effector = Some(resample_uniform(&traj, bundle.config.resample_count)?);
    push(&mut bundle, stage::RESAMPLE);
    Ok(bundle)
}

/// A failed run: the bundle reached so far, the failing stage and the error.
pub type StageFailure = Box<(TrajectoryBundle, &'static str, PipelineError)>;

/// Runs every stage after the proposal. On failure the bundle reached so far
/// is returned together with the error and the stage that raised it.
pub fn run_after_proposal(
    seq: &FrameSequence,
    bundle: TrajectoryBundle,
    tracker: &dyn PointTracker,
) -> Result<TrajectoryBundle, StageFailure> {
    let mut current = bundle;
    type Step<'a> = Box<dyn Fn(TrajectoryBundle) -> Result<TrajectoryBundle, PipelineError> + 'a>;
    let steps: [(&'static str, Step); 4] = [
        (stage::TRACK, Box::new(|b| stage_track(seq, b, tracker))),
        (stage::FILTER, Box::new(stage_filter)),
        (stage::INTERPOLATE, Box::new(stage_interpolate)),
        (stage::RETARGET, Box::new(stage_retarget)),
    ];
    for (name, step) in steps {
        let before = current.clone();
        current = match step(current) {
            Ok(b) => b,
            Err(e) => return Err(Box::new((before, name, e))),
        };
    }
    Ok(current)
}

/// Full run: load, seed, propose, track, filter, interpolate, retarget,
/// resample; writes `out_dir/bundle.json`.
///
/// Failures after the proposal still write a bundle holding the completed
/// stages plus an error report. Earlier failures write nothing.
pub fn run_pipeline(
    input: &Path,
    cfg: &PipelineConfig,
    out_dir: &Path,
    backend: &dyn ProposalBackend,
    tracker: &TrackerChoice,
) -> Result<TrajectoryBundle, PipelineError> {
    let seq = load_sequence(input, cfg)?;
    let bundle = stage_propose(&seq, backend, cfg)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| StoreError::Io { path: out_dir.to_path_buf(), reason: e.to_string() })?;
    let path = out_dir.join(BUNDLE_FILE);

    let outcome = match make_tracker(tracker, &seq, cfg) {
        Ok(t) => run_after_proposal(&seq, bundle, t.as_ref()),
        Err(e) => Err(Box::new((bundle, stage::TRACK, e.into()))),
    };
    match outcome {
        Ok(done) => {
            save_bundle(&done, &path)?;
            Ok(done)
        }
        Err(failure) => {
            let (mut partial, name, err) = *failure;
            partial.error =
                Some(ErrorReport { stage: name.into(), exit_code: err.exit_code(), message: err.to_string() });
            if let Err(e) = save_bundle(&partial, &path) {
                log::error!("could not write partial bundle: {e}");
            }
            Err(err)
        }
    }
}
