//! Line-delimited JSON protocol for running a tracker in a child process.
//!
//! Every message is one JSON object on one line. The client opens with
//!
//! ```text
//! {"op":"hello","protocol":1,"source_id":"...","frame_count":N,"width":W,"height":H}
//! ```
//!
//! and the server answers `{"ok":true}` when it has the same frames loaded.
//! Tracking requests name two frame indices of the sequence and the query
//! points in pixel coordinates of the resized frames:
//!
//! ```text
//! {"op":"track","from":12,"to":13,"points":[[40.5,31.25],[100.0,7.5]]}
//! {"results":[{"x":41.0,"y":31.3,"converged":true,"residual":0.004},...]}
//! ```
//!
//! Results come back in query order. Any failure is reported as
//! `{"error":"message"}`. `{"op":"bye"}` ends the session.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::lk::track_point_step;
use super::pyramid::{build_pyramid, Pyramid};
use super::{PointTracker, StepOutcome, TrackError, TrackerWindow};
use crate::config::TrackerParams;
use crate::frame_io::{Frame, FrameSequence};
use crate::Point;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello { protocol: u32, source_id: String, frame_count: usize, width: usize, height: usize },
    Track { from: usize, to: usize, points: Vec<[f64; 2]> },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReply {
    pub x: f64,
    pub y: f64,
    pub converged: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Ok { ok: bool },
    Results { results: Vec<PointReply> },
    Error { error: String },
}

struct Pipe {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Client side: a tracker living in a child process.
pub struct ExternalTracker {
    child: Mutex<Child>,
    pipe: Mutex<Pipe>,
}

impl ExternalTracker {
    /// Spawns `command` (program followed by arguments) and performs the handshake.
    pub fn spawn(command: &[String], seq: &FrameSequence) -> Result<Self, TrackError> {
        let (program, args) =
            command.split_first().ok_or_else(|| TrackError::External("empty tracker command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| TrackError::External(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let tracker = Self { child: Mutex::new(child), pipe: Mutex::new(Pipe { stdin, stdout }) };
        let (w, h) = seq.dims();
        let reply = tracker.call(&Request::Hello {
            protocol: PROTOCOL_VERSION,
            source_id: seq.source_id.clone(),
            frame_count: seq.len(),
            width: w,
            height: h,
        })?;
        match reply {
            Reply::Ok { ok: true } => Ok(tracker),
            other => Err(TrackError::External(format!("handshake refused: {other:?}"))),
        }
    }

    fn call(&self, req: &Request) -> Result<Reply, TrackError> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        let line = serde_json::to_string(req).expect("request serializes");
        writeln!(pipe.stdin, "{line}")
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| TrackError::External(format!("write failed: {e}")))?;
        let mut answer = String::new();
        let n = pipe.stdout.read_line(&mut answer).map_err(|e| TrackError::External(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(TrackError::External("tracker process closed its output".into()));
        }
        match serde_json::from_str(&answer) {
            Ok(Reply::Error { error }) => Err(TrackError::External(error)),
            Ok(reply) => Ok(reply),
            Err(e) => Err(TrackError::External(format!("bad reply {answer:?}: {e}"))),
        }
    }
}

impl Drop for ExternalTracker {
    fn drop(&mut self) {
        let _ = self.call(&Request::Bye);
        if let Ok(mut child) = self.child.lock() {
            let _ = child.wait();
        }
    }
}

struct ExternalWindow<'a> {
    tracker: &'a ExternalTracker,
    frame_ids: Vec<usize>,
}

impl PointTracker for ExternalTracker {
    fn begin_window<'a>(&'a self, frames: &[&'a Frame]) -> Result<Box<dyn TrackerWindow + 'a>, TrackError> {
        Ok(Box::new(ExternalWindow { tracker: self, frame_ids: frames.iter().map(|f| f.index).collect() }))
    }
}

impl TrackerWindow for ExternalWindow<'_> {
    fn step(&self, from: usize, to: usize, points: &[Point]) -> Result<Vec<StepOutcome>, TrackError> {
        let req = Request::Track {
            from: self.frame_ids[from],
            to: self.frame_ids[to],
            points: points.iter().map(|p| [p.x, p.y]).collect(),
        };
        match self.tracker.call(&req)? {
            Reply::Results { results } => Ok(results
                .into_iter()
                .map(|r| StepOutcome { pos: Point::new(r.x, r.y), residual: r.residual, converged: r.converged })
                .collect()),
            other => Err(TrackError::External(format!("unexpected reply {other:?}"))),
        }
    }
}

const CACHE_SLOTS: usize = 4;

/// Server side: answers protocol requests with the bundled tracker.
pub fn serve<R: BufRead, W: Write>(
    seq: &FrameSequence,
    params: &TrackerParams,
    input: R,
    mut output: W,
) -> std::io::Result<()> {
    let mut cache: VecDeque<(usize, Pyramid)> = VecDeque::new();
    let mut greeted = false;

    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => Reply::Error { error: format!("bad request: {e}") },
            Ok(Request::Bye) => break,
            Ok(Request::Hello { protocol, frame_count, width, height, .. }) => {
                if protocol != PROTOCOL_VERSION {
                    Reply::Error { error: format!("protocol {protocol} unsupported") }
                } else if (frame_count, (width, height)) != (seq.len(), seq.dims()) {
                    Reply::Error { error: "sequence mismatch".into() }
                } else {
                    greeted = true;
                    Reply::Ok { ok: true }
                }
            }
            Ok(Request::Track { .. }) if !greeted => Reply::Error { error: "hello required first".into() },
            Ok(Request::Track { from, to, points }) => {
                if from >= seq.len() || to >= seq.len() {
                    Reply::Error { error: format!("frame pair ({from},{to}) out of range") }
                } else {
                    let mut pyramid = |i: usize| -> Result<Pyramid, TrackError> {
                        if let Some((_, p)) = cache.iter().find(|(k, _)| *k == i) {
                            return Ok(p.clone());
                        }
                        let p = build_pyramid(seq.frame(i), params.pyramid_levels)?;
                        if cache.len() == CACHE_SLOTS {
                            cache.pop_front();
                        }
                        cache.push_back((i, p.clone()));
                        Ok(p)
                    };
                    match pyramid(from).and_then(|a| Ok((a, pyramid(to)?))) {
                        Err(e) => Reply::Error { error: e.to_string() },
                        Ok((a, b)) => Reply::Results {
                            results: points
                                .iter()
                                .map(|&[x, y]| {
                                    let o = track_point_step(&a, &b, Point::new(x, y), params);
                                    PointReply { x: o.pos.x, y: o.pos.y, converged: o.converged, residual: o.residual }
                                })
                                .collect(),
                        },
                    }
                }
            }
        };
        writeln!(output, "{}", serde_json::to_string(&reply).expect("reply serializes"))?;
        output.flush()?;
    }
    Ok(())
}
