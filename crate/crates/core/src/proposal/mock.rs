//! Fixture-driven backend for offline runs and tests.
//!
//! The fixture is a JSON document:
//!
//! ```json
//! {
//!   "format": "trajex-mock-backend",
//!   "version": 1,
//!   "model_id": "mock-vlm",
//!   "entries": [
//!     {"frames": [0, 5], "prompt_id": "hand_presence_v1", "body": "no"},
//!     {"frames": [6, 6], "prompt_id": "grasp_v1", "status": 200, "body": "..."}
//!   ]
//! }
//! ```
//!
//! `frames` is an inclusive range. The first entry whose range contains the
//! frame index and whose `prompt_id` matches answers the request; `status`
//! defaults to 200, any other value is returned as an HTTP failure carrying
//! `body`. Requests without a matching entry fail with a fixture error.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, BackendErrorKind, BackendRequest, ProposalBackend};

pub const FIXTURE_FORMAT: &str = "trajex-mock-backend";
pub const FIXTURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub frames: [usize; 2],
    pub prompt_id: String,
    #[serde(default = "ok_status")]
    pub status: u16,
    pub body: String,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockFixture {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub entries: Vec<FixtureEntry>,
}

#[derive(Debug)]
pub struct MockBackend {
    fixture: MockFixture,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Result<Self, BackendError> {
        if fixture.format != FIXTURE_FORMAT {
            return Err(BackendError::new(
                BackendErrorKind::Config,
                format!("fixture format {:?}, expected {FIXTURE_FORMAT:?}", fixture.format),
            ));
        }
        if fixture.version != FIXTURE_VERSION {
            return Err(BackendError::new(
                BackendErrorKind::Config,
                format!("fixture version {} unsupported", fixture.version),
            ));
        }
        Ok(Self { fixture, calls: AtomicUsize::new(0) })
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let fixture = serde_json::from_str(text)
            .map_err(|e| BackendError::new(BackendErrorKind::Config, format!("bad mock fixture: {e}")))?;
        Self::new(fixture)
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::new(BackendErrorKind::Config, format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn lookup(&self, frame_index: usize, prompt_id: &str) -> Option<&FixtureEntry> {
        self.fixture
            .entries
            .iter()
            .find(|e| e.prompt_id == prompt_id && (e.frames[0]..=e.frames[1]).contains(&frame_index))
    }
}

impl ProposalBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.fixture.model_id
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let frame = request.frame.index;
        match self.lookup(frame, request.prompt_id) {
            Some(e) if e.status == 200 => Ok(e.body.clone()),
            Some(e) => Err(BackendError::new(BackendErrorKind::Http(e.status), &e.body)),
            None => Err(BackendError::new(
                BackendErrorKind::Fixture,
                format!("no fixture entry for frame {frame}, prompt {}", request.prompt_id),
            )),
        }
    }
}
