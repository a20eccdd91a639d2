//! Semantic keypoint proposal through a vision-language model backend.

mod backend;
pub mod http;
pub mod mock;
pub mod parse;
pub mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    complete_with_retry, BackendError, BackendErrorKind, BackendRequest, ProposalBackend, RetryPolicy, TokenBucket,
};
pub use parse::{parse_response, validate_proposal, ParseError, ProposalContext, RawRecord, ValidationError};
pub use prompt::{build_prompt, RenderedPrompt};

use crate::config::PipelineConfig;
use crate::frame_io::Frame;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Hand,
    Tool,
    Object,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hand => "hand",
            Self::Tool => "tool",
            Self::Object => "object",
        }
    }

    /// Case-insensitive, surrounding whitespace ignored.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hand" => Some(Self::Hand),
            "tool" => Some(Self::Tool),
            "object" => Some(Self::Object),
            _ => None,
        }
    }
}

/// A labelled seed point in resized-frame pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub label: String,
    pub category: Category,
    pub pos: Point,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalResult {
    pub frame_index: usize,
    pub keypoints: Vec<Keypoint>,
    pub model_id: String,
    pub raw_response: String,
    pub prompt_id: String,
}

impl ProposalResult {
    pub fn keypoint(&self, label: &str) -> Option<&Keypoint> {
        self.keypoints.iter().find(|k| k.label == label)
    }
}

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
}

/// Asks the backend for keypoints on `frame` and validates the reply.
/// Normalized replies are mapped to pixels of a `dims` (width, height) frame.
pub fn propose_keypoints(
    backend: &dyn ProposalBackend,
    frame: &Frame,
    dims: (usize, usize),
    prompt: &RenderedPrompt,
    cfg: &PipelineConfig,
) -> Result<ProposalResult, ProposalError> {
    let request = BackendRequest { frame, prompt_id: &prompt.template_id, prompt: &prompt.text };
    let reply = complete_with_retry(backend, &request, &RetryPolicy::from_config(&cfg.backend))?;
    let records = parse_response(&reply)?;
    let ctx = ProposalContext {
        frame_index: frame.index,
        model_id: backend.model_id().to_string(),
        prompt_id: prompt.template_id.clone(),
        raw_response: reply,
        required_label: prompt.requests(Category::Hand).then(|| cfg.wrist_label.clone()),
        max_keypoints: cfg.backend.max_keypoints,
    };
    Ok(validate_proposal(&records, dims, ctx)?)
}

/// Yes/no query: is a hand clearly visible on this frame?
pub fn query_hand_presence(
    backend: &dyn ProposalBackend,
    frame: &Frame,
    retry: &RetryPolicy,
) -> Result<bool, ProposalError> {
    let request = BackendRequest { frame, prompt_id: prompt::HAND_PRESENCE_ID, prompt: prompt::hand_presence_prompt() };
    let reply = complete_with_retry(backend, &request, retry)?;
    Ok(parse::parse_yes_no(&reply)?)
}
