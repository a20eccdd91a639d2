//! Pipeline configuration: TOML parsing with fail-closed key checking,
//! invariant enforcement and a deterministic content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::to_canonical_json;
use crate::proposal::prompt;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Parameters of the bundled pyramidal tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Half-width of the square matching window; the window is `(2r+1)^2`.
    pub win_radius: usize,
    pub pyramid_levels: usize,
    pub max_iters: usize,
    /// Convergence threshold on the per-iteration update, in pixels.
    pub epsilon: f64,
    /// Lower bound on the smallest eigenvalue of the window-averaged structure tensor.
    pub min_eig: f64,
    /// Mean absolute intensity difference above which a step counts as lost.
    pub max_residual: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { win_radius: 7, pyramid_levels: 3, max_iters: 30, epsilon: 0.01, min_eig: 1e-4, max_residual: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub max_keypoints: usize,
    /// First retry delay; doubles on each further attempt.
    pub retry_base_delay_ms: u64,
    /// Client-side token bucket; 0 disables it.
    pub requests_per_minute: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-4o".into(),
            timeout_s: 60.0,
            max_retries: 3,
            max_keypoints: 32,
            retry_base_delay_ms: 500,
            requests_per_minute: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub resize_w: usize,
    pub resize_h: usize,
    pub window_size: usize,
    pub stride: usize,
    pub fb_threshold: f64,
    pub min_reliable_fraction: f64,
    pub max_gap: usize,
    pub smooth_radius: usize,
    pub resample_count: usize,
    pub seed_probe_stride: usize,
    pub seed_frame_override: Option<usize>,
    pub prompt_template: String,
    /// Task description substituted into the proposal prompt.
    pub task: String,
    pub wrist_label: String,
    /// Overlay trail length in frames.
    pub trail_len: usize,
    pub tracker: TrackerParams,
    pub backend: BackendConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resize_w: 256,
            resize_h: 256,
            window_size: 64,
            stride: 1,
            fb_threshold: 2.0,
            min_reliable_fraction: 0.5,
            max_gap: 5,
            smooth_radius: 0,
            resample_count: 64,
            seed_probe_stride: 4,
            seed_frame_override: None,
            prompt_template: "grasp_v1".into(),
            task: "manipulate the object with the hand".into(),
            wrist_label: "wrist".into(),
            trail_len: 12,
            tracker: TrackerParams::default(),
            backend: BackendConfig::default(),
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "resize_w",
    "resize_h",
    "window_size",
    "stride",
    "fb_threshold",
    "min_reliable_fraction",
    "max_gap",
    "smooth_radius",
    "resample_count",
    "seed_probe_stride",
    "seed_frame_override",
    "prompt_template",
    "task",
    "wrist_label",
    "trail_len",
    "tracker",
    "backend",
];
const TRACKER_KEYS: &[&str] = &["win_radius", "pyramid_levels", "max_iters", "epsilon", "min_eig", "max_residual"];
const BACKEND_KEYS: &[&str] = &[
    "base_url",
    "model_id",
    "timeout_s",
    "max_retries",
    "max_keypoints",
    "retry_base_delay_ms",
    "requests_per_minute",
];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn check_keys(table: &toml::Table) -> Result<(), ConfigError> {
    for (key, value) in table {
        if !TOP_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        let nested = match key.as_str() {
            "tracker" => Some(TRACKER_KEYS),
            "backend" => Some(BACKEND_KEYS),
            _ => None,
        };
        if let (Some(allowed), toml::Value::Table(sub)) = (nested, value) {
            if let Some(bad) = sub.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(ConfigError::UnknownKey(format!("{key}.{bad}")));
            }
        }
    }
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text. Missing keys take defaults; unknown keys are errors.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            reason: e.message().to_string(),
        })?;
        check_keys(&table)?;
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
            ConfigError::InvalidValue { key: key.into(), reason: reason.into() }
        }
        let counts = [
            ("window_size", self.window_size),
            ("max_gap", self.max_gap),
            ("seed_probe_stride", self.seed_probe_stride),
            ("trail_len", self.trail_len),
            ("tracker.win_radius", self.tracker.win_radius),
            ("tracker.pyramid_levels", self.tracker.pyramid_levels),
            ("tracker.max_iters", self.tracker.max_iters),
            ("backend.max_keypoints", self.backend.max_keypoints),
        ];
        for (key, v) in counts {
            if v < 1 {
                return Err(bad(key, "must be >= 1"));
            }
        }
        if self.stride != 1 {
            return Err(bad("stride", "only stride 1 is supported"));
        }
        if self.resize_w < 32 {
            return Err(bad("resize_w", "must be >= 32"));
        }
        if self.resize_h < 32 {
            return Err(bad("resize_h", "must be >= 32"));
        }
        if self.resample_count < 2 {
            return Err(bad("resample_count", "must be >= 2"));
        }
        if !(self.tracker.epsilon > 0.0) || !self.tracker.epsilon.is_finite() {
            return Err(bad("tracker.epsilon", "must be > 0"));
        }
        let non_negative = [
            ("fb_threshold", self.fb_threshold),
            ("tracker.min_eig", self.tracker.min_eig),
            ("tracker.max_residual", self.tracker.max_residual),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(key, "must be a finite value >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.min_reliable_fraction) {
            return Err(bad("min_reliable_fraction", "must lie in [0, 1]"));
        }
        if !(self.backend.timeout_s > 0.0) || !self.backend.timeout_s.is_finite() {
            return Err(bad("backend.timeout_s", "must be > 0"));
        }
        if self.backend.base_url.trim().is_empty() {
            return Err(bad("backend.base_url", "must not be empty"));
        }
        if self.backend.model_id.trim().is_empty() {
            return Err(bad("backend.model_id", "must not be empty"));
        }
        if self.wrist_label.is_empty() {
            return Err(bad("wrist_label", "must not be empty"));
        }
        if prompt::template(&self.prompt_template).is_none() {
            return Err(bad("prompt_template", format!("unknown template `{}`", self.prompt_template)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = to_canonical_json(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn parse_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    PipelineConfig::from_toml_str(&text)
}
