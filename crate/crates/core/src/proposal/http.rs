//! OpenAI-compatible chat-completions client.
//!
//! Each request is one user message with a text part (the prompt) and an
//! `image_url` part holding the frame as a base64 PNG data URL. The reply
//! text is `choices[0].message.content`.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::backend::{BackendError, BackendErrorKind, BackendRequest, ProposalBackend, TokenBucket};
use crate::config::BackendConfig;
use crate::frame_io::{codec, Frame};

pub const API_KEY_ENV: &str = "TRAJEX_API_KEY";

pub struct ChatCompletionsBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    model_id: String,
    limiter: Option<TokenBucket>,
}

impl std::fmt::Debug for ChatCompletionsBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatCompletionsBackend")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .finish_non_exhaustive()
    }
}

impl ChatCompletionsBackend {
    /// Reads the bearer token from `TRAJEX_API_KEY`.
    pub fn from_env(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::new(BackendErrorKind::Config, format!("{API_KEY_ENV} is not set")))?;
        Self::new(cfg, key)
    }

    pub fn new(cfg: &BackendConfig, api_key: String) -> Result<Self, BackendError> {
        let base = cfg.base_url.trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(BackendError::new(BackendErrorKind::Config, format!("bad base_url {base:?}")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: format!("{base}/chat/completions"),
            api_key,
            model_id: cfg.model_id.clone(),
            limiter: (cfg.requests_per_minute > 0).then(|| TokenBucket::per_minute(cfg.requests_per_minute)),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// PNG bytes of the frame, colour when available.
pub fn encode_frame_png(frame: &Frame) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let result = match &frame.rgb {
        Some([r, g, b]) => {
            let interleaved: Vec<f32> =
                r.data().iter().zip(g.data()).zip(b.data()).flat_map(|((&r, &g), &b)| [r, g, b]).collect();
            codec::encode_png(w, h, 3, &codec::to_bytes(&interleaved))
        }
        None => codec::encode_png(w, h, 1, &codec::to_bytes(frame.gray.data())),
    };
    result.expect("in-memory PNG encoding")
}

/// Chat-completions request body for one frame and prompt.
pub fn request_body(model_id: &str, request: &BackendRequest<'_>) -> Value {
    let image = base64::engine::general_purpose::STANDARD.encode(encode_frame_png(request.frame));
    json!({
        "model": model_id,
        "temperature": 0,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}}
            ]
        }]
    })
}

/// Pulls `choices[0].message.content` out of a reply body.
pub fn extract_content(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::new(BackendErrorKind::Protocol, format!("reply is not JSON ({e}): {body}")))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // some gateways return content parts
        Value::Array(parts) => Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("")),
        _ => Err(BackendError::new(BackendErrorKind::Protocol, format!("no message content: {body}"))),
    }
}

impl ProposalBackend for ChatCompletionsBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = request_body(&self.model_id, request).to_string();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .content_type("application/json")
            .send(&body)
            .map_err(|e| BackendError::new(BackendErrorKind::Transport, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::new(BackendErrorKind::Transport, e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::new(BackendErrorKind::Http(status), text));
        }
        extract_content(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Plane;

    #[test]
    fn body_has_text_and_image_parts() {
        let frame = Frame::from_gray(3, Plane::filled(4, 4, 0.5)).unwrap();
        let req = BackendRequest { frame: &frame, prompt_id: "grasp_v1", prompt: "find the wrist" };
        let body = request_body("gpt-4o", &req);
        assert_eq!(body["model"], "gpt-4o");
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], "find the wrist");
        let url = parts[1]["image_url"]["url"].as_str().unwrap();
        let png = base64::engine::general_purpose::STANDARD
            .decode(url.strip_prefix("data:image/png;base64,").unwrap())
            .unwrap();
        let decoded = codec::decode_png(&png).unwrap();
        assert_eq!((decoded.width, decoded.height), (4, 4));
    }

    #[test]
    fn content_extraction() {
        assert_eq!(extract_content(r#"{"choices":[{"message":{"content":"yes"}}]}"#).unwrap(), "yes");
        assert_eq!(
            extract_content(r#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"text":"b"}]}}]}"#)
                .unwrap(),
            "ab"
        );
        assert_eq!(extract_content("{}").unwrap_err().kind, BackendErrorKind::Protocol);
        assert_eq!(extract_content("<html>").unwrap_err().kind, BackendErrorKind::Protocol);
    }

    #[test]
    fn rejects_non_http_base_url() {
        let cfg = BackendConfig { base_url: "ftp://x".into(), ..BackendConfig::default() };
        assert_eq!(ChatCompletionsBackend::new(&cfg, "k".into()).unwrap_err().kind, BackendErrorKind::Config);
        let cfg = BackendConfig { base_url: "http://127.0.0.1:9/v1/".into(), ..BackendConfig::default() };
        assert_eq!(
            ChatCompletionsBackend::new(&cfg, "k".into()).unwrap().endpoint(),
            "http://127.0.0.1:9/v1/chat/completions"
        );
    }
}
