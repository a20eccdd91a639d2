use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::BackendConfig;
use crate::frame_io::Frame;

/// One question for the vision-language model: a frame plus prompt text.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub frame: &'a Frame,
    pub prompt_id: &'a str,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendErrorKind {
    /// Non-success HTTP status (or a fixture entry simulating one).
    Http(u16),
    /// Connection, timeout or body read failure.
    Transport,
    /// Backend could not be constructed (missing credentials, bad URL).
    Config,
    /// Reply arrived but did not have the chat-completions shape.
    Protocol,
    /// Mock fixture has no entry for the request.
    Fixture,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("backend error ({kind:?}): {excerpt}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    /// At most 200 characters of the response body or failure message.
    pub excerpt: String,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl AsRef<str>) -> Self {
        Self { kind, excerpt: message.as_ref().chars().take(200).collect() }
    }

    pub fn status(&self) -> Option<u16> {
        match self.kind {
            BackendErrorKind::Http(s) => Some(s),
            _ => None,
        }
    }

    /// 429, 5xx and transport failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self.kind {
            BackendErrorKind::Http(s) => s == 429 || (500..600).contains(&s),
            BackendErrorKind::Transport => true,
            _ => false,
        }
    }
}

/// A vision-language model reachable by one-shot image+text requests.
///
/// Implementations must be shareable across threads; each `complete` call
/// is independent.
pub trait ProposalBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, request: &BackendRequest<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    pub fn from_config(cfg: &BackendConfig) -> Self {
        Self {
            max_retries: cfg.max_retries,
            base_delay: Duration::from_millis(cfg.retry_base_delay_ms),
            max_delay: Duration::from_secs(30),
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Calls the backend, retrying transient failures with exponential backoff.
/// Issues at most `max_retries + 1` calls.
pub fn complete_with_retry(
    backend: &dyn ProposalBackend,
    request: &BackendRequest<'_>,
    policy: &RetryPolicy,
) -> Result<String, BackendError> {
    let mut attempt = 0;
    loop {
        match backend.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_transient() && attempt < policy.max_retries => {
                let wait = policy.delay(attempt);
                log::warn!("transient backend failure ({e}); retry {} in {wait:?}", attempt + 1);
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Blocking token bucket shared by concurrent callers.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(requests: u32) -> Self {
        let capacity = requests.max(1) as f64;
        Self { capacity, per_second: capacity / 60.0, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes one token if available, otherwise reports how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let now = Instant::now();
        let (tokens, last) = *state;
        let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.per_second).min(self.capacity);
        if refilled >= 1.0 {
            *state = (refilled - 1.0, now);
            Ok(())
        } else {
            *state = (refilled, now);
            Err(Duration::from_secs_f64((1.0 - refilled) / self.per_second))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Plane;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        failures: Vec<BackendError>,
        calls: AtomicUsize,
    }

    impl ProposalBackend for Scripted {
        fn model_id(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _: &BackendRequest<'_>) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            match self.failures.get(n) {
                Some(e) => Err(e.clone()),
                None => Ok("ok".into()),
            }
        }
    }

    fn policy(max_retries: u32) -> RetryPolicy {
        RetryPolicy { max_retries, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(4) }
    }

    fn run(failures: Vec<BackendError>, max_retries: u32) -> (Result<String, BackendError>, usize) {
        let b = Scripted { failures, calls: AtomicUsize::new(0) };
        let frame = Frame::from_gray(0, Plane::filled(4, 4, 0.5)).unwrap();
        let req = BackendRequest { frame: &frame, prompt_id: "p", prompt: "q" };
        let r = complete_with_retry(&b, &req, &policy(max_retries));
        (r, b.calls.load(Ordering::SeqCst))
    }

    #[test]
    fn transient_failures_retried_until_success() {
        let e503 = BackendError::new(BackendErrorKind::Http(503), "busy");
        let e429 = BackendError::new(BackendErrorKind::Http(429), "slow down");
        let (r, calls) = run(vec![e503, e429], 3);
        assert_eq!(r.unwrap(), "ok");
        assert_eq!(calls, 3);
    }

    #[test]
    fn retries_bounded() {
        let e = BackendError::new(BackendErrorKind::Http(500), "boom");
        let (r, calls) = run(vec![e.clone(); 10], 2);
        assert_eq!(r.unwrap_err(), e);
        assert_eq!(calls, 3);
    }

    #[test]
    fn permanent_failure_not_retried() {
        let e = BackendError::new(BackendErrorKind::Http(401), "unauthorized");
        let (r, calls) = run(vec![e; 5], 3);
        assert_eq!(r.unwrap_err().status(), Some(401));
        assert_eq!(calls, 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p =
            RetryPolicy { max_retries: 9, base_delay: Duration::from_millis(100), max_delay: Duration::from_secs(1) };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
        assert_eq!(p.delay(8), Duration::from_secs(1));
        assert_eq!(p.delay(40), Duration::from_secs(1));
    }

    #[test]
    fn bucket_limits_burst() {
        let b = TokenBucket::per_minute(2);
        assert!(b.try_acquire().is_ok());
        assert!(b.try_acquire().is_ok());
        assert!(b.try_acquire().is_err());
    }

    #[test]
    fn excerpt_truncated() {
        let e = BackendError::new(BackendErrorKind::Transport, "x".repeat(1000));
        assert_eq!(e.excerpt.len(), 200);
    }
}
