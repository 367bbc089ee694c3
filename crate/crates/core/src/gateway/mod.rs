//! Provider-agnostic LLM access.
//!
//! Every backend implements [`Provider`], a single text-in/text-out call. The
//! [`Gateway`] wraps a provider with retry, rate limiting and an optional
//! JSONL audit log, and is shared by reference across worker threads.

mod constrained;
mod http;
mod mock;
mod parse;
mod ratelimit;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::prompt::{text_hash, Prompt};

pub use constrained::{
    detect_query, neutrality_prompt, parse_polarity_answer, parse_yes_no, polarity_prompt, query_neutrality,
    query_polarity, QueryKind,
};
pub use http::{HttpProvider, ProviderConfig, DEFAULT_API_KEY_ENV};
pub use mock::{MockConfig, MockLedger, MockProvider};
pub use parse::{parse_phrase_list, parse_phrase_text, PhraseList, RejectReason, RejectedLine};
pub use ratelimit::RateLimiter;

/// Failure reported by a provider for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("transport failure after {retries} retries: {message}")]
    Transport { message: String, retries: u32 },
    #[error("timed out after {retries} retries")]
    Timeout { retries: u32 },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("provider returned an empty body")]
    Refusal,
    #[error("unparseable answer `{0}`")]
    UnparseableAnswer(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            model_id: "sparkdesk".to_string(),
            temperature: 0.7,
            max_output_tokens: 4096,
            request_timeout_secs: 120.0,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model id is empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be positive".into()));
        }
        if !(self.request_timeout_secs.is_finite() && self.request_timeout_secs > 0.0) {
            return Err(GatewayError::Config("request timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}

/// Provider text, recorded verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub provider_id: String,
    pub latency_secs: f64,
    pub retries_used: u32,
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Exponential backoff before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(16));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    timestamp: String,
    indicator: &'a str,
    prompt_hash: String,
    response: &'a str,
    latency: f64,
}

struct AuditLog {
    file: Mutex<File>,
    clock: Clock,
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    audit: Option<AuditLog>,
    workers: usize,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Gateway {
            provider,
            retry: RetryPolicy::default(),
            limiter: None,
            audit: None,
            workers: 1,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: f64) -> Self {
        self.limiter = Some(RateLimiter::per_minute(requests_per_minute));
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_audit_log(mut self, path: &Path, clock: Clock) -> crate::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| crate::Error::io(path, e))?;
        self.audit = Some(AuditLog {
            file: Mutex::new(file),
            clock,
        });
        Ok(self)
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    /// Upper bound on concurrent calls callers should issue.
    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn complete(&self, prompt: &Prompt, params: &CompletionParams) -> Result<RawCompletion, GatewayError> {
        self.complete_text(&prompt.rendered_text, &prompt.indicator_surface, params)
    }

    /// Sends `text`, retrying transient failures with exponential backoff.
    /// `label` only tags the audit record.
    pub fn complete_text(&self, text: &str, label: &str, params: &CompletionParams) -> Result<RawCompletion, GatewayError> {
        params.validate()?;
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let failure = match self.provider.complete(text, params) {
                Ok(body) if body.trim().is_empty() => return Err(GatewayError::Refusal),
                Ok(body) => {
                    let completion = RawCompletion {
                        text: body,
                        provider_id: self.provider.id().to_string(),
                        latency_secs: started.elapsed().as_secs_f64(),
                        retries_used: attempt,
                    };
                    self.audit(label, text, &completion);
                    return Ok(completion);
                }
                Err(ProviderError::Auth(msg)) => return Err(GatewayError::Auth(msg)),
                Err(ProviderError::Rejected(msg)) => return Err(GatewayError::Rejected(msg)),
                Err(other) => other,
            };
            if attempt >= self.retry.max_retries {
                return Err(match failure {
                    ProviderError::Timeout => GatewayError::Timeout { retries: attempt },
                    other => GatewayError::Transport {
                        message: other.to_string(),
                        retries: attempt,
                    },
                });
            }
            tracing::debug!(attempt, error = %failure, "retrying provider call");
            std::thread::sleep(self.retry.delay(attempt));
            attempt += 1;
        }
    }

    fn audit(&self, label: &str, prompt: &str, completion: &RawCompletion) {
        let Some(log) = &self.audit else { return };
        let record = AuditRecord {
            timestamp: log.clock.now(),
            indicator: label,
            prompt_hash: text_hash(prompt),
            response: &completion.text,
            latency: completion.latency_secs,
        };
        let Ok(mut line) = serde_json::to_string(&record) else { return };
        line.push('\n');
        let mut file = log.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = file.write_all(line.as_bytes()) {
            tracing::warn!("audit log write failed: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted {
        calls: AtomicU32,
        failures: u32,
        failure: ProviderError,
        body: &'static str,
    }

    impl Provider for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _prompt: &str, _params: &CompletionParams) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.failure.clone())
            } else {
                Ok(self.body.to_string())
            }
        }
    }

    fn scripted(failures: u32, failure: ProviderError, body: &'static str) -> Arc<Scripted> {
        Arc::new(Scripted {
            calls: AtomicU32::new(0),
            failures,
            failure,
            body,
        })
    }

    fn fast_retry(max_retries: u32) -> RetryPolicy {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let provider = scripted(2, ProviderError::Transient("503".into()), "1. 遭受挫折");
        let gw = Gateway::new(provider.clone()).with_retry(fast_retry(3));
        let out = gw.complete_text("p", "遭受", &CompletionParams::default()).unwrap();
        assert_eq!(out.retries_used, 2);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retries_are_capped() {
        let provider = scripted(u32::MAX, ProviderError::Transient("down".into()), "");
        let gw = Gateway::new(provider.clone()).with_retry(fast_retry(2));
        let err = gw.complete_text("p", "x", &CompletionParams::default()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { retries: 2, .. }));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);

        let provider = scripted(u32::MAX, ProviderError::Timeout, "");
        let gw = Gateway::new(provider).with_retry(fast_retry(1));
        assert_eq!(
            gw.complete_text("p", "x", &CompletionParams::default()).unwrap_err(),
            GatewayError::Timeout { retries: 1 }
        );
    }

    #[test]
    fn auth_errors_are_never_retried() {
        let provider = scripted(u32::MAX, ProviderError::Auth("bad key".into()), "");
        let gw = Gateway::new(provider.clone()).with_retry(fast_retry(5));
        assert!(matches!(
            gw.complete_text("p", "x", &CompletionParams::default()),
            Err(GatewayError::Auth(_))
        ));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_body_is_a_refusal() {
        let gw = Gateway::new(scripted(0, ProviderError::Timeout, "  \n")).with_retry(fast_retry(3));
        assert_eq!(
            gw.complete_text("p", "x", &CompletionParams::default()).unwrap_err(),
            GatewayError::Refusal
        );
    }

    #[test]
    fn params_are_validated() {
        let gw = Gateway::new(scripted(0, ProviderError::Timeout, "ok"));
        let params = CompletionParams {
            request_timeout_secs: 0.0,
            ..CompletionParams::default()
        };
        assert!(matches!(gw.complete_text("p", "x", &params), Err(GatewayError::Config(_))));
        let params = CompletionParams {
            temperature: -1.0,
            ..CompletionParams::default()
        };
        assert!(params.validate().is_err());
    }

    #[test]
    fn backoff_grows_and_caps() {
        let policy = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
        };
        assert_eq!(policy.delay(0), Duration::from_millis(100));
        assert_eq!(policy.delay(1), Duration::from_millis(200));
        assert_eq!(policy.delay(3), Duration::from_millis(800));
        assert_eq!(policy.delay(9), Duration::from_millis(1000));
    }

    #[test]
    fn audit_log_records_each_completion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let gw = Gateway::new(scripted(0, ProviderError::Timeout, "1. 遭受挫折"))
            .with_audit_log(&path, Clock::Frozen("2024-01-01T00:00:00Z".into()))
            .unwrap();
        gw.complete_text("prompt", "遭受", &CompletionParams::default()).unwrap();
        gw.complete_text("prompt", "遭受", &CompletionParams::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["indicator"], "遭受");
        assert_eq!(lines[0]["prompt_hash"], text_hash("prompt"));
        assert_eq!(lines[0]["response"], "1. 遭受挫折");
        assert!(lines[0]["latency"].is_number());
    }
}
