use serde::Deserialize;
use serde_json::json;

use super::{CompletionParams, GatewayError, Provider, ProviderError, RetryPolicy};

pub const DEFAULT_API_KEY_ENV: &str = "EMOEVENT_API_KEY";

/// Provider settings as read from a config file. The credential itself is
/// never stored here, only the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub requests_per_minute: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_model() -> String {
    CompletionParams::default().model_id
}
fn default_temperature() -> f64 {
    CompletionParams::default().temperature
}
fn default_max_tokens() -> u32 {
    CompletionParams::default().max_output_tokens
}
fn default_timeout() -> f64 {
    CompletionParams::default().request_timeout_secs
}
fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_workers() -> usize {
    4
}
fn default_retries() -> u32 {
    RetryPolicy::default().max_retries
}
fn default_backoff() -> u64 {
    RetryPolicy::default().base_delay.as_millis() as u64
}

impl ProviderConfig {
    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            request_timeout_secs: self.request_timeout_secs,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: std::time::Duration::from_millis(self.backoff_base_ms),
            ..RetryPolicy::default()
        }
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpProvider {
    id: String,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(endpoint: &str, api_key: &str, timeout: std::time::Duration) -> Result<Self, GatewayError> {
        let url = reqwest::Url::parse(endpoint).map_err(|e| GatewayError::Config(format!("bad endpoint: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpProvider {
            id: format!("http:{}", url.host_str().unwrap_or("local")),
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            client,
        })
    }

    /// Reads the credential from the environment variable named in `config`.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        config.params().validate()?;
        Self::new(&config.endpoint, &key, config.params().timeout())
    }
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, ProviderError> {
        let body = json!({
            "model": params.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .timeout(params.timeout())
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::Transient(e.to_string())
                }
            })?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(status.to_string()));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(status.to_string()));
        }
        if !status.is_success() {
            return Err(ProviderError::Rejected(status.to_string()));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| ProviderError::Transient(format!("bad response body: {e}")))?;
        Ok(value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;
    use std::sync::Arc;
    use std::time::Duration;

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        // port 9 (discard) on loopback is closed in the test sandbox
        let provider = HttpProvider::new("http://127.0.0.1:9/v1/chat/completions", "k", Duration::from_secs(2)).unwrap();
        let gw = Gateway::new(Arc::new(provider)).with_retry(RetryPolicy {
            max_retries: 2,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        });
        match gw.complete_text("hi", "x", &CompletionParams::default()) {
            Err(GatewayError::Transport { retries, .. }) | Err(GatewayError::Timeout { retries }) => {
                assert_eq!(retries, 2)
            }
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        let config: ProviderConfig = serde_json::from_value(json!({
            "endpoint": "http://127.0.0.1:9/",
            "api_key_env": "EMOEVENT_TEST_SURELY_UNSET_KEY"
        }))
        .unwrap();
        assert!(matches!(HttpProvider::from_config(&config), Err(GatewayError::Config(_))));
        assert_eq!(config.model_id, "sparkdesk");
    }

    #[test]
    fn bad_endpoint_is_rejected() {
        assert!(HttpProvider::new("not a url", "k", Duration::from_secs(1)).is_err());
    }
}
