//! Text-completion backends with token log-probabilities: an HTTP client for
//! OpenAI-compatible endpoints plus deterministic mocks for tests. Everything
//! decodes greedily (temperature 0) and stops at the first newline by default.

pub mod http;
pub mod mock;

use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub want_logprobs: bool,
    /// When set, the backend returns per-token log-probs of this continuation
    /// conditioned on the prompt (echo scoring) instead of sampling new text.
    pub echo_continuation: Option<String>,
}

impl CompletionRequest {
    /// Greedy single-line generation.
    pub fn generate(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 64,
            temperature: 0.0,
            stop: vec!["\n".to_string()],
            want_logprobs: false,
            echo_continuation: None,
        }
    }

    /// Echo-score `continuation` under `prompt`.
    pub fn echo(prompt: impl Into<String>, continuation: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 1,
            temperature: 0.0,
            stop: Vec::new(),
            want_logprobs: true,
            echo_continuation: Some(continuation.into()),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be ≥ 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("temperature must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    /// (token, logprob) pairs; for echo requests their concatenation covers the
    /// continuation. Empty when logprobs were not requested or not available.
    pub tokens: Vec<(String, f64)>,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key; the key itself is
    /// never stored in config or logs. None for keyless local endpoints.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first request (0 = no retries).
    pub retries: u32,
    pub parallelism: usize,
    /// JSONL request/response transcript, written when set.
    pub audit_log: Option<std::path::PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".to_string(),
            model: "default".to_string(),
            api_key_env: None,
            timeout: Duration::from_secs(60),
            retries: 3,
            parallelism: 1,
            audit_log: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("retries exhausted after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("backend cannot score token log-probabilities")]
    LacksLogprobs,
    #[error("no scripted response for request: {0}")]
    ScriptMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
    fn id(&self) -> &str;
}

/// Truncate at the earliest occurrence of any stop string.
pub(crate) fn apply_stop(text: &str, stop: &[String]) -> String {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// Mean token log-probability of `continuation` given `prompt` (echo scoring).
/// Never positive for a well-behaved backend; NaN, ∞, or positive mass is
/// rejected as malformed.
pub fn average_logprob(
    backend: &dyn CompletionBackend,
    prompt: &str,
    continuation: &str,
) -> Result<f64, LlmError> {
    if continuation.is_empty() {
        return Err(LlmError::InvalidRequest(
            "cannot score an empty continuation".into(),
        ));
    }
    let resp = backend.complete(&CompletionRequest::echo(prompt, continuation))?;
    if resp.tokens.is_empty() {
        return Err(LlmError::LacksLogprobs);
    }
    let concat: String = resp.tokens.iter().map(|(t, _)| t.as_str()).collect();
    if concat != continuation && !concat.ends_with(continuation) {
        return Err(LlmError::MalformedResponse(format!(
            "echo tokens reconstruct {concat:?}, not the requested continuation"
        )));
    }
    let mut sum = 0.0;
    for &(_, lp) in &resp.tokens {
        if !lp.is_finite() || lp > 1e-6 {
            return Err(LlmError::MalformedResponse(format!(
                "token logprob {lp} out of range"
            )));
        }
        sum += lp.min(0.0);
    }
    Ok(sum / resp.tokens.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::mock::ScriptBackend;
    use super::*;

    #[test]
    fn stop_truncation() {
        assert_eq!(apply_stop("ocean\nextra", &["\n".to_string()]), "ocean");
        assert_eq!(apply_stop("no stops here", &["\n".to_string()]), "no stops here");
        assert_eq!(
            apply_stop("a END b STOP c", &["STOP".into(), "END".into()]),
            "a "
        );
    }

    #[test]
    fn average_logprob_is_the_arithmetic_mean() {
        let backend = ScriptBackend::new()
            .with_echo("two token path", &[-0.5, -1.5])
            .with_echo("single", &[-0.2]);
        assert_eq!(average_logprob(&backend, "p", "two token path").unwrap(), -1.0);
        assert_eq!(average_logprob(&backend, "p", "single").unwrap(), -0.2);
    }

    #[test]
    fn duplicated_tokens_leave_the_average_unchanged() {
        let backend = ScriptBackend::new()
            .with_echo("abab", &[-0.7, -0.7, -0.7, -0.7])
            .with_echo("ab", &[-0.7, -0.7]);
        let short = average_logprob(&backend, "p", "ab").unwrap();
        let long = average_logprob(&backend, "p", "abab").unwrap();
        assert_eq!(short, long);
    }

    #[test]
    fn bad_logprob_mass_is_rejected() {
        let backend = ScriptBackend::new().with_echo("x", &[f64::NAN]);
        assert!(matches!(
            average_logprob(&backend, "p", "x"),
            Err(LlmError::MalformedResponse(_))
        ));
        let backend = ScriptBackend::new().with_echo("x", &[0.5]);
        assert!(matches!(
            average_logprob(&backend, "p", "x"),
            Err(LlmError::MalformedResponse(_))
        ));
        let backend = ScriptBackend::new();
        assert!(matches!(
            average_logprob(&backend, "p", ""),
            Err(LlmError::InvalidRequest(_))
        ));
    }

    #[test]
    fn logprob_free_backend_surfaces_lacks_logprobs() {
        let backend = ScriptBackend::new().without_logprobs();
        assert!(matches!(
            average_logprob(&backend, "p", "path"),
            Err(LlmError::LacksLogprobs)
        ));
    }
}
