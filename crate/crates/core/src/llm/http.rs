//! OpenAI-compatible completions client: blocking HTTP with exponential-backoff
//! retries, a request-parallelism cap, and an optional JSONL audit transcript.
//! The API key is read from a named environment variable and placed in the
//! Authorization header only; it never reaches logs or error messages.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{
    apply_stop, CompletionBackend, CompletionRequest, CompletionResponse, EndpointConfig, LlmError,
};

const BACKOFF_BASE: Duration = Duration::from_millis(50);
const BACKOFF_CAP: Duration = Duration::from_secs(2);

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Semaphore,
    audit: Option<Mutex<std::fs::File>>,
    backend_id: String,
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Deserialize)]
struct ApiChoice {
    #[serde(default)]
    text: String,
    logprobs: Option<ApiLogprobs>,
}

#[derive(Deserialize)]
struct ApiLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, LlmError> {
        if config.parallelism == 0 {
            return Err(LlmError::InvalidRequest("parallelism must be ≥ 1".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::InvalidRequest(format!(
                    "API key environment variable {var} is not set"
                ))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("HTTP client setup failed: {e}")))?;
        let audit = match &config.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| {
                        LlmError::InvalidRequest(format!("cannot open audit log: {e}"))
                    })?,
            )),
            None => None,
        };
        Ok(HttpBackend {
            backend_id: format!("http:{}", config.model),
            limiter: Semaphore::new(config.parallelism),
            api_key,
            client,
            audit,
            config,
        })
    }

    fn body_for(&self, req: &CompletionRequest) -> serde_json::Value {
        match &req.echo_continuation {
            Some(cont) => json!({
                "model": self.config.model,
                "prompt": format!("{}{}", req.prompt, cont),
                "max_tokens": 0,
                "temperature": 0.0,
                "logprobs": 0,
                "echo": true,
            }),
            None => {
                let mut body = json!({
                    "model": self.config.model,
                    "prompt": req.prompt,
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                });
                if !req.stop.is_empty() {
                    body["stop"] = json!(req.stop);
                }
                if req.want_logprobs {
                    body["logprobs"] = json!(0);
                }
                body
            }
        }
    }

    fn audit_line(&self, entry: serde_json::Value) {
        if let Some(audit) = &self.audit {
            let mut f = audit.lock().unwrap();
            let _ = writeln!(f, "{entry}");
        }
    }

    /// One POST; Err(Some(_)) is retriable, Err(None, err) distinction is made
    /// by the caller through the returned error kind.
    fn send_once(&self, body: &serde_json::Value) -> Result<ApiResponse, (bool, LlmError)> {
        let url = format!("{}/completions", self.config.base_url.trim_end_matches('/'));
        let mut builder = self.client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                (true, LlmError::Timeout(self.config.timeout))
            } else {
                (true, LlmError::MalformedResponse(format!("transport: {e}")))
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            (true, LlmError::MalformedResponse(format!("body read: {e}")))
        })?;
        if !status.is_success() {
            let retriable = status.as_u16() == 429 || status.is_server_error();
            return Err((
                retriable,
                LlmError::Http {
                    status: status.as_u16(),
                    body: text.chars().take(300).collect(),
                },
            ));
        }
        serde_json::from_str(&text)
            .map_err(|e| (false, LlmError::MalformedResponse(format!("JSON: {e}"))))
    }

    fn parse_echo(
        &self,
        choice: ApiChoice,
        continuation: &str,
    ) -> Result<Vec<(String, f64)>, LlmError> {
        let lp = choice.logprobs.ok_or(LlmError::LacksLogprobs)?;
        if lp.tokens.is_empty() || lp.tokens.len() != lp.token_logprobs.len() {
            return Err(LlmError::LacksLogprobs);
        }
        // minimal token suffix covering the continuation text
        let mut covered = 0usize;
        let mut start = lp.tokens.len();
        while start > 0 && covered < continuation.len() {
            start -= 1;
            covered += lp.tokens[start].len();
        }
        let mut out = Vec::with_capacity(lp.tokens.len() - start);
        for (tok, maybe_lp) in lp.tokens[start..].iter().zip(&lp.token_logprobs[start..]) {
            let lp = maybe_lp.ok_or_else(|| {
                LlmError::MalformedResponse(
                    "echo logprobs missing inside the continuation span".into(),
                )
            })?;
            out.push((tok.clone(), lp));
        }
        Ok(out)
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        let body = self.body_for(req);
        let started = Instant::now();

        let mut attempts = 0u32;
        let api = loop {
            attempts += 1;
            match self.send_once(&body) {
                Ok(api) => break api,
                Err((retriable, err)) => {
                    if !retriable {
                        self.audit_line(json!({
                            "request": body,
                            "error": err.to_string(),
                            "attempts": attempts,
                        }));
                        return Err(err);
                    }
                    if attempts > self.config.retries {
                        self.audit_line(json!({
                            "request": body,
                            "error": err.to_string(),
                            "attempts": attempts,
                        }));
                        return Err(LlmError::RetriesExhausted {
                            attempts,
                            last: err.to_string(),
                        });
                    }
                    let backoff = BACKOFF_BASE
                        .saturating_mul(1u32 << (attempts - 1).min(10))
                        .min(BACKOFF_CAP);
                    std::thread::sleep(backoff);
                }
            }
        };

        let choice = api
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::MalformedResponse("response carried no choices".into()))?;

        let response = match &req.echo_continuation {
            Some(cont) => CompletionResponse {
                text: cont.clone(),
                tokens: self.parse_echo(choice, cont)?,
                backend_id: self.backend_id.clone(),
                latency: started.elapsed(),
            },
            None => {
                let tokens = match (req.want_logprobs, choice.logprobs) {
                    (true, Some(lp)) => lp
                        .tokens
                        .into_iter()
                        .zip(lp.token_logprobs)
                        .filter_map(|(t, l)| l.map(|l| (t, l)))
                        .collect(),
                    _ => Vec::new(),
                };
                CompletionResponse {
                    text: apply_stop(&choice.text, &req.stop),
                    tokens,
                    backend_id: self.backend_id.clone(),
                    latency: started.elapsed(),
                }
            }
        };
        self.audit_line(json!({
            "request": body,
            "response_text": response.text,
            "tokens": response.tokens.len(),
            "latency_ms": response.latency.as_millis() as u64,
            "attempts": attempts,
        }));
        Ok(response)
    }

    fn id(&self) -> &str {
        &self.backend_id
    }
}
