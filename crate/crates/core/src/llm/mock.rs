//! Deterministic backends for tests. Both are pure functions of request
//! content: the call log is bookkeeping only and never shapes a response.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use super::{apply_stop, CompletionBackend, CompletionRequest, CompletionResponse, LlmError};
use crate::taxonomy::{normalize_name, NodeId, Taxonomy};

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub prompt: String,
    pub echo_continuation: Option<String>,
}

/// Script mock: generation responses keyed by the exact prompt text, echo
/// logprobs keyed by the continuation. Unknown requests miss loudly unless a
/// default is installed.
#[derive(Default)]
pub struct ScriptBackend {
    responses: HashMap<String, String>,
    default_response: Option<String>,
    echo_scripts: HashMap<String, Vec<(String, f64)>>,
    default_echo_logprob: Option<f64>,
    lacks_logprobs: bool,
    calls: Mutex<Vec<CallRecord>>,
}

/// Split into `n` near-equal character runs so scripted tokens always
/// reconstruct the continuation exactly.
fn split_tokens(continuation: &str, logprobs: &[f64]) -> Vec<(String, f64)> {
    assert!(!logprobs.is_empty(), "echo script needs at least one logprob");
    let chars: Vec<char> = continuation.chars().collect();
    assert!(
        chars.len() >= logprobs.len(),
        "continuation {continuation:?} too short for {} tokens",
        logprobs.len()
    );
    let n = logprobs.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for (i, &lp) in logprobs.iter().enumerate() {
        let end = chars.len() * (i + 1) / n;
        out.push((chars[start..end].iter().collect(), lp));
        start = end;
    }
    out
}

impl ScriptBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exact prompt → raw generated text (stop strings applied at reply time).
    pub fn with_response(mut self, prompt: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.insert(prompt.into(), text.into());
        self
    }

    pub fn with_default_response(mut self, text: impl Into<String>) -> Self {
        self.default_response = Some(text.into());
        self
    }

    /// Echo request for `continuation` → these per-token logprobs.
    pub fn with_echo(mut self, continuation: impl Into<String>, logprobs: &[f64]) -> Self {
        let continuation = continuation.into();
        let tokens = split_tokens(&continuation, logprobs);
        self.echo_scripts.insert(continuation, tokens);
        self
    }

    /// Flat single-token logprob for any unscripted continuation.
    pub fn with_default_echo_logprob(mut self, logprob: f64) -> Self {
        self.default_echo_logprob = Some(logprob);
        self
    }

    /// Simulate a backend without echo-scoring support.
    pub fn without_logprobs(mut self) -> Self {
        self.lacks_logprobs = true;
        self
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    pub fn prompts_starting_with(&self, prefix: &str) -> usize {
        self.calls
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.prompt.starts_with(prefix))
            .count()
    }
}

impl CompletionBackend for ScriptBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        self.calls.lock().unwrap().push(CallRecord {
            prompt: req.prompt.clone(),
            echo_continuation: req.echo_continuation.clone(),
        });

        if let Some(cont) = &req.echo_continuation {
            if self.lacks_logprobs {
                return Err(LlmError::LacksLogprobs);
            }
            let tokens = match self.echo_scripts.get(cont) {
                Some(t) => t.clone(),
                None => match self.default_echo_logprob {
                    Some(lp) => vec![(cont.clone(), lp)],
                    None => return Err(LlmError::ScriptMiss(format!("echo {cont:?}"))),
                },
            };
            return Ok(CompletionResponse {
                text: cont.clone(),
                tokens,
                backend_id: self.id().to_string(),
                latency: Duration::ZERO,
            });
        }

        let raw = self
            .responses
            .get(&req.prompt)
            .or(self.default_response.as_ref())
            .ok_or_else(|| {
                let head: String = req.prompt.chars().take(80).collect();
                LlmError::ScriptMiss(format!("prompt starting {head:?}"))
            })?;
        Ok(CompletionResponse {
            text: apply_stop(raw, &req.stop),
            tokens: Vec::new(),
            backend_id: self.id().to_string(),
            latency: Duration::ZERO,
        })
    }

    fn id(&self) -> &str {
        "script"
    }
}

/// Noiseless oracle: holds the taxonomy and the gold parent per query, parses
/// the incoming prompt just enough to recover the query and candidate list,
/// and answers every stage consistently with the gold attachment:
///
/// - filter: YES iff the batch holds the gold parent or an ancestor of it
///   within distance 2;
/// - retriever: the gold parent when present, else NOT FOUND (a batch without
///   the gold parent offers no valid hypernym);
/// - verifier scoring: −0.1 on the gold parent's path, −2.0 on any other.
///
/// Prompt parsing relies on the standard templates' `query term '…'` /
/// `query node '…'` markers, so query names must not contain `'`.
pub struct OracleBackend {
    taxonomy: Taxonomy,
    gold: HashMap<String, String>,
    calls: Mutex<Vec<CallRecord>>,
}

impl OracleBackend {
    pub fn new(taxonomy: Taxonomy, gold_parents: &[(String, String)]) -> Self {
        let gold = gold_parents
            .iter()
            .map(|(q, p)| (normalize_name(q), normalize_name(p)))
            .collect();
        OracleBackend {
            taxonomy,
            gold,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    fn parse_query(prompt: &str) -> Result<&str, LlmError> {
        for marker in ["query term '", "query node '"] {
            if let Some(start) = prompt.find(marker) {
                let rest = &prompt[start + marker.len()..];
                if let Some(end) = rest.find('\'') {
                    return Ok(&rest[..end]);
                }
            }
        }
        Err(LlmError::MalformedResponse(
            "oracle could not locate the query name in the prompt".into(),
        ))
    }

    fn parse_candidates(prompt: &str) -> Result<Vec<&str>, LlmError> {
        let header = "List of Candidate terms:\n";
        let start = prompt.find(header).ok_or_else(|| {
            LlmError::MalformedResponse("oracle could not locate the candidate list".into())
        })?;
        let mut out = Vec::new();
        for line in prompt[start + header.len()..].lines() {
            match line.strip_prefix("- ") {
                Some(name) => out.push(name),
                None => break,
            }
        }
        Ok(out)
    }

    fn gold_parent(&self, query: &str) -> Option<NodeId> {
        self.gold
            .get(&normalize_name(query))
            .and_then(|name| self.taxonomy.node_id(name))
    }

    fn reply(&self, text: String, tokens: Vec<(String, f64)>) -> CompletionResponse {
        CompletionResponse {
            text,
            tokens,
            backend_id: self.id().to_string(),
            latency: Duration::ZERO,
        }
    }
}

impl CompletionBackend for OracleBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        req.validate()?;
        self.calls.lock().unwrap().push(CallRecord {
            prompt: req.prompt.clone(),
            echo_continuation: req.echo_continuation.clone(),
        });
        let query = Self::parse_query(&req.prompt)?;
        let gold = self.gold_parent(query);

        if let Some(cont) = &req.echo_continuation {
            // continuation is an arrow path `query -> candidate -> … -> root`
            let candidate = cont.split(" -> ").nth(1).ok_or_else(|| {
                LlmError::MalformedResponse(format!("oracle cannot read a path from {cont:?}"))
            })?;
            let is_gold = gold.is_some_and(|g| self.taxonomy.node_id(candidate) == Some(g));
            let lp = if is_gold { -0.1 } else { -2.0 };
            return Ok(self.reply(cont.clone(), vec![(cont.clone(), lp)]));
        }

        let candidates = Self::parse_candidates(&req.prompt)?;
        if req.prompt.starts_with("You are a semantic relevance expert") {
            let relevant = gold.is_some_and(|g| {
                let mut near = vec![g];
                if let Some(p) = self.taxonomy.parent(g) {
                    near.push(p);
                    if let Some(gp) = self.taxonomy.parent(p) {
                        near.push(gp);
                    }
                }
                candidates
                    .iter()
                    .any(|c| self.taxonomy.node_id(c).is_some_and(|id| near.contains(&id)))
            });
            let answer = if relevant { "Yes" } else { "No" };
            return Ok(self.reply(answer.to_string(), Vec::new()));
        }
        if req.prompt.starts_with("You are an expert in hypernymy") {
            // gold absent from the batch means no valid hypernym is on offer;
            // anything else would let a spuriously filtered batch accept a
            // wrong parent and break the oracle's accuracy guarantee
            let pick = gold
                .and_then(|g| {
                    candidates
                        .iter()
                        .find(|c| self.taxonomy.node_id(c) == Some(g))
                })
                .map_or("NOT FOUND", |c| c);
            return Ok(self.reply(pick.to_string(), Vec::new()));
        }
        Err(LlmError::MalformedResponse(
            "oracle does not recognize this prompt shape".into(),
        ))
    }

    fn id(&self) -> &str {
        "oracle"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_responses_and_stop() {
        let b = ScriptBackend::new()
            .with_response("P", "ocean\nextra")
            .with_default_response("NOT FOUND");
        let resp = b.complete(&CompletionRequest::generate("P")).unwrap();
        assert_eq!(resp.text, "ocean");
        assert_eq!(resp.latency, Duration::ZERO);
        let resp = b.complete(&CompletionRequest::generate("unknown")).unwrap();
        assert_eq!(resp.text, "NOT FOUND");
        assert_eq!(b.call_log().len(), 2);
    }

    #[test]
    fn script_miss_is_loud() {
        let b = ScriptBackend::new();
        assert!(matches!(
            b.complete(&CompletionRequest::generate("nope")),
            Err(LlmError::ScriptMiss(_))
        ));
    }

    #[test]
    fn echo_tokens_reconstruct_continuation() {
        let b = ScriptBackend::new().with_echo("abcd", &[-0.5, -1.5]);
        let resp = b.complete(&CompletionRequest::echo("p", "abcd")).unwrap();
        let concat: String = resp.tokens.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(concat, "abcd");
        assert_eq!(resp.tokens.len(), 2);
    }

    fn oracle_fixture() -> OracleBackend {
        let records: Vec<(String, String)> = [
            ("pollution", "environment"),
            ("air pollution", "pollution"),
            ("water pollution", "pollution"),
            ("marine pollution", "water pollution"),
        ]
        .iter()
        .map(|(c, p)| (c.to_string(), p.to_string()))
        .collect();
        let t = Taxonomy::from_edge_records(&records, &[]).unwrap();
        OracleBackend::new(t, &[("sewage".to_string(), "water pollution".to_string())])
    }

    #[test]
    fn oracle_filter_sees_gold_and_near_ancestors() {
        let b = oracle_fixture();
        let ask = |cands: &str| {
            let prompt = format!(
                "You are a semantic relevance expert for terms present in a taxonomy. Your task is to determine whether the set of candidate terms is a semantically relevant match for the given query term 'sewage' and 'Environment' taxonomy.\n\nList of Candidate terms:\n{cands}\n\nrest"
            );
            b.complete(&CompletionRequest::generate(prompt)).unwrap().text
        };
        assert_eq!(ask("- water pollution"), "Yes");
        assert_eq!(ask("- pollution"), "Yes"); // parent of gold
        assert_eq!(ask("- environment"), "Yes"); // grandparent of gold
        assert_eq!(ask("- air pollution\n- marine pollution"), "No");
    }

    #[test]
    fn oracle_retriever_returns_gold_else_not_found() {
        let b = oracle_fixture();
        let ask = |cands: &str| {
            let prompt = format!(
                "You are an expert in hypernymy (is-a) relationship detection for a taxonomy. Your task is to find the most appropriate candidate hypernym of the query node 'sewage' within the 'environment' taxonomy.\n\nList of Candidate terms:\n{cands}\n\nrest"
            );
            b.complete(&CompletionRequest::generate(prompt)).unwrap().text
        };
        assert_eq!(ask("- air pollution\n- water pollution"), "water pollution");
        assert_eq!(ask("- air pollution\n- pollution"), "NOT FOUND");
    }

    #[test]
    fn oracle_scores_gold_path_higher() {
        let b = oracle_fixture();
        let prompt = "You are an expert verifier of hypernymy relationship for a taxonomy using paths. You have been given the following path from query term 'sewage' to root node: sewage -> water pollution -> pollution -> environment\n\nrest";
        let gold = super::super::average_logprob(
            &b,
            prompt,
            "sewage -> water pollution -> pollution -> environment",
        )
        .unwrap();
        let other =
            super::super::average_logprob(&b, prompt, "sewage -> air pollution -> pollution -> environment")
                .unwrap();
        assert_eq!(gold, -0.1);
        assert_eq!(other, -2.0);
    }
}
