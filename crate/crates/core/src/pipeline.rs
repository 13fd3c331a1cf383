//! Query expansion: rank candidates, then walk ranked batches through the
//! filter / retrieve / verify loop until a parent is accepted or every batch
//! is exhausted. One query is strictly sequential; queries run concurrently.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::llm::{average_logprob, CompletionBackend, CompletionRequest, LlmError};
use crate::prompts::{
    arrow_path, render_filter_prompt, render_retriever_prompt, render_verifier_prompt,
};
use crate::rank::{chunk, rank_candidates, Chunk};
use crate::scorer::{RankerError, ScorerModel};
use crate::taxonomy::{normalize_name, NodeId, Taxonomy, TaxonomyError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("backend: {0}")]
    Backend(#[from] LlmError),
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("ranker: {0}")]
    Ranker(#[from] RankerError),
    #[error(
        "backend returned no token log-probabilities; rerun with verifier disabled to accept \
         retrieved parents unverified"
    )]
    VerifierNeedsLogprobs,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed predictions file {path} line {line}: {reason}")]
    MalformedPredictions {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierMode {
    /// Score every candidate path by average token log-probability.
    Logprob,
    /// Accept the retrieved parent without verification.
    Off,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Candidates per chunk (k).
    pub chunk_size: usize,
    /// Chunks concatenated into one presented batch (1 = one chunk per batch).
    pub chunks_per_round: usize,
    /// Re-asks allowed when a filter or retriever response fails to parse.
    pub max_parse_retries: usize,
    pub verifier_mode: VerifierMode,
    /// Upper bound on queries processed concurrently.
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chunk_size: 5,
            chunks_per_round: 1,
            max_parse_retries: 1,
            verifier_mode: VerifierMode::Logprob,
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        if self.chunk_size < 2 {
            return Err(RankerError::InvalidChunkSize(self.chunk_size));
        }
        assert!(self.chunks_per_round >= 1, "chunks_per_round must be ≥ 1");
        assert!(self.parallelism >= 1, "parallelism must be ≥ 1");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Filter,
    Retrieve,
    Verify,
    Remove,
    Accept,
    Discard,
}

/// One pipeline event. Payloads carry every raw completion (filter/retrieve)
/// or per-path scoring (verify), so the exact number of backend requests can
/// be reconstructed from the trace alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub query: String,
    pub stage: Stage,
    pub batch_index: usize,
    pub payload: serde_json::Value,
    /// Milliseconds since the Unix epoch; absent from predictions so those
    /// stay byte-identical across runs.
    pub timestamp: u64,
}

fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionStatus {
    Accepted,
    Exhausted,
}

pub const NOT_FOUND: &str = "NOT_FOUND";

/// Final verdict for one query. `predicted` is the accepted parent name or
/// None, which serializes as the literal NOT_FOUND sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query: String,
    #[serde(
        serialize_with = "ser_not_found",
        deserialize_with = "de_not_found"
    )]
    pub predicted: Option<String>,
    pub gold: Option<String>,
    pub status: PredictionStatus,
    /// Index of the accepting batch, or the number of batches presented when
    /// every batch was exhausted.
    pub chunk_index: usize,
    /// Prompt evaluations: one per filter or retriever completion (re-asks
    /// included) and one per verification pass.
    pub llm_calls: usize,
}

fn ser_not_found<S: serde::Serializer>(v: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(v.as_deref().unwrap_or(NOT_FOUND))
}

fn de_not_found<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let raw = String::deserialize(d)?;
    Ok(if raw == NOT_FOUND { None } else { Some(raw) })
}

struct QueryRun<'a> {
    query: String,
    definition: String,
    gold: Option<String>,
    t: &'a Taxonomy,
    backend: &'a dyn CompletionBackend,
    config: &'a PipelineConfig,
    trace: Vec<TraceEvent>,
    llm_calls: usize,
}

impl QueryRun<'_> {
    fn emit(&mut self, stage: Stage, batch_index: usize, payload: serde_json::Value) {
        self.trace.push(TraceEvent {
            query: self.query.clone(),
            stage,
            batch_index,
            payload,
            timestamp: now_millis(),
        });
    }

    fn ask(&mut self, prompt: &str) -> Result<String, LlmError> {
        self.llm_calls += 1;
        let resp = self.backend.complete(&CompletionRequest::generate(prompt))?;
        Ok(resp.text)
    }

    /// True iff the first alphabetic token of the response reads "yes".
    fn parse_filter(text: &str) -> Option<bool> {
        let word: String = text
            .chars()
            .skip_while(|c| !c.is_alphabetic())
            .take_while(|c| c.is_alphabetic())
            .collect();
        match word.to_lowercase().as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    }

    fn semantic_filter(&mut self, batch: &Chunk) -> Result<bool, LlmError> {
        let bundle = render_filter_prompt(&self.query, batch, self.t);
        let mut completions = Vec::new();
        let mut verdict = None;
        for _ in 0..=self.config.max_parse_retries {
            let text = self.ask(&bundle.text)?;
            completions.push(text.clone());
            verdict = Self::parse_filter(&text);
            if verdict.is_some() {
                break;
            }
        }
        let passed = verdict.unwrap_or(false);
        let mut payload = json!({ "passed": passed, "completions": completions });
        if verdict.is_none() {
            payload["warning"] = json!("unparseable filter response; batch treated as irrelevant");
        }
        self.emit(Stage::Filter, batch.index, payload);
        Ok(passed)
    }

    /// Some(node) for a batch member, None for NOT FOUND (literal sentinel or
    /// a response that never matched a member after the allowed re-asks).
    fn retrieve_parent(&mut self, batch: &Chunk) -> Result<Option<NodeId>, LlmError> {
        let bundle = render_retriever_prompt(&self.query, &self.definition, batch, self.t);
        let by_norm: HashMap<String, NodeId> = batch
            .members
            .iter()
            .map(|&m| (normalize_name(self.t.name(m)), m))
            .collect();
        let mut completions = Vec::new();
        let mut outcome: Option<Option<NodeId>> = None;
        for _ in 0..=self.config.max_parse_retries {
            let text = self.ask(&bundle.text)?;
            completions.push(text.clone());
            let trimmed = text.trim();
            if trimmed == "NOT FOUND" {
                outcome = Some(None);
                break;
            }
            if let Some(&id) = by_norm.get(&normalize_name(trimmed)) {
                outcome = Some(Some(id));
                break;
            }
        }
        let unparseable = outcome.is_none();
        let resolved = outcome.unwrap_or(None);
        let mut payload = json!({
            "outcome": match resolved {
                Some(id) => json!({ "candidate": self.t.name(id) }),
                None => json!("not_found"),
            },
            "completions": completions,
        });
        if unparseable {
            payload["warning"] =
                json!("response matched no batch member; treated as NOT FOUND");
        }
        self.emit(Stage::Retrieve, batch.index, payload);
        Ok(resolved)
    }

    /// Score every member's path under the verifier prompt; the retrieved
    /// candidate passes iff its path is the argmax (ties prefer the shorter
    /// path, then the lexically smaller name).
    fn verify_parent(&mut self, retrieved: NodeId, batch: &Chunk) -> Result<bool, PipelineError> {
        let paths: Vec<(NodeId, String)> = batch
            .members
            .iter()
            .map(|&m| {
                let p = arrow_path(&self.query, self.t.name(m), self.t)
                    .expect("batch members come from the taxonomy");
                (m, p)
            })
            .collect();
        let retrieved_path = &paths
            .iter()
            .find(|(m, _)| *m == retrieved)
            .expect("retrieved parent is a batch member")
            .1;
        let defs: Vec<(String, String)> = batch
            .members
            .iter()
            .map(|&m| {
                (
                    self.t.name(m).to_string(),
                    self.t.definition(m).unwrap_or_default().to_string(),
                )
            })
            .collect();
        let path_strings: Vec<String> = paths.iter().map(|(_, p)| p.clone()).collect();
        let bundle = render_verifier_prompt(
            retrieved_path,
            &path_strings,
            &defs,
            &self.definition,
            self.t,
        );
        self.llm_calls += 1;
        let mut scored = Vec::with_capacity(paths.len());
        for (m, path) in &paths {
            let lp = average_logprob(self.backend, &bundle.text, path).map_err(|e| match e {
                LlmError::LacksLogprobs => PipelineError::VerifierNeedsLogprobs,
                other => PipelineError::Backend(other),
            })?;
            scored.push((*m, path.clone(), lp));
        }
        let best = scored
            .iter()
            .max_by(|a, b| {
                a.2.partial_cmp(&b.2)
                    .expect("logprobs are finite")
                    // higher logprob wins; on ties prefer fewer path segments,
                    // then the lexically smaller candidate name
                    .then_with(|| b.1.matches(" -> ").count().cmp(&a.1.matches(" -> ").count()))
                    .then_with(|| self.t.name(b.0).cmp(self.t.name(a.0)))
            })
            .expect("batch is non-empty");
        let passed = best.0 == retrieved;
        self.emit(
            Stage::Verify,
            batch.index,
            json!({
                "passed": passed,
                "retrieved": self.t.name(retrieved),
                "best": self.t.name(best.0),
                "scores": scored
                    .iter()
                    .map(|(m, p, lp)| json!({
                        "candidate": self.t.name(*m),
                        "path": p,
                        "avg_logprob": lp,
                    }))
                    .collect::<Vec<_>>(),
            }),
        );
        Ok(passed)
    }

    fn accept(&mut self, parent: NodeId, batch_index: usize, verified: bool) -> Prediction {
        self.emit(
            Stage::Accept,
            batch_index,
            json!({ "candidate": self.t.name(parent), "verified": verified }),
        );
        Prediction {
            query: self.query.clone(),
            predicted: Some(self.t.name(parent).to_string()),
            gold: self.gold.clone(),
            status: PredictionStatus::Accepted,
            chunk_index: batch_index,
            llm_calls: self.llm_calls,
        }
    }

    fn run(&mut self, model: &ScorerModel) -> Result<Prediction, PipelineError> {
        let ranked = rank_candidates(model, self.t, &self.query, &self.definition);
        let chunks = chunk(&self.query, &ranked, self.config.chunk_size)?;
        let batches: Vec<Chunk> = chunks
            .chunks(self.config.chunks_per_round)
            .enumerate()
            .map(|(index, window)| Chunk {
                query: self.query.clone(),
                index,
                members: window.iter().flat_map(|c| c.members.clone()).collect(),
                scores: window.iter().flat_map(|c| c.scores.clone()).collect(),
            })
            .collect();
        let batch_count = batches.len();

        for mut batch in batches {
            let index = batch.index;
            if !self.semantic_filter(&batch)? {
                self.emit(Stage::Discard, index, json!({ "reason": "filter" }));
                continue;
            }
            if batch.members.len() == 1 {
                // the loop guard below never admits a lone candidate
                self.emit(Stage::Discard, index, json!({ "reason": "exhausted" }));
                continue;
            }
            while batch.members.len() > 1 {
                let retrieved = match self.retrieve_parent(&batch)? {
                    Some(id) => id,
                    None => {
                        self.emit(Stage::Discard, index, json!({ "reason": "not_found" }));
                        break;
                    }
                };
                match self.config.verifier_mode {
                    VerifierMode::Off => return Ok(self.accept(retrieved, index, false)),
                    VerifierMode::Logprob => {
                        if self.verify_parent(retrieved, &batch)? {
                            return Ok(self.accept(retrieved, index, true));
                        }
                        let pos = batch
                            .members
                            .iter()
                            .position(|&m| m == retrieved)
                            .expect("retrieved parent is a batch member");
                        batch.members.remove(pos);
                        batch.scores.remove(pos);
                        self.emit(
                            Stage::Remove,
                            index,
                            json!({ "candidate": self.t.name(retrieved) }),
                        );
                        if batch.members.len() == 1 {
                            self.emit(Stage::Discard, index, json!({ "reason": "exhausted" }));
                        }
                    }
                }
            }
        }
        Ok(Prediction {
            query: self.query.clone(),
            predicted: None,
            gold: self.gold.clone(),
            status: PredictionStatus::Exhausted,
            chunk_index: batch_count,
            llm_calls: self.llm_calls,
        })
    }
}

/// Expand one query. The trace of every stage reached so far is appended to
/// `trace` even when the run aborts with a backend error.
pub fn expand_query(
    query: &str,
    definition: &str,
    gold: Option<&str>,
    t: &Taxonomy,
    model: &ScorerModel,
    backend: &dyn CompletionBackend,
    config: &PipelineConfig,
    trace: &mut Vec<TraceEvent>,
) -> Result<Prediction, PipelineError> {
    config.validate()?;
    let mut run = QueryRun {
        query: query.to_string(),
        definition: definition.to_string(),
        gold: gold.map(str::to_string),
        t,
        backend,
        config,
        trace: Vec::new(),
        llm_calls: 0,
    };
    let result = run.run(model);
    trace.append(&mut run.trace);
    result
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryFailure {
    pub query: String,
    pub error: String,
}

#[derive(Debug)]
pub struct ExpandOutcome {
    /// Predictions in input query order; failed queries are absent.
    pub predictions: Vec<Prediction>,
    /// Traces grouped per query, also in input order.
    pub trace: Vec<TraceEvent>,
    pub failures: Vec<QueryFailure>,
}

/// Expand every query with at most `config.parallelism` in flight. Results
/// are slotted by input position, so scheduling cannot reorder them.
pub fn expand_all(
    queries: &[(String, String, Option<String>)],
    t: &Taxonomy,
    model: &ScorerModel,
    backend: &dyn CompletionBackend,
    config: &PipelineConfig,
) -> ExpandOutcome {
    type Slot = (Result<Prediction, PipelineError>, Vec<TraceEvent>);
    let slots: Mutex<Vec<Option<Slot>>> = Mutex::new((0..queries.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.parallelism.min(queries.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    return;
                }
                let (name, def, gold) = &queries[i];
                let mut trace = Vec::new();
                let result =
                    expand_query(name, def, gold.as_deref(), t, model, backend, config, &mut trace);
                slots.lock().unwrap()[i] = Some((result, trace));
            });
        }
    });

    let mut outcome = ExpandOutcome {
        predictions: Vec::with_capacity(queries.len()),
        trace: Vec::new(),
        failures: Vec::new(),
    };
    for (slot, (name, _, _)) in slots.into_inner().unwrap().into_iter().zip(queries) {
        let (result, mut trace) = slot.expect("every slot is filled before the scope ends");
        outcome.trace.append(&mut trace);
        match result {
            Ok(p) => outcome.predictions.push(p),
            Err(e) => outcome.failures.push(QueryFailure {
                query: name.clone(),
                error: e.to_string(),
            }),
        }
    }
    outcome
}

pub fn write_predictions_jsonl(path: &Path, predictions: &[Prediction]) -> Result<(), PipelineError> {
    let mut f = std::fs::File::create(path)?;
    for p in predictions {
        writeln!(f, "{}", serde_json::to_string(p).expect("prediction serializes"))?;
    }
    Ok(())
}

pub fn read_predictions_jsonl(path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            PipelineError::MalformedPredictions {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            }
        })?);
    }
    Ok(out)
}

pub fn write_trace_jsonl(path: &Path, trace: &[TraceEvent]) -> Result<(), PipelineError> {
    let mut f = std::fs::File::create(path)?;
    for ev in trace {
        writeln!(f, "{}", serde_json::to_string(ev).expect("trace event serializes"))?;
    }
    Ok(())
}

/// Number of backend requests a trace records: every filter or retriever
/// completion plus every per-path verifier scoring.
pub fn trace_backend_requests(trace: &[TraceEvent]) -> usize {
    trace
        .iter()
        .map(|ev| match ev.stage {
            Stage::Filter | Stage::Retrieve => ev.payload["completions"]
                .as_array()
                .map_or(0, |a| a.len()),
            Stage::Verify => ev.payload["scores"].as_array().map_or(0, |a| a.len()),
            _ => 0,
        })
        .sum()
}
