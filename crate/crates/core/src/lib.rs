//! Taxonomy expansion engine: lineage-path ranking over a seed taxonomy plus
//! an iterative filter/retrieve/verify loop against a completions backend.

pub mod euler;
pub mod eval;
pub mod features;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod rank;
pub mod scorer;
pub mod synthetic;
pub mod taxonomy;
pub mod verbalize;

pub use euler::{euler_tour, euler_tour_excluding, Direction, EulerPath, EulerStep};
pub use eval::{
    accuracy, aggregate_multi, hit_at_k, metric_block, render_table, wu_palmer, EvalError,
    EvalReport, MetricBlock,
};
pub use features::{featurize, FeatureVector, DEFAULT_DIMENSION};
pub use llm::{
    average_logprob, CompletionBackend, CompletionRequest, CompletionResponse, EndpointConfig,
    LlmError,
};
pub use pipeline::{
    expand_all, expand_query, read_predictions_jsonl, trace_backend_requests,
    write_predictions_jsonl, write_trace_jsonl, ExpandOutcome, PipelineConfig, PipelineError,
    Prediction, PredictionStatus, Stage, TraceEvent, VerifierMode, NOT_FOUND,
};
pub use prompts::{
    arrow_path, render_filter_prompt, render_retriever_prompt, render_verifier_prompt,
    PromptBundle, PromptKind,
};
pub use rank::{chunk, rank_candidates, read_rankings_tsv, write_rankings_tsv, Chunk, RankedCandidate};
pub use scorer::{
    dynamic_margin, joint_loss, load_model, sample_training_data, save_model, train, PathSample,
    RankerError, ScorerModel, TrainReport, TrainingSample,
};
pub use taxonomy::{
    load_taxonomy, load_taxonomy_dir, normalize_name, read_edge_tsv, read_queries_tsv, EgoNet,
    NodeId, QueryRecord, Taxonomy, TaxonomyError,
};
pub use verbalize::{verbalize, verbalize_with_query, VerbalizedPath};
