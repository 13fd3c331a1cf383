//! The six subcommands. Each one loads what it needs through RunConfig,
//! writes its artifacts under the output directory, and prints a single
//! summary line (tables for rank/eval) to stdout.

use std::fs;
use std::io::Write;

use taxograft_core::llm::http::HttpBackend;
use taxograft_core::llm::mock::OracleBackend;
use taxograft_core::taxonomy::{read_defs_tsv, write_defs_tsv, write_edges_tsv, write_queries_tsv};
use taxograft_core::{
    expand_all, hit_at_k, load_taxonomy, metric_block, rank_candidates, read_predictions_jsonl,
    read_queries_tsv, read_rankings_tsv, render_table, sample_training_data, write_predictions_jsonl,
    write_rankings_tsv, write_trace_jsonl, CompletionBackend, EvalReport, PredictionStatus,
    QueryRecord, RankedCandidate, Taxonomy,
};

use crate::config::RunConfig;
use crate::CliError;

fn load(cfg: &RunConfig) -> Result<Taxonomy, CliError> {
    let edges = cfg.require_path("edges")?;
    let defs = cfg.optional_path("definitions");
    Ok(load_taxonomy(&edges, defs.as_deref())?)
}

fn load_queries(cfg: &RunConfig) -> Result<Vec<QueryRecord>, CliError> {
    Ok(read_queries_tsv(&cfg.require_path("queries")?)?)
}

fn load_model(cfg: &RunConfig) -> Result<taxograft_core::ScorerModel, CliError> {
    let path = cfg.require_path("model")?;
    if !path.exists() {
        return Err(CliError::config(format!(
            "model file {} not found; run `taxograft train` first or point model= at a saved one",
            path.display()
        )));
    }
    Ok(taxograft_core::load_model(&path)?)
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let t = load(cfg)?;
    if let Some(defs) = cfg.optional_path("definitions") {
        let covered = read_defs_tsv(&defs)?
            .iter()
            .filter(|(name, _)| t.node_id(name).is_some())
            .count();
        println!(
            "nodes={} edges={} depth={} definitions={}",
            t.len(),
            t.edge_count(),
            t.max_depth(),
            covered
        );
    } else {
        println!("nodes={} edges={} depth={}", t.len(), t.edge_count(), t.max_depth());
    }
    Ok(())
}

pub fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed("split")?;
    let fraction: f64 = cfg.parse("split_fraction")?;
    let t = load(cfg)?;
    let (train, queries) = t.split_test_leaves(fraction, seed)?;
    let dir = cfg.out_dir();
    write_edges_tsv(&dir.join("train.edges.tsv"), &train.edge_records())?;
    let defs = train.definition_records();
    if !defs.is_empty() {
        write_defs_tsv(&dir.join("train.defs.tsv"), &defs)?;
    }
    write_queries_tsv(&dir.join("queries.tsv"), &queries)?;
    println!(
        "train_nodes={} train_edges={} queries={} out={}",
        train.len(),
        train.edge_count(),
        queries.len(),
        dir.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed("train")?;
    let t = load(cfg)?;
    let model = cfg.scorer_model(seed)?;
    let negatives: usize = cfg.parse("negatives")?;
    let samples = sample_training_data(&t, negatives, seed)?;
    let report = taxograft_core::train(&model, &samples)?;

    let model_path = cfg.require_path("model")?;
    if let Some(parent) = model_path.parent() {
        fs::create_dir_all(parent)?;
    }
    taxograft_core::save_model(&report.model, &model_path)?;
    let mut trace = fs::File::create(cfg.out_dir().join("loss_trace.tsv"))?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(trace, "{}\t{loss:.6}", epoch + 1)?;
    }
    println!(
        "samples={} epochs={} first_loss={:.4} last_loss={:.4} model={}",
        samples.len(),
        report.epoch_losses.len(),
        report.epoch_losses.first().unwrap_or(&0.0),
        report.epoch_losses.last().unwrap_or(&0.0),
        model_path.display()
    );
    Ok(())
}

pub fn rank(cfg: &RunConfig) -> Result<(), CliError> {
    let t = load(cfg)?;
    let queries = load_queries(cfg)?;
    let model = load_model(cfg)?;
    let rankings: Vec<(String, Vec<RankedCandidate>)> = queries
        .iter()
        .map(|q| (q.name.clone(), rank_candidates(&model, &t, &q.name, &q.definition)))
        .collect();
    let path = cfg.out_dir().join("rankings.tsv");
    write_rankings_tsv(&path, &rankings, &t)?;

    // Hit@k over the queries that carry a gold parent
    let mut name_lists = Vec::new();
    let mut gold = Vec::new();
    for (q, (_, ranked)) in queries.iter().zip(&rankings) {
        if let Some(g) = &q.gold_parent {
            name_lists.push(ranked.iter().map(|c| t.name(c.node).to_string()).collect::<Vec<_>>());
            gold.push(g.clone());
        }
    }
    let mut line = format!("queries={} scored={}", queries.len(), gold.len());
    for k in cfg.hit_ks()? {
        let value = if gold.is_empty() { 0.0 } else { hit_at_k(&name_lists, &gold, k)? };
        line.push_str(&format!(" hit@{k}={value:.3}"));
    }
    line.push_str(&format!(" rankings={}", path.display()));
    println!("{line}");
    fs::write(cfg.out_dir().join("rank_report.txt"), format!("{line}\n"))?;
    Ok(())
}

pub fn expand(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.seed("expand")?;
    let t = load(cfg)?;
    let queries = load_queries(cfg)?;
    let model = load_model(cfg)?;
    let pipeline_cfg = cfg.pipeline_config()?;

    let backend: Box<dyn CompletionBackend> = match cfg.backend_kind()? {
        "http" => Box::new(HttpBackend::new(cfg.endpoint_config()?)?),
        _ => {
            let gold: Vec<(String, String)> = queries
                .iter()
                .filter_map(|q| q.gold_parent.clone().map(|g| (q.name.clone(), g)))
                .collect();
            Box::new(OracleBackend::new(t.clone(), &gold))
        }
    };

    let inputs: Vec<(String, String, Option<String>)> = queries
        .iter()
        .map(|q| (q.name.clone(), q.definition.clone(), q.gold_parent.clone()))
        .collect();
    let outcome = expand_all(&inputs, &t, &model, backend.as_ref(), &pipeline_cfg);

    let predictions_path = cfg.require_path("predictions")?;
    let trace_path = cfg.require_path("trace")?;
    write_predictions_jsonl(&predictions_path, &outcome.predictions)?;
    write_trace_jsonl(&trace_path, &outcome.trace)?;

    let accepted =
        outcome.predictions.iter().filter(|p| p.status == PredictionStatus::Accepted).count();
    let calls: usize = outcome.predictions.iter().map(|p| p.llm_calls).sum();
    println!(
        "queries={} accepted={} exhausted={} failures={} llm_calls={} predictions={}",
        inputs.len(),
        accepted,
        outcome.predictions.len() - accepted,
        outcome.failures.len(),
        calls,
        predictions_path.display()
    );
    if let Some(first) = outcome.failures.first() {
        return Err(CliError::Domain {
            kind: "backend",
            message: format!(
                "{} of {} queries failed; first: {}: {}",
                outcome.failures.len(),
                inputs.len(),
                first.query,
                first.error
            ),
        });
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let t = load(cfg)?;
    let predictions = read_predictions_jsonl(&cfg.require_path("predictions")?)?;
    let predicted: Vec<Option<String>> = predictions.iter().map(|p| p.predicted.clone()).collect();
    let gold: Vec<Option<String>> = predictions.iter().map(|p| p.gold.clone()).collect();

    // Hit@k only when a rankings file is supplied; gold comes from the
    // predictions, matched per query
    let ks = cfg.hit_ks()?;
    let ranking_data = match cfg.optional_path("rankings") {
        Some(path) => {
            let mut lists = Vec::new();
            let mut list_gold = Vec::new();
            for (query, names) in read_rankings_tsv(&path)? {
                let matched = predictions
                    .iter()
                    .find(|p| p.query == query)
                    .and_then(|p| p.gold.clone());
                if let Some(g) = matched {
                    lists.push(names);
                    list_gold.push(g);
                }
            }
            Some((lists, list_gold))
        }
        None => None,
    };
    let block = match &ranking_data {
        Some((lists, list_gold)) => {
            metric_block(&predicted, &gold, &t, Some((lists, list_gold, &ks)))?
        }
        None => metric_block(&predicted, &gold, &t, None)?,
    };

    let table = render_table(&EvalReport { overall: block, per_taxonomy: Vec::new() });
    println!("{table}");
    fs::write(cfg.out_dir().join("eval_report.txt"), format!("{table}\n"))?;
    Ok(())
}
