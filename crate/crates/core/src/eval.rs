//! Ranking and attachment metrics: Hit@k over candidate rankings, exact-match
//! accuracy, and Wu&Palmer ancestor similarity, plus query-weighted
//! aggregation across sub-taxonomies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{normalize_name, Taxonomy};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("misaligned inputs: {left} queries on one side, {right} on the other")]
    MisalignedInputs { left: usize, right: usize },
    #[error("unknown node in evaluation input: {0:?}")]
    UnknownNode(String),
}

fn check_aligned(left: usize, right: usize) -> Result<(), EvalError> {
    if left != right {
        return Err(EvalError::MisalignedInputs { left, right });
    }
    Ok(())
}

/// Fraction of queries whose gold parent appears in the first k ranked
/// candidates. A gold name missing from its ranking counts as a miss.
pub fn hit_at_k(rankings: &[Vec<String>], gold: &[String], k: usize) -> Result<f64, EvalError> {
    assert!(k >= 1, "Hit@k needs k ≥ 1");
    check_aligned(rankings.len(), gold.len())?;
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let hits = rankings
        .iter()
        .zip(gold)
        .filter(|(ranked, g)| {
            let g = normalize_name(g);
            ranked.iter().take(k).any(|c| normalize_name(c) == g)
        })
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Exact-match accuracy. None means the system abstained (NOT_FOUND) or the
/// query genuinely has no parent; two Nones agree, mixed presence disagrees.
pub fn accuracy(predicted: &[Option<String>], gold: &[Option<String>]) -> Result<f64, EvalError> {
    check_aligned(predicted.len(), gold.len())?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let correct = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| match (p, g) {
            (Some(p), Some(g)) => normalize_name(p) == normalize_name(g),
            (None, None) => true,
            _ => false,
        })
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Per-query Wu&Palmer value: 2·depth(lca)/(depth(â)+depth(a)), with
/// depth(root) = 1. Abstention scores 0 against a real gold parent and 1
/// against an absent one (correct abstention), keeping accuracy ≤ Wu&P.
fn wu_palmer_single(
    predicted: Option<&str>,
    gold: Option<&str>,
    t: &Taxonomy,
) -> Result<f64, EvalError> {
    let (p, g) = match (predicted, gold) {
        (Some(p), Some(g)) => (p, g),
        (None, None) => return Ok(1.0),
        _ => return Ok(0.0),
    };
    let p = t.require(p).map_err(|_| EvalError::UnknownNode(p.to_string()))?;
    let g = t.require(g).map_err(|_| EvalError::UnknownNode(g.to_string()))?;
    let lca = t.lca(p, g);
    Ok(2.0 * t.depth(lca) as f64 / (t.depth(p) + t.depth(g)) as f64)
}

/// Mean Wu&Palmer similarity between predicted and gold parents.
pub fn wu_palmer(
    predicted: &[Option<String>],
    gold: &[Option<String>],
    t: &Taxonomy,
) -> Result<f64, EvalError> {
    check_aligned(predicted.len(), gold.len())?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in predicted.iter().zip(gold) {
        total += wu_palmer_single(p.as_deref(), g.as_deref(), t)?;
    }
    Ok(total / predicted.len() as f64)
}

/// Metrics for one query set. `hit_at_k` is empty when no rankings were
/// supplied (expansion-only evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub query_count: usize,
    pub hit_at_k: BTreeMap<usize, f64>,
    pub accuracy: f64,
    pub wu_palmer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    /// (sub-taxonomy name, its metrics), in input order.
    pub per_taxonomy: Vec<(String, MetricBlock)>,
}

/// Metrics for one sub-taxonomy's predictions, with optional rankings for
/// Hit@k at the requested cutoffs.
pub fn metric_block(
    predicted: &[Option<String>],
    gold: &[Option<String>],
    t: &Taxonomy,
    rankings: Option<(&[Vec<String>], &[String], &[usize])>,
) -> Result<MetricBlock, EvalError> {
    let mut hits = BTreeMap::new();
    if let Some((rankings, ranking_gold, ks)) = rankings {
        for &k in ks {
            hits.insert(k, hit_at_k(rankings, ranking_gold, k)?);
        }
    }
    Ok(MetricBlock {
        query_count: predicted.len(),
        hit_at_k: hits,
        accuracy: accuracy(predicted, gold)?,
        wu_palmer: wu_palmer(predicted, gold, t)?,
    })
}

/// Query-weighted mean across sub-taxonomies. Hit@k cutoffs are averaged over
/// the blocks that report them, weighted by their query counts.
pub fn aggregate_multi(blocks: &[(String, MetricBlock)]) -> EvalReport {
    let total: usize = blocks.iter().map(|(_, b)| b.query_count).sum();
    let weight = |b: &MetricBlock| b.query_count as f64;
    let mut overall = MetricBlock {
        query_count: total,
        hit_at_k: BTreeMap::new(),
        accuracy: 0.0,
        wu_palmer: 0.0,
    };
    if total > 0 {
        overall.accuracy =
            blocks.iter().map(|(_, b)| b.accuracy * weight(b)).sum::<f64>() / total as f64;
        overall.wu_palmer =
            blocks.iter().map(|(_, b)| b.wu_palmer * weight(b)).sum::<f64>() / total as f64;
        let mut ks: Vec<usize> = blocks
            .iter()
            .flat_map(|(_, b)| b.hit_at_k.keys().copied())
            .collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let mut mass = 0.0;
            let mut value = 0.0;
            for (_, b) in blocks {
                if let Some(&v) = b.hit_at_k.get(&k) {
                    mass += weight(b);
                    value += v * weight(b);
                }
            }
            if mass > 0.0 {
                overall.hit_at_k.insert(k, value / mass);
            }
        }
    }
    EvalReport {
        overall,
        per_taxonomy: blocks.to_vec(),
    }
}

/// Aligned plain-text table: one row per sub-taxonomy plus the overall row.
pub fn render_table(report: &EvalReport) -> String {
    let mut ks: Vec<usize> = report.overall.hit_at_k.keys().copied().collect();
    ks.sort_unstable();
    let mut header = vec!["taxonomy".to_string(), "queries".to_string()];
    header.extend(ks.iter().map(|k| format!("Hit@{k}")));
    header.push("Accuracy".to_string());
    header.push("Wu&P".to_string());

    let row = |name: &str, b: &MetricBlock| -> Vec<String> {
        let mut cells = vec![name.to_string(), b.query_count.to_string()];
        cells.extend(
            ks.iter()
                .map(|k| b.hit_at_k.get(k).map_or("-".to_string(), |v| format!("{v:.3}"))),
        );
        cells.push(format!("{:.3}", b.accuracy));
        cells.push(format!("{:.3}", b.wu_palmer));
        cells
    };

    let mut rows: Vec<Vec<String>> = vec![header];
    for (name, block) in &report.per_taxonomy {
        rows.push(row(name, block));
    }
    rows.push(row("overall", &report.overall));

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, cell)| format!("{cell:<width$}", width = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}
