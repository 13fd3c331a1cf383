//! Rank every existing node as a candidate parent for a query, then slice the
//! ranking into fixed-size chunks for the LLM stages.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::euler::euler_tour;
use crate::scorer::{score, RankerError, ScorerModel};
use crate::taxonomy::{NodeId, Taxonomy};
use crate::verbalize::verbalize_with_query;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub node: NodeId,
    pub score: f64,
}

/// Score f(P_v(q, P_p)) for every node p and sort descending; ties broken by
/// candidate name so identical scores still give a reproducible chunk layout.
pub fn rank_candidates(
    m: &ScorerModel,
    t: &Taxonomy,
    query_name: &str,
    query_definition: &str,
) -> Vec<RankedCandidate> {
    let mut scored: Vec<(RankedCandidate, &str)> = t
        .node_ids()
        .map(|p| {
            let tour = euler_tour(t, p);
            let mut v = verbalize_with_query(query_definition, &tour, t);
            v.query = Some(query_name.to_string());
            (
                RankedCandidate {
                    node: p,
                    score: score(m, &v.text),
                },
                t.name(p),
            )
        })
        .collect();
    scored.sort_by(|(a, an), (b, bn)| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| an.cmp(bn))
    });
    scored.into_iter().map(|(c, _)| c).collect()
}

/// A contiguous window of the ranking, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub query: String,
    pub index: usize,
    pub members: Vec<NodeId>,
    pub scores: Vec<f64>,
}

/// ⌈|ranked|/k⌉ chunks of k members each, except possibly the last.
pub fn chunk(query: &str, ranked: &[RankedCandidate], k: usize) -> Result<Vec<Chunk>, RankerError> {
    if k < 2 {
        return Err(RankerError::InvalidChunkSize(k));
    }
    Ok(ranked
        .chunks(k)
        .enumerate()
        .map(|(index, window)| Chunk {
            query: query.to_string(),
            index,
            members: window.iter().map(|c| c.node).collect(),
            scores: window.iter().map(|c| c.score).collect(),
        })
        .collect())
}

/// `query<TAB>rank<TAB>candidate<TAB>score` rows, rank 1-based, one block per
/// query in input order.
pub fn write_rankings_tsv(
    path: &Path,
    rankings: &[(String, Vec<RankedCandidate>)],
    t: &Taxonomy,
) -> Result<(), RankerError> {
    let mut f = fs::File::create(path)?;
    for (query, ranked) in rankings {
        for (i, c) in ranked.iter().enumerate() {
            writeln!(f, "{}\t{}\t{}\t{:.6}", query, i + 1, t.name(c.node), c.score)?;
        }
    }
    Ok(())
}

/// Read rankings back as (query, ordered candidate names) blocks.
pub fn read_rankings_tsv(path: &Path) -> Result<Vec<(String, Vec<String>)>, RankerError> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            continue;
        }
        if out.last().map(|(q, _)| q.as_str()) != Some(fields[0]) {
            out.push((fields[0].to_string(), Vec::new()));
        }
        out.last_mut().unwrap().1.push(fields[2].to_string());
    }
    Ok(out)
}
