//! Deterministic synthetic corpora: a templated 50-node benchmark taxonomy
//! for end-to-end runs and a random-tree builder for property tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::taxonomy::{QueryRecord, Taxonomy, TaxonomyError};

/// Branch layout: (name, parent, leaf count). Leaves are spread so five
/// different parents anchor them and the deepest chain has five levels.
/// Names are single words on purpose: the featurizer keeps quoted node
/// names as one token, so a multi-word name would never share a feature
/// dimension with the plain words of a definition. Single-word names let
/// "X is a kind of alphatheory ..." collide with the tour token for the
/// node named alphatheory, which is the signal the ranker trains on.
const BRANCHES: [(&str, &str, usize); 8] = [
    ("alphalogy", "science", 0),
    ("betalogy", "science", 0),
    ("gammalogy", "science", 0),
    ("alphatheory", "alphalogy", 8),
    ("alphapraxis", "alphalogy", 8),
    ("betatheory", "betalogy", 8),
    ("gammatheory", "gammalogy", 8),
    ("microalphatheory", "alphatheory", 9),
];

/// 50 nodes, depth 5, 41 leaves, every node carrying a templated definition
/// that names its parent and grandparent (the lexical signal the ranker
/// can learn).
pub fn benchmark_taxonomy() -> Taxonomy {
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut defs: Vec<(String, String)> = vec![(
        "science".to_string(),
        "science is the root discipline of this taxonomy".to_string(),
    )];
    let mut parent_of = std::collections::BTreeMap::new();
    for (name, parent, _) in BRANCHES {
        parent_of.insert(name, parent);
    }
    for (name, parent, leaf_count) in BRANCHES {
        edges.push((name.to_string(), parent.to_string()));
        defs.push((
            name.to_string(),
            format!("{name} is the branch of {parent} devoted to {name} questions"),
        ));
        let grandparent = parent_of.get(parent).copied().unwrap_or("science");
        for i in 0..leaf_count {
            let leaf = format!("{name}{i:02}");
            edges.push((leaf.clone(), name.to_string()));
            defs.push((
                leaf.clone(),
                format!("{leaf} is a kind of {name} within {grandparent}"),
            ));
        }
    }
    Taxonomy::from_edge_records(&edges, &defs).expect("benchmark layout is well-formed")
}

/// Benchmark split: the full taxonomy minus a seeded 20% of its leaves, which
/// come back as queries with their definitions and gold parents.
pub fn benchmark_split(seed: u64) -> Result<(Taxonomy, Vec<QueryRecord>), TaxonomyError> {
    benchmark_taxonomy().split_test_leaves(0.2, seed)
}

/// Random tree with `nodes` nodes: node i attaches to a uniform pick among
/// nodes 0..i, so every shape from a chain to a star is reachable.
pub fn random_tree(nodes: usize, seed: u64) -> Taxonomy {
    assert!(nodes >= 2, "a tree needs a root and at least one child");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(String, String)> = (1..nodes)
        .map(|i| (format!("n{i}"), format!("n{}", rng.random_range(0..i))))
        .collect();
    Taxonomy::from_edge_records(&edges, &[]).expect("random parent indices form a tree")
}
