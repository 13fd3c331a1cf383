//! Seed taxonomy: a rooted concept hierarchy loaded from child→parent edge lists.
//!
//! Input data may be a DAG (a child listed with several parents). Every lineage
//! operation runs on the canonical tree: the first parent seen in file order is
//! the canonical one, later parents are retained only as extra edges for
//! statistics and round-tripping.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Handle into one taxonomy's node table. Minted by the owning [`Taxonomy`];
/// passing a handle from a different taxonomy is a contract violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    definition: Option<String>,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

/// A node's immediate surroundings on the canonical tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoNet {
    pub parent: Option<NodeId>,
    /// Parent's other children, in insertion order.
    pub siblings: Vec<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("cycle detected through node {0:?}")]
    CycleDetected(String),
    #[error("multiple roots: {}", .0.join(", "))]
    MultipleRoots(Vec<String>),
    #[error("no root node (input empty or every node has a parent)")]
    NoRoot,
    #[error("duplicate name {0:?} after normalization")]
    DuplicateName(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node name empty after normalization (raw {0:?})")]
    InvalidName(String),
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("split fraction must lie in (0,1), got {0}")]
    InvalidFraction(f64),
    #[error("split would select no test leaves (need fraction·|leaves| ≥ 1)")]
    EmptyTaxonomy,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase, trim, and collapse internal whitespace runs to single spaces.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// A held-out concept to attach: name and definition verbatim, gold parent
/// recorded when known (splits know it, fresh queries may not).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub name: String,
    pub definition: String,
    pub gold_parent: Option<String>,
}

#[derive(Clone)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    by_name: HashMap<String, NodeId>,
    root: NodeId,
    /// Accepted edge records (child, parent) in input order, duplicates dropped.
    /// Replaying this list reconstructs the taxonomy exactly.
    edges: Vec<(NodeId, NodeId)>,
}

impl Taxonomy {
    /// Build from (child, parent) name pairs in file order plus (term, definition)
    /// rows. Exact duplicate edges are ignored; a second parent for a child is a
    /// non-canonical extra edge. Definitions for unknown terms are dropped, the
    /// last row wins for a term.
    pub fn from_edge_records(
        edges: &[(String, String)],
        defs: &[(String, String)],
    ) -> Result<Self, TaxonomyError> {
        let mut nodes: Vec<Node> = Vec::new();
        let mut by_name: HashMap<String, NodeId> = HashMap::new();
        let mut intern = |raw: &str, nodes: &mut Vec<Node>| -> Result<NodeId, TaxonomyError> {
            let name = normalize_name(raw);
            if name.is_empty() {
                return Err(TaxonomyError::InvalidName(raw.to_string()));
            }
            if let Some(&id) = by_name.get(&name) {
                return Ok(id);
            }
            let id = NodeId(nodes.len() as u32);
            nodes.push(Node {
                name: name.clone(),
                definition: None,
                parent: None,
                children: Vec::new(),
            });
            by_name.insert(name, id);
            Ok(id)
        };

        let mut accepted: Vec<(NodeId, NodeId)> = Vec::new();
        let mut seen: HashSet<(NodeId, NodeId)> = HashSet::new();
        for (child_raw, parent_raw) in edges {
            let child = intern(child_raw, &mut nodes)?;
            let parent = intern(parent_raw, &mut nodes)?;
            if !seen.insert((child, parent)) {
                continue;
            }
            accepted.push((child, parent));
            if nodes[child.idx()].parent.is_none() {
                nodes[child.idx()].parent = Some(parent);
                nodes[parent.idx()].children.push(child);
            }
        }

        if nodes.is_empty() {
            return Err(TaxonomyError::NoRoot);
        }

        // Kahn over the full edge set (canonical + extra), parent→child direction.
        let mut in_deg = vec![0usize; nodes.len()];
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); nodes.len()];
        for &(child, parent) in &accepted {
            in_deg[child.idx()] += 1;
            adj[parent.idx()].push(child);
        }
        let mut queue: Vec<NodeId> = (0..nodes.len() as u32)
            .map(NodeId)
            .filter(|id| in_deg[id.idx()] == 0)
            .collect();
        let mut processed = 0usize;
        while let Some(id) = queue.pop() {
            processed += 1;
            for &c in &adj[id.idx()] {
                in_deg[c.idx()] -= 1;
                if in_deg[c.idx()] == 0 {
                    queue.push(c);
                }
            }
        }
        if processed < nodes.len() {
            let stuck = (0..nodes.len()).find(|&i| in_deg[i] > 0).unwrap();
            return Err(TaxonomyError::CycleDetected(nodes[stuck].name.clone()));
        }

        let roots: Vec<NodeId> = (0..nodes.len() as u32)
            .map(NodeId)
            .filter(|id| nodes[id.idx()].parent.is_none())
            .collect();
        let root = match roots.as_slice() {
            [] => return Err(TaxonomyError::NoRoot),
            [one] => *one,
            many => {
                return Err(TaxonomyError::MultipleRoots(
                    many.iter().map(|id| nodes[id.idx()].name.clone()).collect(),
                ))
            }
        };

        for (term, def) in defs {
            if let Some(&id) = by_name.get(&normalize_name(term)) {
                nodes[id.idx()].definition = Some(def.clone());
            }
        }

        Ok(Taxonomy {
            nodes,
            by_name,
            root,
            edges: accepted,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total accepted edges, extra (non-canonical) parents included.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.idx()].name
    }

    pub fn definition(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.idx()].definition.as_deref()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.idx()].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.idx()].children
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].children.is_empty()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// Normalized name lookup.
    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(&normalize_name(name)).copied()
    }

    pub fn require(&self, name: &str) -> Result<NodeId, TaxonomyError> {
        self.node_id(name)
            .ok_or_else(|| TaxonomyError::UnknownNode(name.to_string()))
    }

    /// Childless nodes in id order (the root is included if it has no children).
    pub fn leaves(&self) -> Vec<NodeId> {
        self.node_ids().filter(|&id| self.is_leaf(id)).collect()
    }

    pub fn ego(&self, id: NodeId) -> EgoNet {
        let parent = self.parent(id);
        let siblings = match parent {
            Some(p) => self
                .children(p)
                .iter()
                .copied()
                .filter(|&c| c != id)
                .collect(),
            None => Vec::new(),
        };
        EgoNet {
            parent,
            siblings,
            children: self.children(id).to_vec(),
        }
    }

    /// `[n, parent(n), …, root]`, both ends inclusive.
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path
    }

    /// depth(root) = 1.
    pub fn depth(&self, id: NodeId) -> usize {
        self.path_to_root(id).len()
    }

    pub fn max_depth(&self) -> usize {
        self.node_ids().map(|id| self.depth(id)).max().unwrap_or(0)
    }

    /// Deepest node lying on both canonical root-paths.
    pub fn lca(&self, a: NodeId, b: NodeId) -> NodeId {
        let ancestors: HashSet<NodeId> = self.path_to_root(a).into_iter().collect();
        let mut cur = b;
        loop {
            if ancestors.contains(&cur) {
                return cur;
            }
            cur = self.parent(cur).expect("root is a common ancestor");
        }
    }

    /// Edge records (child name, parent name) in accepted input order.
    /// Feeding these back into [`Taxonomy::from_edge_records`] rebuilds an
    /// identical taxonomy.
    pub fn edge_records(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(c, p)| (self.name(c).to_string(), self.name(p).to_string()))
            .collect()
    }

    /// Definition records (term, definition) in node id order.
    pub fn definition_records(&self) -> Vec<(String, String)> {
        self.node_ids()
            .filter_map(|id| {
                self.definition(id)
                    .map(|d| (self.name(id).to_string(), d.to_string()))
            })
            .collect()
    }

    /// Remove ⌊fraction·|leaves|⌋ leaves uniformly at random (seeded) and turn
    /// them into queries with their gold parent recorded. The root is never a
    /// split candidate. Queries come back in node id order.
    pub fn split_test_leaves(
        &self,
        fraction: f64,
        seed: u64,
    ) -> Result<(Taxonomy, Vec<QueryRecord>), TaxonomyError> {
        use rand::SeedableRng;

        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(TaxonomyError::InvalidFraction(fraction));
        }
        let leaves: Vec<NodeId> = self
            .leaves()
            .into_iter()
            .filter(|&id| id != self.root)
            .collect();
        let count = (fraction * leaves.len() as f64).floor() as usize;
        if count == 0 {
            return Err(TaxonomyError::EmptyTaxonomy);
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let picked = rand::seq::index::sample(&mut rng, leaves.len(), count);
        let mut removed: Vec<NodeId> = picked.iter().map(|i| leaves[i]).collect();
        removed.sort();
        let removed_set: HashSet<NodeId> = removed.iter().copied().collect();

        let queries = removed
            .iter()
            .map(|&id| QueryRecord {
                name: self.name(id).to_string(),
                definition: self.definition(id).unwrap_or("").to_string(),
                gold_parent: self.parent(id).map(|p| self.name(p).to_string()),
            })
            .collect();

        let kept_edges: Vec<(String, String)> = self
            .edges
            .iter()
            .filter(|(c, p)| !removed_set.contains(c) && !removed_set.contains(p))
            .map(|&(c, p)| (self.name(c).to_string(), self.name(p).to_string()))
            .collect();
        let kept_defs: Vec<(String, String)> = self
            .definition_records()
            .into_iter()
            .filter(|(term, _)| {
                self.node_id(term)
                    .map(|id| !removed_set.contains(&id))
                    .unwrap_or(false)
            })
            .collect();
        let train = Taxonomy::from_edge_records(&kept_edges, &kept_defs)?;
        Ok((train, queries))
    }
}

impl PartialEq for Taxonomy {
    /// Structural equality at the name level: same root, same nodes with the
    /// same parents/children/definitions in order, same edge record sequence.
    fn eq(&self, other: &Self) -> bool {
        if self.len() != other.len() || self.name(self.root) != other.name(other.root) {
            return false;
        }
        let names = |t: &Taxonomy, ids: &[NodeId]| -> Vec<String> {
            ids.iter().map(|&i| t.name(i).to_string()).collect()
        };
        for id in self.node_ids() {
            let Some(oid) = other.node_id(self.name(id)) else {
                return false;
            };
            if self.definition(id) != other.definition(oid) {
                return false;
            }
            if self.parent(id).map(|p| self.name(p)) != other.parent(oid).map(|p| other.name(p)) {
                return false;
            }
            if names(self, self.children(id)) != names(other, other.children(oid)) {
                return false;
            }
        }
        self.edge_records() == other.edge_records()
    }
}

impl fmt::Debug for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Taxonomy")
            .field("nodes", &self.len())
            .field("edges", &self.edge_count())
            .field("root", &self.name(self.root))
            .finish()
    }
}

fn tsv_rows(path: &Path, want_cols: usize) -> Result<Vec<Vec<String>>, TaxonomyError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < want_cols {
            return Err(TaxonomyError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                reason: format!("expected {} tab-separated fields, got {}", want_cols, fields.len()),
            });
        }
        rows.push(fields.into_iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Read a `child<TAB>parent` edge file. Blank lines and `#` comments are skipped.
pub fn read_edge_tsv(path: &Path) -> Result<Vec<(String, String)>, TaxonomyError> {
    Ok(tsv_rows(path, 2)?
        .into_iter()
        .map(|mut r| (std::mem::take(&mut r[0]), std::mem::take(&mut r[1])))
        .collect())
}

/// Read a `term<TAB>definition` file. Definitions are kept verbatim.
pub fn read_defs_tsv(path: &Path) -> Result<Vec<(String, String)>, TaxonomyError> {
    Ok(tsv_rows(path, 2)?
        .into_iter()
        .map(|mut r| (std::mem::take(&mut r[0]), std::mem::take(&mut r[1])))
        .collect())
}

/// Read a `name<TAB>definition<TAB>gold_parent` query file; the third column may
/// be missing or empty when the gold parent is unknown. Query names must be
/// unique after normalization.
pub fn read_queries_tsv(path: &Path) -> Result<Vec<QueryRecord>, TaxonomyError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for mut row in tsv_rows(path, 2)? {
        let gold = row.get(2).map(|s| s.trim()).filter(|s| !s.is_empty());
        let rec = QueryRecord {
            gold_parent: gold.map(str::to_string),
            definition: std::mem::take(&mut row[1]),
            name: std::mem::take(&mut row[0]),
        };
        if !seen.insert(normalize_name(&rec.name)) {
            return Err(TaxonomyError::DuplicateName(rec.name));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_edges_tsv(path: &Path, records: &[(String, String)]) -> Result<(), TaxonomyError> {
    let mut f = fs::File::create(path)?;
    for (c, p) in records {
        writeln!(f, "{}\t{}", c, p)?;
    }
    Ok(())
}

pub fn write_defs_tsv(path: &Path, records: &[(String, String)]) -> Result<(), TaxonomyError> {
    let mut f = fs::File::create(path)?;
    for (t, d) in records {
        writeln!(f, "{}\t{}", t, d)?;
    }
    Ok(())
}

pub fn write_queries_tsv(path: &Path, queries: &[QueryRecord]) -> Result<(), TaxonomyError> {
    let mut f = fs::File::create(path)?;
    for q in queries {
        writeln!(
            f,
            "{}\t{}\t{}",
            q.name,
            q.definition,
            q.gold_parent.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Load one taxonomy from an edge file and an optional definitions file.
pub fn load_taxonomy(edges: &Path, defs: Option<&Path>) -> Result<Taxonomy, TaxonomyError> {
    let edge_records = read_edge_tsv(edges)?;
    let def_records = match defs {
        Some(p) => read_defs_tsv(p)?,
        None => Vec::new(),
    };
    Taxonomy::from_edge_records(&edge_records, &def_records)
}

/// Load a directory of per-taxonomy file pairs `<stem>.edges.tsv` plus optional
/// `<stem>.defs.tsv`, sorted by stem. Used for WordNet-style corpora of many
/// small sub-taxonomies.
pub fn load_taxonomy_dir(dir: &Path) -> Result<Vec<(String, Taxonomy)>, TaxonomyError> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(".edges.tsv") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    let mut out = Vec::new();
    for stem in stems {
        let edges = dir.join(format!("{stem}.edges.tsv"));
        let defs = dir.join(format!("{stem}.defs.tsv"));
        let t = load_taxonomy(&edges, defs.exists().then_some(defs.as_path()))?;
        out.push((stem, t));
    }
    Ok(out)
}
