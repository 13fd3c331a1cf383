//! Render Euler tours as relational sentences: quoted node names joined by
//! `is parent of` / `is child of` phrases, optionally prefixed by a query
//! definition and a `[SEP]` marker.

use crate::euler::{Direction, EulerPath};
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalizedPath {
    pub text: String,
    pub includes_query_definition: bool,
    pub source_anchor: NodeId,
    /// Query name this rendering was made for, when the caller attaches one.
    pub query: Option<String>,
}

/// Double quotes inside a name are doubled so distinct tours stay distinct.
fn quoted(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 2);
    out.push('"');
    for c in name.chars() {
        if c == '"' {
            out.push('"');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// `"n₀" is child of "n₁" is parent of "n₂" …` following the tour's directions.
pub fn verbalize(path: &EulerPath, t: &Taxonomy) -> VerbalizedPath {
    let mut text = String::new();
    for step in &path.steps {
        match step.direction {
            Direction::Start => {}
            Direction::Ascend => text.push_str(" is child of "),
            Direction::Descend => text.push_str(" is parent of "),
        }
        text.push_str(&quoted(t.name(step.node)));
    }
    VerbalizedPath {
        text,
        includes_query_definition: false,
        source_anchor: path.anchor,
        query: None,
    }
}

/// Prefix the plain rendering with the query definition: `<def> [SEP] <path>`.
/// The definition passes through verbatim, an empty one leaves an empty prefix.
pub fn verbalize_with_query(query_definition: &str, path: &EulerPath, t: &Taxonomy) -> VerbalizedPath {
    let base = verbalize(path, t);
    VerbalizedPath {
        text: format!("{} [SEP] {}", query_definition, base.text),
        includes_query_definition: true,
        source_anchor: path.anchor,
        query: None,
    }
}
