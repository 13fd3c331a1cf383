//! Prompt rendering for the three backend interactions: semantic filter,
//! parent retriever, and parent verifier. Wording lives in external template
//! files (templates/*.txt, `{{name}}` placeholders); this module only fills
//! the blanks, so the rendered text is a pure function of taxonomy state.

use crate::rank::Chunk;
use crate::taxonomy::{NodeId, Taxonomy, TaxonomyError};

/// Each template file ends with one editor-appeasing newline that is not part
/// of the prompt; the filter prompt genuinely ends "Answer: " with a space.
macro_rules! template {
    ($file:literal) => {
        include_str!(concat!("../templates/", $file))
            .strip_suffix('\n')
            .expect(concat!($file, " must end with a newline"))
    };
}

const MAX_EXAMPLE_LINES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Filter,
    Retriever,
    Verifier,
}

#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub text: String,
    /// Candidate names in the chunk's ranked order.
    pub candidate_order: Vec<String>,
    /// Arrow paths, one per candidate, same order (empty for the filter).
    pub path_strings: Vec<String>,
}

/// `<query> -> <candidate> -> … -> <root>`: the candidate's root lineage
/// prefixed with the query term.
pub fn arrow_path(query: &str, candidate: &str, t: &Taxonomy) -> Result<String, TaxonomyError> {
    let id = t.require(candidate)?;
    let mut parts = vec![query.to_string()];
    parts.extend(t.path_to_root(id).into_iter().map(|n| t.name(n).to_string()));
    Ok(parts.join(" -> "))
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in pairs {
        out = out.replace(&format!("{{{{{name}}}}}"), value);
    }
    debug_assert!(!out.contains("{{"), "unfilled placeholder in prompt");
    out
}

fn title_case(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn bullet_lines(lines: impl IntoIterator<Item = String>) -> String {
    lines
        .into_iter()
        .map(|l| format!("- {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn candidate_list(members: &[NodeId], t: &Taxonomy) -> String {
    bullet_lines(members.iter().map(|&m| t.name(m).to_string()))
}

fn definition_list(defs: &[(String, String)]) -> String {
    bullet_lines(defs.iter().map(|(name, def)| format!("{name} - {def}")))
}

fn member_defs(members: &[NodeId], t: &Taxonomy) -> Vec<(String, String)> {
    members
        .iter()
        .map(|&m| {
            (
                t.name(m).to_string(),
                t.definition(m).unwrap_or_default().to_string(),
            )
        })
        .collect()
}

/// Child/parent facts for the example section, derived from chunk members in
/// ranked order: leaves contribute nothing; a member with two or more
/// children contributes a children line; a member whose parent is neither
/// absent nor the root contributes a parent line; at most four lines total.
/// Children are listed alphabetically regardless of taxonomy file order.
fn hypernymy_examples(members: &[NodeId], t: &Taxonomy) -> Vec<String> {
    let mut lines = Vec::new();
    for &m in members {
        if t.is_leaf(m) {
            continue;
        }
        let children = t.children(m);
        if children.len() >= 2 && lines.len() < MAX_EXAMPLE_LINES {
            let mut names: Vec<&str> = children.iter().map(|&c| t.name(c)).collect();
            names.sort_unstable();
            lines.push(format!("Children of {} are: {}", t.name(m), names.join(", ")));
        }
        if let Some(p) = t.parent(m) {
            if p != t.root() && lines.len() < MAX_EXAMPLE_LINES {
                lines.push(format!("Parent of {} is: {}", t.name(m), t.name(p)));
            }
        }
        if lines.len() >= MAX_EXAMPLE_LINES {
            break;
        }
    }
    lines
}

pub fn render_filter_prompt(query: &str, chunk: &Chunk, t: &Taxonomy) -> PromptBundle {
    assert!(!chunk.members.is_empty(), "filter prompt needs a non-empty chunk");
    let defs = member_defs(&chunk.members, t);
    let text = fill(
        template!("filter.txt"),
        &[
            ("query", query),
            ("taxonomy_title", &title_case(t.name(t.root()))),
            ("candidate_list", &candidate_list(&chunk.members, t)),
            ("definition_list", &definition_list(&defs)),
        ],
    );
    PromptBundle {
        kind: PromptKind::Filter,
        text,
        candidate_order: defs.into_iter().map(|(n, _)| n).collect(),
        path_strings: Vec::new(),
    }
}

pub fn render_retriever_prompt(
    query: &str,
    query_definition: &str,
    chunk: &Chunk,
    t: &Taxonomy,
) -> PromptBundle {
    assert!(!chunk.members.is_empty(), "retriever prompt needs a non-empty chunk");
    let defs = member_defs(&chunk.members, t);
    let paths: Vec<String> = chunk
        .members
        .iter()
        .map(|&m| arrow_path(query, t.name(m), t).expect("chunk members come from the taxonomy"))
        .collect();
    let text = fill(
        template!("retriever.txt"),
        &[
            ("query", query),
            ("taxonomy", t.name(t.root())),
            ("candidate_list", &candidate_list(&chunk.members, t)),
            ("definition_list", &definition_list(&defs)),
            ("path_list", &bullet_lines(paths.iter().cloned())),
            ("query_definition", query_definition),
            ("example_list", &bullet_lines(hypernymy_examples(&chunk.members, t))),
        ],
    );
    PromptBundle {
        kind: PromptKind::Retriever,
        text,
        candidate_order: defs.into_iter().map(|(n, _)| n).collect(),
        path_strings: paths,
    }
}

/// `defs` carries (candidate, definition) pairs in ranked chunk order; the
/// query term is recovered from the head of the retrieved arrow path.
pub fn render_verifier_prompt(
    retrieved_path: &str,
    alternative_paths: &[String],
    defs: &[(String, String)],
    query_definition: &str,
    t: &Taxonomy,
) -> PromptBundle {
    assert!(!alternative_paths.is_empty(), "verifier prompt needs candidate paths");
    let query = retrieved_path.split(" -> ").next().unwrap_or_default();
    let members: Vec<NodeId> = defs
        .iter()
        .filter_map(|(name, _)| t.node_id(name))
        .collect();
    let text = fill(
        template!("verifier.txt"),
        &[
            ("query", query),
            ("retrieved_path", retrieved_path),
            ("path_list", &bullet_lines(alternative_paths.iter().cloned())),
            ("example_list", &bullet_lines(hypernymy_examples(&members, t))),
            ("definition_list", &definition_list(defs)),
            ("query_definition", query_definition),
        ],
    );
    PromptBundle {
        kind: PromptKind::Verifier,
        text,
        candidate_order: defs.iter().map(|(n, _)| n.clone()).collect(),
        path_strings: alternative_paths.to_vec(),
    }
}
