//! Modified Euler tour of a node's lineage: ascend to the root, re-walk the
//! ancestor chain back down to the parent, then visit siblings and children,
//! each interleaved with its hub node. Nodes repeat; the tour ends back at the
//! anchor's last child (or at the anchor itself when it has none).

use crate::taxonomy::{NodeId, Taxonomy};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// First step of the tour.
    Start,
    /// Moved from a child up to its canonical parent.
    Ascend,
    /// Moved from a parent down into one of its children.
    Descend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EulerStep {
    pub node: NodeId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EulerPath {
    pub anchor: NodeId,
    pub steps: Vec<EulerStep>,
}

impl EulerPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Distinct nodes visited, ordered by id.
    pub fn node_set(&self) -> BTreeSet<NodeId> {
        self.steps.iter().map(|s| s.node).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.steps.iter().map(|s| s.node)
    }
}

/// Tour the anchor's full lineage.
pub fn euler_tour(t: &Taxonomy, anchor: NodeId) -> EulerPath {
    euler_tour_excluding(t, anchor, None)
}

/// Tour with one node hidden from the sibling and children lists. Used when a
/// training query is detached from its own taxonomy: the node must not appear
/// among the tour's participants, but ancestor chains are left intact.
pub fn euler_tour_excluding(t: &Taxonomy, anchor: NodeId, excluded: Option<NodeId>) -> EulerPath {
    let keep = |id: &NodeId| Some(*id) != excluded;
    let mut seq: Vec<NodeId> = Vec::new();

    if anchor == t.root() {
        seq.push(anchor);
    } else {
        let path = t.path_to_root(anchor);
        seq.extend(path.iter().copied());
        seq.extend(path[1..path.len() - 1].iter().rev().copied());
        let parent = path[1];
        for s in t.ego(anchor).siblings.into_iter().filter(keep) {
            seq.push(s);
            seq.push(parent);
        }
        seq.push(anchor);
    }

    let children: Vec<NodeId> = t.children(anchor).iter().copied().filter(keep).collect();
    for (i, c) in children.iter().enumerate() {
        seq.push(*c);
        if i + 1 < children.len() {
            seq.push(anchor);
        }
    }

    let steps = seq
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let direction = if i == 0 {
                Direction::Start
            } else if t.parent(node) == Some(seq[i - 1]) {
                Direction::Descend
            } else {
                debug_assert_eq!(t.parent(seq[i - 1]), Some(node), "tour steps must follow edges");
                Direction::Ascend
            };
            EulerStep { node, direction }
        })
        .collect();

    EulerPath { anchor, steps }
}
