//! Exhaustive evaluation oracle.
//!
//! Answers a query by marking candidate entities in boolean tables driven
//! by linear scans over the raw triple list. It shares no code path with
//! [`super::eval`]: no adjacency index, no sorted-set algebra. Guarded to
//! small graphs; meant for cross-checking the indexed evaluator, not for
//! production answering.

use crate::error::{Error, Result};
use crate::kg::{Direction, KnowledgeGraph};
use crate::set::EntitySet;

use super::{FolNode, FolQuery};

/// Largest entity table the oracle will enumerate.
pub const BRUTE_FORCE_ENTITY_LIMIT: usize = 10_000;

/// Evaluates `q` by exhaustive enumeration over the entity table.
///
/// Negated branches use the same relative-complement reading as the
/// indexed evaluator: a candidate is dropped when the negated branch
/// reaches it from any of its grounded sources.
pub fn brute_force_evaluate(g: &KnowledgeGraph, q: &FolQuery) -> Result<EntitySet> {
    if g.entity_count() > BRUTE_FORCE_ENTITY_LIMIT {
        return Err(Error::BruteForceGuard {
            entities: g.entity_count(),
            limit: BRUTE_FORCE_ENTITY_LIMIT,
        });
    }
    q.root().validate()?;
    q.root().validate_ids(g)?;
    let marks = mark_node(g, q.root());
    Ok(marks
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| crate::kg::EntityId(i as u32))
        .collect())
}

fn mark_node(g: &KnowledgeGraph, node: &FolNode) -> Vec<bool> {
    let n = g.entity_count();
    match node {
        FolNode::Anchor(e) => {
            let mut marks = vec![false; n];
            marks[e.0 as usize] = true;
            marks
        }
        FolNode::Projection { child, relation } => {
            let src = mark_node(g, child);
            let mut marks = vec![false; n];
            for t in g.triples() {
                if t.relation != relation.relation {
                    continue;
                }
                match relation.direction {
                    Direction::Forward => {
                        if src[t.head.0 as usize] {
                            marks[t.tail.0 as usize] = true;
                        }
                    }
                    Direction::Inverse => {
                        if src[t.tail.0 as usize] {
                            marks[t.head.0 as usize] = true;
                        }
                    }
                }
            }
            marks
        }
        FolNode::Union(children) => {
            let mut marks = vec![false; n];
            for c in children {
                for (m, c) in marks.iter_mut().zip(mark_node(g, c)) {
                    *m |= c;
                }
            }
            marks
        }
        FolNode::Intersection(children) => {
            let mut marks = vec![true; n];
            for c in children {
                match c {
                    FolNode::Negation(inner) => {
                        for (m, c) in marks.iter_mut().zip(mark_node(g, inner)) {
                            *m &= !c;
                        }
                    }
                    plain => {
                        for (m, c) in marks.iter_mut().zip(mark_node(g, plain)) {
                            *m &= c;
                        }
                    }
                }
            }
            marks
        }
        FolNode::Negation(_) => unreachable!("validated: negation only under intersection"),
    }
}
