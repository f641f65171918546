//! Set-algebra evaluation of query trees.
//!
//! Evaluation is bottom-up over the operator tree. At an intersection,
//! non-negated children are intersected first (smallest result first) and
//! negated children are applied last as a relative complement; negation is
//! never materialized against the full entity set.

use crate::error::Result;
use crate::kg::{DirectedRelation, KnowledgeGraph};
use crate::set::EntitySet;

use super::{FolNode, FolQuery};

/// Entities reachable from `input` through `dr`: the union of per-entity
/// neighbor sets (heads for the inverse direction).
pub fn project(g: &KnowledgeGraph, input: &EntitySet, dr: DirectedRelation) -> Result<EntitySet> {
    if (dr.relation.0 as usize) >= g.relation_count() {
        return Err(crate::error::Error::UnknownId {
            kind: "relation",
            id: dr.relation.0,
        });
    }
    // Sets are sorted, so the largest id bounds them all.
    if let Some(max) = input.as_slice().last() {
        if (max.0 as usize) >= g.entity_count() {
            return Err(crate::error::Error::UnknownId {
                kind: "entity",
                id: max.0,
            });
        }
    }
    let mut out: Vec<_> = Vec::new();
    for e in input {
        out.extend_from_slice(g.neighbor_slice(e, dr));
    }
    Ok(EntitySet::from_ids(out))
}

/// Evaluates an instantiated query to its answer set.
///
/// Pure in `(g, q)`: repeated calls return identical sets. Empty
/// intermediate results propagate without error.
pub fn evaluate(g: &KnowledgeGraph, q: &FolQuery) -> Result<EntitySet> {
    q.root().validate()?;
    q.root().validate_ids(g)?;
    Ok(eval_node(g, q.root()))
}

pub(crate) fn eval_node(g: &KnowledgeGraph, node: &FolNode) -> EntitySet {
    match node {
        FolNode::Anchor(e) => EntitySet::singleton(*e),
        FolNode::Projection { child, relation } => {
            let input = eval_node(g, child);
            let mut out: Vec<_> = Vec::new();
            for e in &input {
                out.extend_from_slice(g.neighbor_slice(e, *relation));
            }
            EntitySet::from_ids(out)
        }
        FolNode::Union(children) => {
            let mut acc = EntitySet::new();
            for c in children {
                acc = acc.union(&eval_node(g, c));
            }
            acc
        }
        FolNode::Intersection(children) => {
            let mut plain: Vec<EntitySet> = children
                .iter()
                .filter(|c| !matches!(c, FolNode::Negation(_)))
                .map(|c| eval_node(g, c))
                .collect();
            plain.sort_by_key(EntitySet::len);
            let mut iter = plain.into_iter();
            let mut acc = iter
                .next()
                .expect("validated: at least one non-negated child");
            for s in iter {
                if acc.is_empty() {
                    break;
                }
                acc = acc.intersection(&s);
            }
            if !acc.is_empty() {
                for c in children {
                    if let FolNode::Negation(inner) = c {
                        acc = acc.difference(&eval_node(g, inner));
                    }
                }
            }
            acc
        }
        FolNode::Negation(_) => {
            unreachable!("validated: negation only under intersection")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fol::Bindings;
    use crate::kg::{Direction, EntityId, RelationId};
    use crate::patterns::PatternTag;

    fn fwd(g: &KnowledgeGraph, r: &str) -> DirectedRelation {
        DirectedRelation::forward(g.relation_id(r).unwrap())
    }

    fn labels(g: &KnowledgeGraph, s: &EntitySet) -> Vec<String> {
        s.iter().map(|e| g.entity_label(e).to_string()).collect()
    }

    #[test]
    fn project_empty_input() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let out = project(&g, &EntitySet::new(), fwd(&g, "r")).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn project_unions_with_dedup() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b"), ("c", "r", "b")]);
        let input = EntitySet::from_ids(vec![g.entity_id("a").unwrap(), g.entity_id("c").unwrap()]);
        let out = project(&g, &input, fwd(&g, "r")).unwrap();
        assert_eq!(labels(&g, &out), vec!["b"]);
    }

    #[test]
    fn project_matches_per_element_scan() {
        use rand::{Rng, SeedableRng};
        let g = crate::testutil::random_graph(1000, 21);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let input: EntitySet = (0..rng.gen_range(0..20))
                .map(|_| EntityId(rng.gen_range(0..g.entity_count() as u32)))
                .collect();
            let r = RelationId(rng.gen_range(0..g.relation_count() as u32));
            for direction in [Direction::Forward, Direction::Inverse] {
                let dr = DirectedRelation {
                    relation: r,
                    direction,
                };
                let mut expected = EntitySet::new();
                for e in &input {
                    expected = expected.union(&g.neighbors(e, dr).unwrap());
                }
                assert_eq!(project(&g, &input, dr).unwrap(), expected);
            }
        }
    }

    #[test]
    fn one_p_answers_out_neighbors() {
        let g = KnowledgeGraph::from_labels(&[
            ("amy_irving", "star", "film_x"),
            ("amy_irving", "star", "film_y"),
            ("other", "star", "film_z"),
        ]);
        let q = FolQuery::new(
            PatternTag::OneP,
            Bindings {
                anchors: vec![g.entity_id("amy_irving").unwrap()],
                relations: vec![fwd(&g, "star")],
            },
        )
        .unwrap();
        let ans = evaluate(&g, &q).unwrap();
        assert_eq!(labels(&g, &ans), vec!["film_x", "film_y"]);
    }

    #[test]
    fn disjoint_intersection_is_empty() {
        let g = KnowledgeGraph::from_labels(&[("a", "r1", "x"), ("b", "r2", "y")]);
        let q = FolQuery::new(
            PatternTag::TwoI,
            Bindings {
                anchors: vec![g.entity_id("a").unwrap(), g.entity_id("b").unwrap()],
                relations: vec![fwd(&g, "r1"), fwd(&g, "r2")],
            },
        )
        .unwrap();
        assert!(evaluate(&g, &q).unwrap().is_empty());
    }

    #[test]
    fn evaluate_is_pure() {
        let g = crate::testutil::random_graph(300, 3);
        let q = FolQuery::new(
            PatternTag::TwoIn,
            Bindings {
                anchors: vec![EntityId(0), EntityId(1)],
                relations: vec![
                    DirectedRelation {
                        relation: RelationId(0),
                        direction: Direction::Forward,
                    },
                    DirectedRelation {
                        relation: RelationId(1),
                        direction: Direction::Inverse,
                    },
                ],
            },
        )
        .unwrap();
        let a = evaluate(&g, &q).unwrap();
        let b = evaluate(&g, &q).unwrap();
        assert_eq!(a, b);
    }
}
