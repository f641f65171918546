//! Typed first-order-logic query trees over a knowledge graph.
//!
//! A query is a rooted operator tree whose root is the free variable.
//! Leaves are anchor entities; inner nodes are relation projections,
//! intersections, unions, and negations. Negation never stands alone: it
//! only appears as a direct child of an intersection, where it is applied
//! as a relative complement against its non-negated siblings.

pub mod brute;
pub mod eval;
pub mod text;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{DirectedRelation, EntityId, KnowledgeGraph};
use crate::patterns::{self, PatternTag};

/// One node of a query tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FolNode {
    /// Constant entity leaf.
    Anchor(EntityId),
    /// Maps the child's entity set through a directed relation.
    Projection {
        child: Box<FolNode>,
        relation: DirectedRelation,
    },
    /// 2–3 children; negated children subtract from the rest.
    Intersection(Vec<FolNode>),
    /// Exactly 2 children.
    Union(Vec<FolNode>),
    /// Marks a branch whose result is excluded from the enclosing
    /// intersection.
    Negation(Box<FolNode>),
}

impl FolNode {
    pub fn anchor(e: EntityId) -> FolNode {
        FolNode::Anchor(e)
    }

    pub fn projection(child: FolNode, relation: DirectedRelation) -> FolNode {
        FolNode::Projection {
            child: Box::new(child),
            relation,
        }
    }

    /// Checks the structural invariants of the catalogued shapes.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, under_intersection: bool) -> Result<()> {
        match self {
            FolNode::Anchor(_) => Ok(()),
            FolNode::Projection { child, .. } => {
                if matches!(**child, FolNode::Negation(_)) {
                    return Err(Error::InvalidQuery {
                        reason: "negation under projection".into(),
                    });
                }
                child.validate_inner(false)
            }
            FolNode::Intersection(children) => {
                if !(2..=3).contains(&children.len()) {
                    return Err(Error::InvalidQuery {
                        reason: format!("intersection with {} children", children.len()),
                    });
                }
                if children.iter().all(|c| matches!(c, FolNode::Negation(_))) {
                    return Err(Error::InvalidQuery {
                        reason: "intersection with only negated children".into(),
                    });
                }
                for c in children {
                    c.validate_inner(true)?;
                }
                Ok(())
            }
            FolNode::Union(children) => {
                if children.len() != 2 {
                    return Err(Error::InvalidQuery {
                        reason: format!("union with {} children", children.len()),
                    });
                }
                for c in children {
                    if matches!(c, FolNode::Negation(_)) {
                        return Err(Error::InvalidQuery {
                            reason: "negation under union".into(),
                        });
                    }
                    c.validate_inner(false)?;
                }
                Ok(())
            }
            FolNode::Negation(child) => {
                if !under_intersection {
                    return Err(Error::InvalidQuery {
                        reason: "negation outside an intersection".into(),
                    });
                }
                if matches!(**child, FolNode::Negation(_) | FolNode::Anchor(_)) {
                    return Err(Error::InvalidQuery {
                        reason: "negation must wrap a projection branch".into(),
                    });
                }
                child.validate_inner(false)
            }
        }
    }

    /// Validates that every anchor and relation id resolves in `g`.
    pub fn validate_ids(&self, g: &KnowledgeGraph) -> Result<()> {
        match self {
            FolNode::Anchor(e) => {
                if (e.0 as usize) < g.entity_count() {
                    Ok(())
                } else {
                    Err(Error::UnknownId {
                        kind: "entity",
                        id: e.0,
                    })
                }
            }
            FolNode::Projection { child, relation } => {
                if (relation.relation.0 as usize) >= g.relation_count() {
                    return Err(Error::UnknownId {
                        kind: "relation",
                        id: relation.relation.0,
                    });
                }
                child.validate_ids(g)
            }
            FolNode::Intersection(children) | FolNode::Union(children) => {
                children.iter().try_for_each(|c| c.validate_ids(g))
            }
            FolNode::Negation(child) => child.validate_ids(g),
        }
    }
}

/// Slot bindings of an instantiated pattern, in catalog slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bindings {
    pub anchors: Vec<EntityId>,
    pub relations: Vec<DirectedRelation>,
}

/// A fully instantiated query: one of the 14 catalogued shapes with all
/// anchor and relation slots bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FolQuery {
    pattern: PatternTag,
    bindings: Bindings,
    root: FolNode,
}

impl FolQuery {
    /// Builds the query tree for `pattern` from slot bindings.
    pub fn new(pattern: PatternTag, bindings: Bindings) -> Result<Self> {
        if bindings.anchors.len() != patterns::anchor_count(pattern) {
            return Err(Error::InvalidQuery {
                reason: format!(
                    "{pattern} expects {} anchors, got {}",
                    patterns::anchor_count(pattern),
                    bindings.anchors.len()
                ),
            });
        }
        if bindings.relations.len() != patterns::relation_count(pattern) {
            return Err(Error::InvalidQuery {
                reason: format!(
                    "{pattern} expects {} relations, got {}",
                    patterns::relation_count(pattern),
                    bindings.relations.len()
                ),
            });
        }
        let root = patterns::build_root(pattern, &bindings);
        debug_assert!(root.validate().is_ok());
        Ok(FolQuery {
            pattern,
            bindings,
            root,
        })
    }

    pub fn pattern(&self) -> PatternTag {
        self.pattern
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn root(&self) -> &FolNode {
        &self.root
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Direction, RelationId};

    fn dr(r: u32) -> DirectedRelation {
        DirectedRelation {
            relation: RelationId(r),
            direction: Direction::Forward,
        }
    }

    #[test]
    fn negation_outside_intersection_rejected() {
        let node = FolNode::Negation(Box::new(FolNode::projection(
            FolNode::anchor(EntityId(0)),
            dr(0),
        )));
        assert!(node.validate().is_err());
    }

    #[test]
    fn all_negated_intersection_rejected() {
        let branch = || {
            FolNode::Negation(Box::new(FolNode::projection(
                FolNode::anchor(EntityId(0)),
                dr(0),
            )))
        };
        let node = FolNode::Intersection(vec![branch(), branch()]);
        assert!(node.validate().is_err());
    }

    #[test]
    fn arity_limits_enforced() {
        let p = || FolNode::projection(FolNode::anchor(EntityId(0)), dr(0));
        assert!(FolNode::Union(vec![p(), p(), p()]).validate().is_err());
        assert!(FolNode::Intersection(vec![p()]).validate().is_err());
        assert!(FolNode::Intersection(vec![p(), p()]).validate().is_ok());
    }

    #[test]
    fn binding_arity_checked() {
        let bad = FolQuery::new(
            PatternTag::TwoI,
            Bindings {
                anchors: vec![EntityId(0)],
                relations: vec![dr(0), dr(1)],
            },
        );
        assert!(bad.is_err());
    }
}
