//! Catalog of the 14 query patterns.
//!
//! Pattern letters: `p` projection, `i` intersection, `u` union, `n`
//! negation. Every pattern is a fixed tree shape with numbered anchor and
//! relation slots; instantiation binds the slots and [`build_root`] turns a
//! binding into a [`FolNode`] tree. The catalog is also the single source
//! of truth for the textual form (variable letters, atom order) and for
//! the execution-chain length of each shape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fol::{Bindings, FolNode};

/// Tag of one of the 14 catalogued shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PatternTag {
    OneP,
    TwoP,
    ThreeP,
    TwoI,
    ThreeI,
    Pi,
    Ip,
    TwoU,
    Up,
    TwoIn,
    ThreeIn,
    Inp,
    Pin,
    Pni,
}

pub const ALL_PATTERNS: [PatternTag; 14] = [
    PatternTag::OneP,
    PatternTag::TwoP,
    PatternTag::ThreeP,
    PatternTag::TwoI,
    PatternTag::ThreeI,
    PatternTag::Pi,
    PatternTag::Ip,
    PatternTag::TwoU,
    PatternTag::Up,
    PatternTag::TwoIn,
    PatternTag::ThreeIn,
    PatternTag::Inp,
    PatternTag::Pin,
    PatternTag::Pni,
];

impl PatternTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternTag::OneP => "1p",
            PatternTag::TwoP => "2p",
            PatternTag::ThreeP => "3p",
            PatternTag::TwoI => "2i",
            PatternTag::ThreeI => "3i",
            PatternTag::Pi => "pi",
            PatternTag::Ip => "ip",
            PatternTag::TwoU => "2u",
            PatternTag::Up => "up",
            PatternTag::TwoIn => "2in",
            PatternTag::ThreeIn => "3in",
            PatternTag::Inp => "inp",
            PatternTag::Pin => "pin",
            PatternTag::Pni => "pni",
        }
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            PatternTag::TwoIn
                | PatternTag::ThreeIn
                | PatternTag::Inp
                | PatternTag::Pin
                | PatternTag::Pni
        )
    }

    pub fn has_union(self) -> bool {
        matches!(self, PatternTag::TwoU | PatternTag::Up)
    }
}

impl fmt::Display for PatternTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_PATTERNS
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown pattern tag {s:?}"))
    }
}

impl TryFrom<String> for PatternTag {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PatternTag> for String {
    fn from(t: PatternTag) -> String {
        t.as_str().to_string()
    }
}

/// Uninstantiated tree skeleton with anchor/relation slot numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shape {
    Anchor(usize),
    Proj(Box<Shape>, usize),
    And(Vec<Shape>),
    Or(Vec<Shape>),
    Not(Box<Shape>),
}

fn anchor(slot: usize) -> Shape {
    Shape::Anchor(slot)
}

fn proj(child: Shape, rel_slot: usize) -> Shape {
    Shape::Proj(Box::new(child), rel_slot)
}

fn not(child: Shape) -> Shape {
    Shape::Not(Box::new(child))
}

/// Tree skeleton of a pattern.
pub fn shape(tag: PatternTag) -> Shape {
    use Shape::{And, Or};
    match tag {
        PatternTag::OneP => proj(anchor(0), 0),
        PatternTag::TwoP => proj(proj(anchor(0), 0), 1),
        PatternTag::ThreeP => proj(proj(proj(anchor(0), 0), 1), 2),
        PatternTag::TwoI => And(vec![proj(anchor(0), 0), proj(anchor(1), 1)]),
        PatternTag::ThreeI => And(vec![
            proj(anchor(0), 0),
            proj(anchor(1), 1),
            proj(anchor(2), 2),
        ]),
        PatternTag::Pi => And(vec![proj(proj(anchor(0), 0), 1), proj(anchor(1), 2)]),
        PatternTag::Ip => proj(And(vec![proj(anchor(0), 0), proj(anchor(1), 1)]), 2),
        PatternTag::TwoU => Or(vec![proj(anchor(0), 0), proj(anchor(1), 1)]),
        PatternTag::Up => proj(Or(vec![proj(anchor(0), 0), proj(anchor(1), 1)]), 2),
        PatternTag::TwoIn => And(vec![proj(anchor(0), 0), not(proj(anchor(1), 1))]),
        PatternTag::ThreeIn => And(vec![
            proj(anchor(0), 0),
            proj(anchor(1), 1),
            not(proj(anchor(2), 2)),
        ]),
        PatternTag::Inp => proj(And(vec![proj(anchor(0), 0), not(proj(anchor(1), 1))]), 2),
        PatternTag::Pin => And(vec![proj(proj(anchor(0), 0), 1), not(proj(anchor(1), 2))]),
        PatternTag::Pni => And(vec![not(proj(proj(anchor(0), 0), 1)), proj(anchor(1), 2)]),
    }
}

pub fn anchor_count(tag: PatternTag) -> usize {
    count_anchors(&shape(tag))
}

pub fn relation_count(tag: PatternTag) -> usize {
    count_projections(&shape(tag))
}

/// Number of execution steps the pattern lowers to: one per projection plus
/// one per combining (intersection/union) node.
pub fn chain_len(tag: PatternTag) -> usize {
    fn walk(s: &Shape) -> usize {
        match s {
            Shape::Anchor(_) => 0,
            Shape::Proj(c, _) => walk(c) + 1,
            Shape::And(cs) | Shape::Or(cs) => cs.iter().map(walk).sum::<usize>() + 1,
            Shape::Not(c) => walk(c),
        }
    }
    walk(&shape(tag))
}

fn count_anchors(s: &Shape) -> usize {
    match s {
        Shape::Anchor(_) => 1,
        Shape::Proj(c, _) | Shape::Not(c) => count_anchors(c),
        Shape::And(cs) | Shape::Or(cs) => cs.iter().map(count_anchors).sum(),
    }
}

fn count_projections(s: &Shape) -> usize {
    match s {
        Shape::Anchor(_) => 0,
        Shape::Proj(c, _) => count_projections(c) + 1,
        Shape::And(cs) | Shape::Or(cs) => cs.iter().map(count_projections).sum(),
        Shape::Not(c) => count_projections(c),
    }
}

/// Free-variable letter used in the textual form.
pub fn free_var(tag: PatternTag) -> char {
    match tag {
        PatternTag::OneP => 'a',
        PatternTag::TwoP => 'b',
        PatternTag::ThreeP => 'c',
        PatternTag::TwoI => 'c',
        PatternTag::ThreeI => 'e',
        PatternTag::Pi => 'd',
        PatternTag::Ip => 'd',
        PatternTag::TwoU => 'c',
        PatternTag::Up => 'd',
        PatternTag::TwoIn => 'd',
        PatternTag::ThreeIn => 'f',
        PatternTag::Inp => 'e',
        PatternTag::Pin => 'e',
        PatternTag::Pni => 'e',
    }
}

/// Bound-variable letters in first-appearance order.
pub fn bound_vars(tag: PatternTag) -> &'static [char] {
    match tag {
        PatternTag::TwoP => &['a'],
        PatternTag::ThreeP => &['a', 'b'],
        PatternTag::Pi => &['a'],
        PatternTag::Ip => &['c'],
        PatternTag::Up => &['c'],
        PatternTag::Inp => &['d'],
        PatternTag::Pin => &['a'],
        PatternTag::Pni => &['a'],
        _ => &[],
    }
}

/// Instantiates the pattern's tree from slot bindings.
///
/// Callers are expected to pass binding vectors of the right arity
/// ([`crate::fol::FolQuery::new`] checks this).
pub fn build_root(tag: PatternTag, b: &Bindings) -> FolNode {
    fn go(s: &Shape, b: &Bindings) -> FolNode {
        match s {
            Shape::Anchor(slot) => FolNode::Anchor(b.anchors[*slot]),
            Shape::Proj(child, rel_slot) => {
                FolNode::projection(go(child, b), b.relations[*rel_slot])
            }
            Shape::And(cs) => FolNode::Intersection(cs.iter().map(|c| go(c, b)).collect()),
            Shape::Or(cs) => FolNode::Union(cs.iter().map(|c| go(c, b)).collect()),
            Shape::Not(child) => FolNode::Negation(Box::new(go(child, b))),
        }
    }
    go(&shape(tag), b)
}

/// A term position in a pattern's atom list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotTerm {
    /// The free variable (the root).
    Free,
    /// Bound variable, indexed in first-appearance order.
    Bound(usize),
    /// Anchor slot.
    Anchor(usize),
}

/// One relational atom of a pattern's formula, in formula order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateAtom {
    /// Projection source (the input side).
    pub src: SlotTerm,
    /// Projection target (the output side).
    pub dst: SlotTerm,
    pub rel_slot: usize,
    pub negated: bool,
    /// Set when the atom belongs to a disjunction group.
    pub in_union: bool,
}

/// Atoms of the pattern's formula in surface order.
///
/// Derived from the same [`shape`] the tree builder uses, so the textual
/// form can never drift from the executable form.
pub fn pattern_atoms(tag: PatternTag) -> Vec<TemplateAtom> {
    struct Walker {
        atoms: Vec<TemplateAtom>,
        next_key: usize,
    }

    impl Walker {
        /// `out` is the term this subtree's output is identified with.
        /// Bound terms carry placeholder keys; they are renumbered into
        /// first-appearance order afterwards.
        fn walk(&mut self, s: &Shape, out: SlotTerm, negated: bool, in_union: bool) {
            match s {
                Shape::Anchor(_) => unreachable!("anchors are handled by the parent projection"),
                Shape::Proj(child, rel_slot) => {
                    let src = match &**child {
                        Shape::Anchor(slot) => SlotTerm::Anchor(*slot),
                        other => {
                            let term = SlotTerm::Bound(self.next_key);
                            self.next_key += 1;
                            self.walk(other, term, false, false);
                            term
                        }
                    };
                    self.atoms.push(TemplateAtom {
                        src,
                        dst: out,
                        rel_slot: *rel_slot,
                        negated,
                        in_union,
                    });
                }
                Shape::And(cs) => {
                    for c in cs {
                        match c {
                            Shape::Not(inner) => self.walk(inner, out, true, false),
                            other => self.walk(other, out, false, false),
                        }
                    }
                }
                Shape::Or(cs) => {
                    for c in cs {
                        self.walk(c, out, false, true);
                    }
                }
                Shape::Not(_) => unreachable!("negation is handled by the enclosing intersection"),
            }
        }
    }

    let mut w = Walker {
        atoms: Vec::new(),
        next_key: 0,
    };
    w.walk(&shape(tag), SlotTerm::Free, false, false);

    // Renumber bound placeholders into first-appearance order.
    let mut order: Vec<usize> = Vec::new();
    let remap = |t: SlotTerm, order: &mut Vec<usize>| match t {
        SlotTerm::Bound(key) => {
            let idx = match order.iter().position(|&k| k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            SlotTerm::Bound(idx)
        }
        other => other,
    };
    let mut atoms = w.atoms;
    for a in &mut atoms {
        a.src = remap(a.src, &mut order);
        a.dst = remap(a.dst, &mut order);
    }
    atoms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fol::FolQuery;
    use crate::kg::{DirectedRelation, Direction, EntityId, RelationId};

    #[test]
    fn catalog_has_fourteen_entries() {
        assert_eq!(ALL_PATTERNS.len(), 14);
        let names: Vec<&str> = ALL_PATTERNS.iter().map(|t| t.as_str()).collect();
        assert_eq!(
            names,
            [
                "1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up", "2in", "3in", "inp", "pin",
                "pni"
            ]
        );
    }

    #[test]
    fn chain_lengths_match_fixed_table() {
        let expected = [
            (PatternTag::OneP, 1),
            (PatternTag::TwoP, 2),
            (PatternTag::ThreeP, 3),
            (PatternTag::TwoI, 3),
            (PatternTag::ThreeI, 4),
            (PatternTag::Pi, 4),
            (PatternTag::Ip, 4),
            (PatternTag::TwoU, 3),
            (PatternTag::Up, 4),
            (PatternTag::TwoIn, 3),
            (PatternTag::ThreeIn, 4),
            (PatternTag::Inp, 4),
            (PatternTag::Pin, 4),
            (PatternTag::Pni, 4),
        ];
        for (tag, len) in expected {
            assert_eq!(chain_len(tag), len, "{tag}");
        }
    }

    #[test]
    fn every_catalog_tree_is_structurally_valid() {
        for tag in ALL_PATTERNS {
            let bindings = Bindings {
                anchors: (0..anchor_count(tag)).map(|i| EntityId(i as u32)).collect(),
                relations: (0..relation_count(tag))
                    .map(|i| DirectedRelation {
                        relation: RelationId(i as u32),
                        direction: Direction::Forward,
                    })
                    .collect(),
            };
            let q = FolQuery::new(tag, bindings).unwrap();
            q.root().validate().unwrap();
        }
    }

    #[test]
    fn atom_lists_are_consistent_with_slot_counts() {
        for tag in ALL_PATTERNS {
            let atoms = pattern_atoms(tag);
            assert_eq!(atoms.len(), relation_count(tag), "{tag}");
            let mut rel_slots: Vec<usize> = atoms.iter().map(|a| a.rel_slot).collect();
            rel_slots.sort_unstable();
            assert_eq!(
                rel_slots,
                (0..relation_count(tag)).collect::<Vec<_>>(),
                "{tag}"
            );
            let bound_used = atoms
                .iter()
                .flat_map(|a| [a.src, a.dst])
                .filter_map(|t| match t {
                    SlotTerm::Bound(i) => Some(i),
                    _ => None,
                })
                .max()
                .map_or(0, |m| m + 1);
            assert_eq!(bound_used, bound_vars(tag).len(), "{tag}");
            assert_eq!(atoms.iter().any(|a| a.negated), tag.has_negation(), "{tag}");
            assert_eq!(atoms.iter().any(|a| a.in_union), tag.has_union(), "{tag}");
        }
    }

    #[test]
    fn three_p_atoms_follow_formula_order() {
        // q =?c : exists a, b : R1(A, a) & R2(a, b) & R3(b, c)
        let atoms = pattern_atoms(PatternTag::ThreeP);
        assert_eq!(atoms[0].src, SlotTerm::Anchor(0));
        assert_eq!(atoms[0].dst, SlotTerm::Bound(0));
        assert_eq!(atoms[1].src, SlotTerm::Bound(0));
        assert_eq!(atoms[1].dst, SlotTerm::Bound(1));
        assert_eq!(atoms[2].src, SlotTerm::Bound(1));
        assert_eq!(atoms[2].dst, SlotTerm::Free);
        assert_eq!(
            [atoms[0].rel_slot, atoms[1].rel_slot, atoms[2].rel_slot],
            [0, 1, 2]
        );
    }

    #[test]
    fn pni_negates_only_the_middle_atom() {
        // q =?e : exists a : R1(A, a) & !R2(a, e) & R3(B, e)
        let atoms = pattern_atoms(PatternTag::Pni);
        assert_eq!(
            atoms.iter().map(|a| a.negated).collect::<Vec<_>>(),
            [false, true, false]
        );
        assert_eq!(atoms[1].src, SlotTerm::Bound(0));
        assert_eq!(atoms[1].dst, SlotTerm::Free);
    }
}
