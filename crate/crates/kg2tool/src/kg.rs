//! Immutable knowledge-graph store with forward and inverse adjacency.
//!
//! A graph is loaded once from a tab-separated triple file (FB15k layout:
//! `head<TAB>relation<TAB>tail`, one fact per line) and is read-only after
//! that, so it can be shared freely across threads. Entity and relation ids
//! are dense integers assigned in first-appearance order, which makes two
//! loads of the same file produce identical graphs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::set::EntitySet;

/// Dense handle for an entity; pairs with a label in the entity table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// Dense handle for a raw relation string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// Which way a relation is traversed. `Inverse` stands for the r⁻¹ twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Inverse,
            Direction::Inverse => Direction::Forward,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Forward => write!(f, "forward"),
            Direction::Inverse => write!(f, "inverse"),
        }
    }
}

/// A relation together with a traversal direction.
///
/// The inverse twin of `(r, forward)` is `(r, inverse)` and vice versa, so
/// taking the inverse twice is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirectedRelation {
    pub relation: RelationId,
    pub direction: Direction,
}

impl DirectedRelation {
    pub fn forward(relation: RelationId) -> Self {
        DirectedRelation {
            relation,
            direction: Direction::Forward,
        }
    }

    pub fn inverse_twin(self) -> Self {
        DirectedRelation {
            relation: self.relation,
            direction: self.direction.flip(),
        }
    }
}

/// One fact: `(head, relation, tail)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// What to do with lines that do not split into three fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Abort with the offending line number.
    Strict,
    /// Skip the line and count it.
    Lenient,
}

/// Counts reported by a load.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub lines: usize,
    pub triples: usize,
    pub duplicates: usize,
    pub skipped: usize,
    pub entities: usize,
    pub relations: usize,
}

/// Structured summary for the `stats` command.
#[derive(Debug, Clone, Serialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub max_out_degree: usize,
}

/// Immutable triple store with both adjacency directions indexed.
///
/// The `Debug` form prints counts only; the tables can be huge.
pub struct KnowledgeGraph {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    /// `(head, relation)` → sorted tails.
    forward: HashMap<(u32, u32), Vec<EntityId>>,
    /// `(tail, relation)` → sorted heads.
    inverse: HashMap<(u32, u32), Vec<EntityId>>,
    /// Per entity: relations `r` with some `(·, r, e)`, sorted.
    incoming: Vec<Vec<RelationId>>,
    /// Per entity: relations `r` with some `(e, r, ·)`, sorted.
    outgoing: Vec<Vec<RelationId>>,
    /// SHA-256 of the source bytes, for provenance manifests.
    digest: String,
}

impl KnowledgeGraph {
    /// Loads a tab-separated triple file and builds both indexes.
    pub fn load_triples(path: &Path, mode: LoadMode) -> Result<(Self, LoadReport)> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let mut report = LoadReport::default();
        let mut raw: Vec<(String, String, String)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            report.lines += 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t), None)
                    if !h.is_empty() && !r.is_empty() && !t.is_empty() =>
                {
                    raw.push((h.to_string(), r.to_string(), t.to_string()));
                }
                _ => match mode {
                    LoadMode::Strict => {
                        return Err(Error::MalformedTriple {
                            path: path.to_path_buf(),
                            line: idx + 1,
                        })
                    }
                    LoadMode::Lenient => report.skipped += 1,
                },
            }
        }
        if raw.is_empty() {
            return Err(Error::EmptyTripleFile {
                path: path.to_path_buf(),
            });
        }
        let digest = hex_digest(&bytes);
        let graph = Self::build(raw, digest, &mut report);
        Ok((graph, report))
    }

    /// Builds a graph from in-memory `(head, relation, tail)` label triples.
    pub fn from_labels<S: AsRef<str>>(triples: &[(S, S, S)]) -> Self {
        let raw: Vec<(String, String, String)> = triples
            .iter()
            .map(|(h, r, t)| {
                (
                    h.as_ref().to_string(),
                    r.as_ref().to_string(),
                    t.as_ref().to_string(),
                )
            })
            .collect();
        let mut hasher = Sha256::new();
        for (h, r, t) in &raw {
            hasher.update(h.as_bytes());
            hasher.update(b"\t");
            hasher.update(r.as_bytes());
            hasher.update(b"\t");
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        let digest = format!("{:x}", hasher.finalize());
        let mut report = LoadReport::default();
        Self::build(raw, digest, &mut report)
    }

    fn build(raw: Vec<(String, String, String)>, digest: String, report: &mut LoadReport) -> Self {
        let mut entities: Vec<String> = Vec::new();
        let mut entity_ids: HashMap<String, EntityId> = HashMap::new();
        let mut relations: Vec<String> = Vec::new();
        let mut relation_ids: HashMap<String, RelationId> = HashMap::new();

        let intern_entity =
            |label: &str, entities: &mut Vec<String>, ids: &mut HashMap<String, EntityId>| {
                if let Some(&id) = ids.get(label) {
                    return id;
                }
                let id = EntityId(entities.len() as u32);
                entities.push(label.to_string());
                ids.insert(label.to_string(), id);
                id
            };

        let mut triples: Vec<Triple> = Vec::with_capacity(raw.len());
        for (h, r, t) in &raw {
            let head = intern_entity(h, &mut entities, &mut entity_ids);
            let relation = if let Some(&id) = relation_ids.get(r.as_str()) {
                id
            } else {
                let id = RelationId(relations.len() as u32);
                relations.push(r.clone());
                relation_ids.insert(r.clone(), id);
                id
            };
            let tail = intern_entity(t, &mut entities, &mut entity_ids);
            triples.push(Triple {
                head,
                relation,
                tail,
            });
        }
        let before = triples.len();
        triples.sort_unstable();
        triples.dedup();
        report.duplicates = before - triples.len();
        report.triples = triples.len();
        report.entities = entities.len();
        report.relations = relations.len();

        let mut forward: HashMap<(u32, u32), Vec<EntityId>> = HashMap::new();
        let mut inverse: HashMap<(u32, u32), Vec<EntityId>> = HashMap::new();
        let mut incoming: Vec<Vec<RelationId>> = vec![Vec::new(); entities.len()];
        let mut outgoing: Vec<Vec<RelationId>> = vec![Vec::new(); entities.len()];
        for t in &triples {
            forward
                .entry((t.head.0, t.relation.0))
                .or_default()
                .push(t.tail);
            inverse
                .entry((t.tail.0, t.relation.0))
                .or_default()
                .push(t.head);
            incoming[t.tail.0 as usize].push(t.relation);
            outgoing[t.head.0 as usize].push(t.relation);
        }
        for tails in forward.values_mut() {
            tails.sort_unstable();
            tails.dedup();
        }
        for heads in inverse.values_mut() {
            heads.sort_unstable();
            heads.dedup();
        }
        for rels in incoming.iter_mut().chain(outgoing.iter_mut()) {
            rels.sort_unstable();
            rels.dedup();
        }

        KnowledgeGraph {
            entities,
            entity_ids,
            relations,
            relation_ids,
            triples,
            forward,
            inverse,
            incoming,
            outgoing,
            digest,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entities[e.0 as usize]
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relations[r.0 as usize]
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_ids.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_ids.get(label).copied()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn relation_ids_iter(&self) -> impl Iterator<Item = RelationId> + '_ {
        (0..self.relations.len() as u32).map(RelationId)
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if (e.0 as usize) < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "entity",
                id: e.0,
            })
        }
    }

    fn check_relation(&self, r: RelationId) -> Result<()> {
        if (r.0 as usize) < self.relations.len() {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "relation",
                id: r.0,
            })
        }
    }

    /// `{ t : (e, r, t) ∈ E }`, sorted.
    pub fn out_neighbors(&self, e: EntityId, r: RelationId) -> Result<EntitySet> {
        self.check_entity(e)?;
        self.check_relation(r)?;
        Ok(EntitySet::from_sorted(
            self.forward.get(&(e.0, r.0)).cloned().unwrap_or_default(),
        ))
    }

    /// `{ h : (h, r, e) ∈ E }`, sorted. Transpose of [`out_neighbors`].
    ///
    /// [`out_neighbors`]: KnowledgeGraph::out_neighbors
    pub fn in_neighbors(&self, e: EntityId, r: RelationId) -> Result<EntitySet> {
        self.check_entity(e)?;
        self.check_relation(r)?;
        Ok(EntitySet::from_sorted(
            self.inverse.get(&(e.0, r.0)).cloned().unwrap_or_default(),
        ))
    }

    /// Neighbor slice without the defensive copy; ids must be valid.
    pub(crate) fn neighbor_slice(&self, e: EntityId, dr: DirectedRelation) -> &[EntityId] {
        let map = match dr.direction {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        };
        map.get(&(e.0, dr.relation.0))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Entities reachable from `e` through `dr` (tails for forward, heads
    /// for inverse).
    pub fn neighbors(&self, e: EntityId, dr: DirectedRelation) -> Result<EntitySet> {
        match dr.direction {
            Direction::Forward => self.out_neighbors(e, dr.relation),
            Direction::Inverse => self.in_neighbors(e, dr.relation),
        }
    }

    /// Relations with at least one fact pointing at `e`.
    pub fn incoming_relations(&self, e: EntityId) -> Result<Vec<RelationId>> {
        self.check_entity(e)?;
        Ok(self.incoming[e.0 as usize].clone())
    }

    /// Relations with at least one fact leaving `e`.
    pub fn outgoing_relations(&self, e: EntityId) -> Result<Vec<RelationId>> {
        self.check_entity(e)?;
        Ok(self.outgoing[e.0 as usize].clone())
    }

    /// Directed relations that can produce `e` as a projection output.
    ///
    /// Over the doubled vocabulary `R ∪ R⁻¹`: `(r, forward)` qualifies when
    /// some `(h, r, e)` exists, `(r, inverse)` when some `(e, r, t)` exists.
    /// Sampling walks edges against the projection flow, so this is the slot
    /// candidate list for the edge above `e`.
    pub fn incoming_directed(&self, e: EntityId) -> Result<Vec<DirectedRelation>> {
        self.check_entity(e)?;
        let mut out: Vec<DirectedRelation> = self.incoming[e.0 as usize]
            .iter()
            .map(|&r| DirectedRelation {
                relation: r,
                direction: Direction::Forward,
            })
            .collect();
        out.extend(
            self.outgoing[e.0 as usize]
                .iter()
                .map(|&r| DirectedRelation {
                    relation: r,
                    direction: Direction::Inverse,
                }),
        );
        Ok(out)
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    pub fn stats(&self) -> KgStats {
        let max_out_degree = self.forward.values().map(Vec::len).max().unwrap_or(0);
        KgStats {
            entities: self.entity_count(),
            relations: self.relation_count(),
            triples: self.triple_count(),
            max_out_degree,
        }
    }
}

impl fmt::Debug for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeGraph")
            .field("entities", &self.entities.len())
            .field("relations", &self.relations.len())
            .field("triples", &self.triples.len())
            .finish()
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::from_labels(&[("a", "r", "b"), ("a", "r", "c"), ("b", "r", "c")])
    }

    #[test]
    fn counts_from_lines() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b"), ("b", "r", "c")]);
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.relation_count(), 1);
        assert_eq!(g.triple_count(), 2);
    }

    #[test]
    fn duplicate_lines_dedup() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b"), ("a", "r", "b")]);
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn out_neighbors_definition() {
        let g = toy();
        let a = g.entity_id("a").unwrap();
        let r = g.relation_id("r").unwrap();
        let tails: Vec<&str> = g
            .out_neighbors(a, r)
            .unwrap()
            .iter()
            .map(|e| g.entity_label(e))
            .collect();
        assert_eq!(tails, vec!["b", "c"]);
    }

    #[test]
    fn out_neighbors_empty() {
        let g = toy();
        let c = g.entity_id("c").unwrap();
        let r = g.relation_id("r").unwrap();
        assert!(g.out_neighbors(c, r).unwrap().is_empty());
    }

    #[test]
    fn in_neighbors_transpose() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let b = g.entity_id("b").unwrap();
        let r = g.relation_id("r").unwrap();
        let heads: Vec<&str> = g
            .in_neighbors(b, r)
            .unwrap()
            .iter()
            .map(|e| g.entity_label(e))
            .collect();
        assert_eq!(heads, vec!["a"]);
    }

    #[test]
    fn inverse_twin_is_involution() {
        let dr = DirectedRelation::forward(RelationId(0));
        assert_eq!(dr.inverse_twin().inverse_twin(), dr);
        assert_ne!(dr.inverse_twin(), dr);
    }

    #[test]
    fn in_neighbors_equals_inverse_direction() {
        let g = toy();
        let r = g.relation_id("r").unwrap();
        for e in g.entity_ids() {
            assert_eq!(
                g.in_neighbors(e, r).unwrap(),
                g.neighbors(
                    e,
                    DirectedRelation {
                        relation: r,
                        direction: Direction::Inverse
                    }
                )
                .unwrap()
            );
        }
    }

    #[test]
    fn incoming_relations_cases() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let a = g.entity_id("a").unwrap();
        let b = g.entity_id("b").unwrap();
        assert_eq!(
            g.incoming_relations(b).unwrap(),
            vec![g.relation_id("r").unwrap()]
        );
        assert!(g.incoming_relations(a).unwrap().is_empty());
    }

    #[test]
    fn unknown_ids_are_domain_errors() {
        let g = toy();
        assert!(g.out_neighbors(EntityId(99), RelationId(0)).is_err());
        assert!(g.in_neighbors(EntityId(0), RelationId(99)).is_err());
        assert!(g.incoming_relations(EntityId(99)).is_err());
    }

    #[test]
    fn self_loops_are_ordinary_triples() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "a")]);
        let a = g.entity_id("a").unwrap();
        let r = g.relation_id("r").unwrap();
        assert!(g.out_neighbors(a, r).unwrap().contains(a));
        assert!(g.in_neighbors(a, r).unwrap().contains(a));
    }

    /// Index completeness and edge conservation, checked exhaustively.
    #[test]
    fn indexes_are_exact_transposes() {
        let g = crate::testutil::random_graph(1000, 7);
        for t in g.triples() {
            assert!(g
                .out_neighbors(t.head, t.relation)
                .unwrap()
                .contains(t.tail));
            assert!(g.in_neighbors(t.tail, t.relation).unwrap().contains(t.head));
        }
        let mut total = 0usize;
        for e in g.entity_ids() {
            for r in g.relation_ids_iter() {
                total += g.out_neighbors(e, r).unwrap().len();
            }
        }
        assert_eq!(total, g.triple_count());
    }

    #[test]
    fn random_probes_match_full_scan() {
        use rand::{Rng, SeedableRng};
        let g = crate::testutil::random_graph(1000, 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e = EntityId(rng.gen_range(0..g.entity_count() as u32));
            let r = RelationId(rng.gen_range(0..g.relation_count() as u32));
            let scanned: EntitySet = g
                .triples()
                .iter()
                .filter(|t| t.head == e && t.relation == r)
                .map(|t| t.tail)
                .collect();
            assert_eq!(g.out_neighbors(e, r).unwrap(), scanned);
            let scanned_in: EntitySet = g
                .triples()
                .iter()
                .filter(|t| t.tail == e && t.relation == r)
                .map(|t| t.head)
                .collect();
            assert_eq!(g.in_neighbors(e, r).unwrap(), scanned_in);
            let scanned_rels: Vec<RelationId> = {
                let mut v: Vec<RelationId> = g
                    .triples()
                    .iter()
                    .filter(|t| t.tail == e)
                    .map(|t| t.relation)
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            assert_eq!(g.incoming_relations(e).unwrap(), scanned_rels);
        }
    }

    #[test]
    fn load_is_deterministic() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..50 {
            writeln!(f, "e{}\tr{}\te{}", i % 17, i % 3, (i * 7) % 17).unwrap();
        }
        f.flush().unwrap();
        let (g1, rep1) = KnowledgeGraph::load_triples(f.path(), LoadMode::Strict).unwrap();
        let (g2, rep2) = KnowledgeGraph::load_triples(f.path(), LoadMode::Strict).unwrap();
        assert_eq!(g1.triples(), g2.triples());
        assert_eq!(g1.digest(), g2.digest());
        assert_eq!(rep1.triples, rep2.triples);
        for e in g1.entity_ids() {
            assert_eq!(g1.entity_label(e), g2.entity_label(e));
        }
    }

    #[test]
    fn file_counts_match_independent_scan() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let mut lines = Vec::new();
        for i in 0..200u32 {
            lines.push(format!("n{}\trel{}\tn{}", i % 40, i % 9, (i * 13 + 1) % 40));
        }
        for l in &lines {
            writeln!(f, "{l}").unwrap();
        }
        f.flush().unwrap();
        // Independent text pass: count distinct column values directly.
        let mut heads: Vec<&str> = Vec::new();
        let mut rels: Vec<&str> = Vec::new();
        let mut uniq: Vec<&str> = Vec::new();
        for l in &lines {
            let mut it = l.split('\t');
            let (h, r, t) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            heads.push(h);
            heads.push(t);
            rels.push(r);
            uniq.push(l);
        }
        heads.sort_unstable();
        heads.dedup();
        rels.sort_unstable();
        rels.dedup();
        uniq.sort_unstable();
        uniq.dedup();
        let (g, report) = KnowledgeGraph::load_triples(f.path(), LoadMode::Strict).unwrap();
        assert_eq!(g.entity_count(), heads.len());
        assert_eq!(g.relation_count(), rels.len());
        assert_eq!(g.triple_count(), uniq.len());
        assert_eq!(report.triples, uniq.len());
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a\tr\tb").unwrap();
        writeln!(f, "broken line").unwrap();
        f.flush().unwrap();
        let err = KnowledgeGraph::load_triples(f.path(), LoadMode::Strict).unwrap_err();
        match err {
            Error::MalformedTriple { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let (_, report) = KnowledgeGraph::load_triples(f.path(), LoadMode::Lenient).unwrap();
        assert_eq!(report.skipped, 1);
        assert_eq!(report.triples, 1);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(KnowledgeGraph::load_triples(f.path(), LoadMode::Strict).is_err());
    }
}
