//! Pattern instantiation by subgraph matching.
//!
//! A sample starts from a root entity drawn uniformly from the graph and
//! walks the pattern tree from the root downward, binding each projection
//! edge to a directed relation that can actually produce the current
//! witness and each source node to a real neighbor. Branches under a
//! negation are grounded after their positive siblings, from an alternate
//! witness, so the excluded set provably misses the root. Every accepted
//! sample is self-witnessing: the root is re-checked to be a member of the
//! query's answer set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fol::eval::{self, evaluate};
use crate::fol::{Bindings, FolNode, FolQuery};
use crate::kg::{DirectedRelation, Direction, EntityId, KnowledgeGraph, Triple};
use crate::patterns::{self, PatternTag, Shape};
use crate::rng::derive_rng;
use crate::set::EntitySet;

/// Default cap on the size of an accepted sample's answer set.
pub const DEFAULT_ANSWER_CAP: usize = 100;
/// Default retry budget per requested sample.
pub const DEFAULT_ATTEMPT_FACTOR: usize = 100;

const BRANCH_RETRIES: usize = 10;

/// A successfully instantiated query with its witness and the matched
/// subgraph.
#[derive(Debug, Clone)]
pub struct InstantiatedSample {
    pub query: FolQuery,
    /// Seed answer the instantiation grew from; always in the answer set.
    pub root: EntityId,
    /// KG triples used while matching, in assignment order.
    pub subgraph: Vec<Triple>,
    /// Batch seed and attempt number that produced this sample.
    pub provenance: SampleProvenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleProvenance {
    pub seed: u64,
    pub attempt: usize,
}

/// Why one instantiation attempt died.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstantiationFailure {
    pub stage: &'static str,
}

impl InstantiationFailure {
    fn at(stage: &'static str) -> Self {
        InstantiationFailure { stage }
    }
}

struct Assignment<'g> {
    g: &'g KnowledgeGraph,
    anchors: Vec<Option<EntityId>>,
    relations: Vec<Option<DirectedRelation>>,
    subgraph: Vec<Triple>,
}

impl<'g> Assignment<'g> {
    fn checkpoint(&self) -> (Vec<Option<EntityId>>, Vec<Option<DirectedRelation>>, usize) {
        (
            self.anchors.clone(),
            self.relations.clone(),
            self.subgraph.len(),
        )
    }

    fn restore(&mut self, cp: (Vec<Option<EntityId>>, Vec<Option<DirectedRelation>>, usize)) {
        self.anchors = cp.0;
        self.relations = cp.1;
        self.subgraph.truncate(cp.2);
    }

    /// Grounds `shape` so that `witness` is an output of the subtree.
    fn assign(
        &mut self,
        shape: &Shape,
        witness: EntityId,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), InstantiationFailure> {
        match shape {
            Shape::Anchor(slot) => {
                self.anchors[*slot] = Some(witness);
                Ok(())
            }
            Shape::Proj(child, rel_slot) => {
                let candidates = self
                    .g
                    .incoming_directed(witness)
                    .expect("witness comes from this graph");
                if candidates.is_empty() {
                    return Err(InstantiationFailure::at("projection-no-incoming"));
                }
                let dr = candidates[rng.gen_range(0..candidates.len())];
                // Sources that reach `witness` through `dr`.
                let sources = self.g.neighbor_slice(witness, dr.inverse_twin());
                debug_assert!(!sources.is_empty());
                let source = sources[rng.gen_range(0..sources.len())];
                self.relations[*rel_slot] = Some(dr);
                self.subgraph.push(match dr.direction {
                    Direction::Forward => Triple {
                        head: source,
                        relation: dr.relation,
                        tail: witness,
                    },
                    Direction::Inverse => Triple {
                        head: witness,
                        relation: dr.relation,
                        tail: source,
                    },
                });
                self.assign(child, source, rng)
            }
            Shape::And(children) => {
                for child in children {
                    if !matches!(child, Shape::Not(_)) {
                        self.assign(child, witness, rng)?;
                    }
                }
                for child in children {
                    if let Shape::Not(inner) = child {
                        self.assign_negated(children, inner, witness, rng)?;
                    }
                }
                Ok(())
            }
            Shape::Or(children) => {
                let carrier = rng.gen_range(0..children.len());
                self.assign(&children[carrier], witness, rng)?;
                for (i, child) in children.iter().enumerate() {
                    if i == carrier {
                        continue;
                    }
                    self.assign_from_alternate(child, rng, "union-branch")?;
                }
                Ok(())
            }
            Shape::Not(_) => unreachable!("negation is grounded by the enclosing intersection"),
        }
    }

    /// Grounds a negated branch from an alternate witness such that the
    /// branch's result set does not contain `witness`.
    fn assign_negated(
        &mut self,
        siblings: &[Shape],
        inner: &Shape,
        witness: EntityId,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), InstantiationFailure> {
        // Prefer alternates the positive siblings already reach, so the
        // complement actually removes something.
        let mut pool = EntitySet::new();
        let mut first = true;
        for s in siblings {
            if matches!(s, Shape::Not(_)) {
                continue;
            }
            let node = self.partial_node(s);
            let set = eval::eval_node(self.g, &node);
            pool = if first { set } else { pool.intersection(&set) };
            first = false;
        }
        let pool: Vec<EntityId> = pool.iter().filter(|&e| e != witness).collect();

        for attempt in 0..BRANCH_RETRIES {
            let alternate = if attempt == 0 && !pool.is_empty() {
                pool[rng.gen_range(0..pool.len())]
            } else {
                let e = EntityId(rng.gen_range(0..self.g.entity_count() as u32));
                if e == witness {
                    continue;
                }
                e
            };
            let cp = self.checkpoint();
            if self.assign(inner, alternate, rng).is_err() {
                self.restore(cp);
                continue;
            }
            let excluded = eval::eval_node(self.g, &self.partial_node(inner));
            if excluded.contains(witness) {
                self.restore(cp);
                continue;
            }
            return Ok(());
        }
        Err(InstantiationFailure::at("negation-overlap"))
    }

    /// Grounds a branch from an independently drawn witness (the
    /// non-carrier union branch).
    fn assign_from_alternate(
        &mut self,
        shape: &Shape,
        rng: &mut ChaCha8Rng,
        stage: &'static str,
    ) -> Result<(), InstantiationFailure> {
        for _ in 0..BRANCH_RETRIES {
            let alternate = EntityId(rng.gen_range(0..self.g.entity_count() as u32));
            let cp = self.checkpoint();
            if self.assign(shape, alternate, rng).is_ok() {
                return Ok(());
            }
            self.restore(cp);
        }
        Err(InstantiationFailure::at(stage))
    }

    /// Builds the query subtree for an already-grounded shape region.
    fn partial_node(&self, shape: &Shape) -> FolNode {
        match shape {
            Shape::Anchor(slot) => FolNode::Anchor(self.anchors[*slot].expect("grounded")),
            Shape::Proj(child, rel_slot) => FolNode::projection(
                self.partial_node(child),
                self.relations[*rel_slot].expect("grounded"),
            ),
            Shape::And(cs) => {
                FolNode::Intersection(cs.iter().map(|c| self.partial_node(c)).collect())
            }
            Shape::Or(cs) => FolNode::Union(cs.iter().map(|c| self.partial_node(c)).collect()),
            Shape::Not(c) => FolNode::Negation(Box::new(self.partial_node(c))),
        }
    }
}

/// Single instantiation attempt for `tag`, started from a uniformly drawn
/// root entity.
pub fn instantiate(
    g: &KnowledgeGraph,
    tag: PatternTag,
    rng: &mut ChaCha8Rng,
    answer_cap: usize,
) -> Result<(FolQuery, EntityId, Vec<Triple>), InstantiationFailure> {
    if g.entity_count() == 0 {
        return Err(InstantiationFailure::at("empty-graph"));
    }
    let root = EntityId(rng.gen_range(0..g.entity_count() as u32));
    let shape = patterns::shape(tag);
    let mut asg = Assignment {
        g,
        anchors: vec![None; patterns::anchor_count(tag)],
        relations: vec![None; patterns::relation_count(tag)],
        subgraph: Vec::new(),
    };
    asg.assign(&shape, root, rng)?;

    if has_duplicate_branch(&shape, &asg) {
        return Err(InstantiationFailure::at("duplicate-branch"));
    }

    let bindings = Bindings {
        anchors: asg
            .anchors
            .iter()
            .map(|a| a.expect("all slots grounded"))
            .collect(),
        relations: asg
            .relations
            .iter()
            .map(|r| r.expect("all slots grounded"))
            .collect(),
    };
    let query = FolQuery::new(tag, bindings).expect("catalog arity");

    let answers = evaluate(g, &query).expect("ids from this graph");
    if !answers.contains(root) {
        return Err(InstantiationFailure::at("final-guard"));
    }
    if answers.len() > answer_cap {
        return Err(InstantiationFailure::at("answer-cap"));
    }
    // Every operator node becomes a recorded step response downstream;
    // keep them all within the cap so recorded paths replay exactly.
    if node_sets_within_cap(g, query.root(), answer_cap).is_none() {
        return Err(InstantiationFailure::at("step-cap"));
    }
    if !negation_intermediates_nonempty(g, query.root()) {
        return Err(InstantiationFailure::at("empty-complement"));
    }
    Ok((query, root, asg.subgraph))
}

/// Bottom-up evaluation that bails out as soon as any operator node's
/// result exceeds `cap`; returns the root set when everything fits.
fn node_sets_within_cap(g: &KnowledgeGraph, node: &FolNode, cap: usize) -> Option<EntitySet> {
    let check = |set: EntitySet| if set.len() > cap { None } else { Some(set) };
    match node {
        FolNode::Anchor(e) => Some(EntitySet::singleton(*e)),
        FolNode::Projection { .. } | FolNode::Union(_) => {
            for child in node_children(node) {
                node_sets_within_cap(g, child, cap)?;
            }
            check(eval::eval_node(g, node))
        }
        FolNode::Intersection(children) => {
            for child in children {
                match child {
                    FolNode::Negation(inner) => {
                        node_sets_within_cap(g, inner, cap)?;
                    }
                    plain => {
                        node_sets_within_cap(g, plain, cap)?;
                    }
                }
            }
            check(eval::eval_node(g, node))
        }
        FolNode::Negation(inner) => node_sets_within_cap(g, inner, cap),
    }
}

fn node_children(node: &FolNode) -> Vec<&FolNode> {
    match node {
        FolNode::Anchor(_) => Vec::new(),
        FolNode::Projection { child, .. } => vec![child],
        FolNode::Intersection(cs) | FolNode::Union(cs) => cs.iter().collect(),
        FolNode::Negation(c) => vec![c],
    }
}

/// Sibling single-projection branches of one combining node must not bind
/// the identical (anchor, relation) pair; such queries collapse the
/// pattern's arity.
fn has_duplicate_branch(shape: &Shape, asg: &Assignment<'_>) -> bool {
    fn leaf_projection(s: &Shape, asg: &Assignment<'_>) -> Option<(EntityId, DirectedRelation)> {
        let inner = match s {
            Shape::Not(c) => c,
            other => other,
        };
        match inner {
            Shape::Proj(child, rel_slot) => match &**child {
                Shape::Anchor(slot) => Some((
                    asg.anchors[*slot].unwrap(),
                    asg.relations[*rel_slot].unwrap(),
                )),
                _ => None,
            },
            _ => None,
        }
    }

    fn walk(s: &Shape, asg: &Assignment<'_>) -> bool {
        match s {
            Shape::Anchor(_) => false,
            Shape::Proj(c, _) | Shape::Not(c) => walk(c, asg),
            Shape::And(cs) | Shape::Or(cs) => {
                let leaves: Vec<_> = cs.iter().filter_map(|c| leaf_projection(c, asg)).collect();
                for i in 0..leaves.len() {
                    for j in i + 1..leaves.len() {
                        if leaves[i] == leaves[j] {
                            return true;
                        }
                    }
                }
                cs.iter().any(|c| walk(c, asg))
            }
        }
    }

    walk(shape, asg)
}

/// Re-checks that every intersection with a negated child still has a
/// non-empty result (the post-order construction should guarantee it).
pub fn negation_intermediates_nonempty(g: &KnowledgeGraph, node: &FolNode) -> bool {
    match node {
        FolNode::Anchor(_) => true,
        FolNode::Projection { child, .. } => negation_intermediates_nonempty(g, child),
        FolNode::Union(children) => children
            .iter()
            .all(|c| negation_intermediates_nonempty(g, c)),
        FolNode::Intersection(children) => {
            if children.iter().any(|c| matches!(c, FolNode::Negation(_)))
                && eval::eval_node(g, node).is_empty()
            {
                return false;
            }
            children.iter().all(|c| match c {
                FolNode::Negation(inner) => negation_intermediates_nonempty(g, inner),
                plain => negation_intermediates_nonempty(g, plain),
            })
        }
        FolNode::Negation(inner) => negation_intermediates_nonempty(g, inner),
    }
}

/// Outcome counters for one batch.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BatchStats {
    pub attempts: usize,
    pub duplicates: usize,
    /// Failure counts by stage, sorted by stage name.
    pub failures: Vec<(String, usize)>,
}

/// Draws exactly `n` unique samples of `tag`, or fails with a shortfall
/// report. Unique means distinct slot bindings. Deterministic in `seed`.
pub fn sample_batch(
    g: &KnowledgeGraph,
    tag: PatternTag,
    n: usize,
    seed: u64,
    max_attempts: usize,
    answer_cap: usize,
) -> Result<(Vec<InstantiatedSample>, BatchStats)> {
    if n == 0 {
        return Err(Error::Config {
            field: "per_pattern".into(),
            message: "sample count must be at least 1".into(),
        });
    }
    let mut rng = derive_rng(seed, &format!("sample/{tag}"));
    let mut out: Vec<InstantiatedSample> = Vec::with_capacity(n);
    let mut seen: std::collections::HashSet<Bindings> = std::collections::HashSet::new();
    let mut stats = BatchStats::default();
    let mut failures: std::collections::BTreeMap<&'static str, usize> =
        std::collections::BTreeMap::new();

    while out.len() < n {
        if stats.attempts >= max_attempts {
            stats.failures = failures
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            return Err(Error::SampleShortfall {
                pattern: tag.to_string(),
                requested: n,
                got: out.len(),
                attempts: stats.attempts,
                duplicates: stats.duplicates,
            });
        }
        stats.attempts += 1;
        match instantiate(g, tag, &mut rng, answer_cap) {
            Ok((query, root, subgraph)) => {
                if seen.insert(query.bindings().clone()) {
                    out.push(InstantiatedSample {
                        query,
                        root,
                        subgraph,
                        provenance: SampleProvenance {
                            seed,
                            attempt: stats.attempts,
                        },
                    });
                } else {
                    stats.duplicates += 1;
                }
            }
            Err(failure) => {
                *failures.entry(failure.stage).or_default() += 1;
            }
        }
    }
    stats.failures = failures
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fol::brute::brute_force_evaluate;
    use crate::kg::RelationId;
    use crate::patterns::ALL_PATTERNS;

    fn dense_graph(seed: u64) -> KnowledgeGraph {
        // Dense enough that every pattern instantiates.
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entities = 120;
        let relations = 10;
        let mut triples = Vec::new();
        for _ in 0..1000 {
            triples.push((
                format!("e{}", rng.gen_range(0..entities)),
                format!("r{}", rng.gen_range(0..relations)),
                format!("e{}", rng.gen_range(0..entities)),
            ));
        }
        KnowledgeGraph::from_labels(&triples)
    }

    #[test]
    fn one_p_on_single_triple_graph_matches_the_only_edge() {
        use rand::SeedableRng;
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let a = g.entity_id("a").unwrap();
        let b = g.entity_id("b").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut roots_seen = Vec::new();
        for _ in 0..20 {
            let (query, root, subgraph) =
                instantiate(&g, PatternTag::OneP, &mut rng, 100).expect("always matchable");
            // The only edge supports two matches: root b via r, root a via r⁻¹.
            let anchor = query.bindings().anchors[0];
            let direction = query.bindings().relations[0].direction;
            if root == b {
                assert_eq!((anchor, direction), (a, Direction::Forward));
            } else {
                assert_eq!((root, anchor, direction), (a, b, Direction::Inverse));
            }
            assert_eq!(
                subgraph,
                vec![Triple {
                    head: a,
                    relation: RelationId(0),
                    tail: b
                }]
            );
            assert!(evaluate(&g, &query).unwrap().contains(root));
            roots_seen.push(root);
        }
        assert!(roots_seen.contains(&a) && roots_seen.contains(&b));
    }

    #[test]
    fn two_i_with_single_incoming_pair_fails_as_duplicate() {
        use rand::SeedableRng;
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            match instantiate(&g, PatternTag::TwoI, &mut rng, 100) {
                Err(f) => assert!(
                    f.stage == "duplicate-branch" || f.stage == "projection-no-incoming",
                    "unexpected stage {}",
                    f.stage
                ),
                Ok(_) => panic!("2i cannot instantiate without two distinct branch bindings"),
            }
        }
    }

    #[test]
    fn zero_count_rejected() {
        let g = dense_graph(1);
        assert!(matches!(
            sample_batch(&g, PatternTag::OneP, 0, 7, 100, 100),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn batches_are_deterministic_and_unique() {
        let g = dense_graph(2);
        let (a, _) = sample_batch(&g, PatternTag::TwoI, 25, 42, 2500, 100).unwrap();
        let (b, _) = sample_batch(&g, PatternTag::TwoI, 25, 42, 2500, 100).unwrap();
        assert_eq!(a.len(), 25);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.query, y.query);
            assert_eq!(x.root, y.root);
            assert_eq!(x.subgraph, y.subgraph);
        }
        let mut keys: Vec<_> = a.iter().map(|s| s.query.bindings().clone()).collect();
        let before = keys.len();
        keys.sort_by(|x, y| format!("{x:?}").cmp(&format!("{y:?}")));
        keys.dedup();
        assert_eq!(keys.len(), before);
    }

    #[test]
    fn samples_are_self_witnessing_and_subgraphs_valid() {
        let g = dense_graph(3);
        for tag in ALL_PATTERNS {
            let (samples, _) = sample_batch(&g, tag, 20, 11, 20 * 200, 100)
                .unwrap_or_else(|e| panic!("{tag}: {e}"));
            for s in &samples {
                let answers = evaluate(&g, &s.query).unwrap();
                assert!(answers.contains(s.root), "{tag}: root not in answers");
                assert!(!answers.is_empty() && answers.len() <= 100);
                for t in &s.subgraph {
                    assert!(g.contains_triple(t), "{tag}: phantom subgraph triple");
                }
                assert!(negation_intermediates_nonempty(&g, s.query.root()));
                // Sampled answers also agree with the exhaustive oracle.
                assert_eq!(
                    answers,
                    brute_force_evaluate(&g, &s.query).unwrap(),
                    "{tag}"
                );
            }
        }
    }

    #[test]
    fn oversized_answer_sets_are_rejected_by_the_cap() {
        use rand::SeedableRng;
        // One hub with 40 out-edges: any 1p match through it exceeds a cap of 10.
        let mut triples: Vec<(String, String, String)> = (0..40)
            .map(|i| ("hub".to_string(), "r".to_string(), format!("t{i}")))
            .collect();
        triples.push(("x".to_string(), "r".to_string(), "hub".to_string()));
        let g = KnowledgeGraph::from_labels(&triples);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut saw_cap = false;
        for _ in 0..200 {
            match instantiate(&g, PatternTag::OneP, &mut rng, 10) {
                Err(f) if f.stage == "answer-cap" => saw_cap = true,
                Err(_) => {}
                Ok((query, ..)) => {
                    assert!(evaluate(&g, &query).unwrap().len() <= 10);
                }
            }
        }
        assert!(saw_cap, "cap rejection never triggered");
    }

    #[test]
    fn shortfall_reports_counts() {
        let g = KnowledgeGraph::from_labels(&[("a", "r", "b")]);
        let err = sample_batch(&g, PatternTag::TwoI, 5, 7, 40, 100).unwrap_err();
        match err {
            Error::SampleShortfall {
                requested,
                got,
                attempts,
                ..
            } => {
                assert_eq!(requested, 5);
                assert_eq!(got, 0);
                assert_eq!(attempts, 40);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
