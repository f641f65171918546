//! Shared fixtures for unit tests.

use rand::{Rng, SeedableRng};

use crate::kg::KnowledgeGraph;

/// Seeded random graph for scan-oracle and agreement tests.
pub(crate) fn random_graph(triples: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let entities = (triples / 4).max(4);
    let relations = 8;
    let mut labels = Vec::with_capacity(triples);
    for _ in 0..triples {
        labels.push((
            format!("e{}", rng.gen_range(0..entities)),
            format!("r{}", rng.gen_range(0..relations)),
            format!("e{}", rng.gen_range(0..entities)),
        ));
    }
    KnowledgeGraph::from_labels(&labels)
}
