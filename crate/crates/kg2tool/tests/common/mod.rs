//! Shared fixtures for integration tests: seeded synthetic triple files.

// Each test binary compiles its own copy; not all of them use every fixture.
#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a dense random TSV graph; dense enough that all 14 patterns
/// instantiate with healthy success rates.
pub fn write_random_kg(
    dir: &Path,
    name: &str,
    entities: usize,
    relations: usize,
    triples: usize,
    seed: u64,
) -> PathBuf {
    let path = dir.join(name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let file = std::fs::File::create(&path).unwrap();
    let mut w = std::io::BufWriter::new(file);
    for _ in 0..triples {
        writeln!(
            w,
            "e{:05}\tr{:04}\te{:05}",
            rng.gen_range(0..entities),
            rng.gen_range(0..relations),
            rng.gen_range(0..entities)
        )
        .unwrap();
    }
    w.flush().unwrap();
    path
}

/// A ~1k-triple graph: the workhorse for oracle and round-trip tests.
pub fn write_small_kg(dir: &Path) -> PathBuf {
    write_random_kg(dir, "small.tsv", 150, 12, 1000, 2024)
}

/// A graph big enough to draw 100 unique samples per pattern.
pub fn write_medium_kg(dir: &Path) -> PathBuf {
    write_random_kg(dir, "medium.tsv", 700, 25, 7000, 4048)
}
