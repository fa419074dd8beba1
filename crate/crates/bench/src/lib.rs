//! Shared inputs for the benchmarks.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anomalygen_core::callgraph::random_graph;
use anomalygen_core::CallGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/corpus")
}

pub fn seeded_graph(seed: u64, nodes: usize, edges: usize, p_direct: f64) -> (CallGraph, BTreeSet<usize>) {
    random_graph(&mut ChaCha8Rng::seed_from_u64(seed), nodes, edges, p_direct)
}
