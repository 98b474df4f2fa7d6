//! Benchmark fixtures shared by the criterion targets.

use geotok::harness::carbon_chain;
use geotok::structgraph::{batch_graphs, BatchedGraph, DEFAULT_CUTOFF};
use geotok::trainer::prepare_graph;

/// Batched carbon chain of `n` atoms with radius edges.
pub fn chain_batch(n: usize) -> BatchedGraph {
    let g = prepare_graph(&carbon_chain(n), DEFAULT_CUTOFF).expect("chain is a valid graph");
    batch_graphs(&[g]).expect("single graph batches")
}
