use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::structgraph::elements::element_class;
use crate::structgraph::{distance, BatchedGraph};

/// Masked set `M`, its incident edges `E_M`, and the reconstruction targets.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    /// Per-atom flag.
    pub mask: Vec<bool>,
    /// Masked atom indices, ascending.
    pub atoms: Vec<usize>,
    /// Element class of each masked atom.
    pub element_targets: Vec<usize>,
    /// Undirected edges `(i, j)`, `i < j`, with at least one masked endpoint.
    pub edges: Vec<(usize, usize)>,
    /// True `‖r_i − r_j‖` per masked edge.
    pub distances: Vec<f64>,
    /// Sampled `ε` per masked edge.
    pub noise: Vec<[f64; 3]>,
    /// `(r_i − r_j)/d_ij + ε` per masked edge.
    pub noisy_directions: Vec<[f64; 3]>,
}

/// Grows seeded breadth-first regions in every graph until at least
/// `⌈fraction · N_g⌉` atoms (and at least one) are masked.
pub fn mask_regions(
    batch: &BatchedGraph,
    fraction: f64,
    region_atoms: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<MaskedBatch> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask fraction {fraction} must lie in (0, 1)"
        )));
    }
    if region_atoms == 0 {
        return Err(Error::InvalidArgument("mask region size must be positive".into()));
    }
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch.len();
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in &batch.edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let mut mask = vec![false; n];
    for g in 0..batch.graph_count() {
        let nodes = batch.nodes(g);
        let target = ((fraction * nodes.len() as f64).ceil() as usize).clamp(1, nodes.len());
        let mut covered = 0;
        while covered < target {
            let free: Vec<usize> = nodes.clone().filter(|&i| !mask[i]).collect();
            let seed_atom = free[rng.random_range(0..free.len())];
            let origin = batch.coords[seed_atom];
            let mut queue = VecDeque::from([seed_atom]);
            let mut grown = 0;
            while let Some(v) = queue.pop_front() {
                if mask[v] {
                    continue;
                }
                mask[v] = true;
                covered += 1;
                grown += 1;
                if covered == target || grown == region_atoms {
                    break;
                }
                let mut next: Vec<usize> = adjacency[v].iter().copied().filter(|&w| !mask[w]).collect();
                next.sort_by(|&a, &b| {
                    distance(&batch.coords[a], &origin)
                        .total_cmp(&distance(&batch.coords[b], &origin))
                        .then(a.cmp(&b))
                });
                queue.extend(next);
            }
        }
    }
    let atoms: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let element_targets = atoms.iter().map(|&i| element_class(batch.atoms[i].element)).collect();
    let edges: Vec<(usize, usize)> = batch
        .edges
        .iter()
        .copied()
        .filter(|&(a, b)| mask[a] || mask[b])
        .collect();
    let mut distances = Vec::with_capacity(edges.len());
    let mut noise = Vec::with_capacity(edges.len());
    let mut noisy_directions = Vec::with_capacity(edges.len());
    for &(a, b) in &edges {
        let (ra, rb) = (batch.coords[a], batch.coords[b]);
        let d = distance(&ra, &rb);
        let eps = [0; 3].map(|_| normal.sample(&mut rng));
        distances.push(d);
        noise.push(eps);
        noisy_directions.push([0, 1, 2].map(|k| (ra[k] - rb[k]) / d + eps[k]));
    }
    Ok(MaskedBatch {
        mask,
        atoms,
        element_targets,
        edges,
        distances,
        noise,
        noisy_directions,
    })
}
