//! Deterministic 3-D layout for small molecules.
//!
//! Atoms are seeded breadth-first at bond length from their parent, then a
//! fixed number of projection sweeps pull bonded pairs to the target length
//! and push non-bonded pairs apart. The result is centered and rotated onto
//! its principal axes.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{distance, AtomGraph};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub bond_length: f64,
    /// Separation enforced between non-bonded atoms during relaxation.
    pub repulsion_distance: f64,
    pub iterations: usize,
    /// Fresh seeded starts attempted before giving up.
    pub restarts: usize,
    pub bonded_range: (f64, f64),
    pub min_nonbonded: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            bond_length: 1.5,
            repulsion_distance: 2.5,
            iterations: 200,
            restarts: 8,
            bonded_range: (1.0, 1.8),
            min_nonbonded: 1.8,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

fn initial_layout(adj: &[Vec<usize>], bond: f64, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = adj.len();
    let mut pos = vec![[0.0; 3]; n];
    let mut placed = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0]);
    placed[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !placed[w] {
                let u = random_unit(rng);
                pos[w] = [0, 1, 2].map(|k| pos[v][k] + bond * u[k]);
                placed[w] = true;
                queue.push_back(w);
            }
        }
    }
    pos
}

/// Moves `a` and `b` symmetrically so their distance becomes `target`.
fn project(pos: &mut [[f64; 3]], a: usize, b: usize, target: f64, rng: &mut ChaCha8Rng) {
    let mut d = [0, 1, 2].map(|k| pos[a][k] - pos[b][k]);
    let mut len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if len < 1e-9 {
        d = random_unit(rng);
        len = 1.0;
        for k in 0..3 {
            pos[a][k] += 1e-3 * d[k];
        }
    }
    let shift = 0.5 * (len - target) / len;
    for k in 0..3 {
        pos[a][k] -= shift * d[k];
        pos[b][k] += shift * d[k];
    }
}

fn relax(g: &AtomGraph, cfg: &EmbedConfig, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let adj = g.neighbors();
    let n = g.len();
    let mut pos = initial_layout(&adj, cfg.bond_length, rng);
    let mut bonded = vec![false; n * n];
    for &(a, b) in &g.edges {
        bonded[a * n + b] = true;
        bonded[b * n + a] = true;
    }
    for _ in 0..cfg.iterations {
        for a in 0..n {
            for b in a + 1..n {
                if bonded[a * n + b] {
                    project(&mut pos, a, b, cfg.bond_length, rng);
                } else if distance(&pos[a], &pos[b]) < cfg.repulsion_distance {
                    project(&mut pos, a, b, cfg.repulsion_distance, rng);
                }
            }
        }
    }
    pos
}

fn violations(g: &AtomGraph, pos: &[[f64; 3]], cfg: &EmbedConfig) -> Option<String> {
    let n = g.len();
    let mut bonded = vec![false; n * n];
    for &(a, b) in &g.edges {
        bonded[a * n + b] = true;
        let d = distance(&pos[a], &pos[b]);
        if !(cfg.bonded_range.0..=cfg.bonded_range.1).contains(&d) {
            return Some(format!("bond ({a}, {b}) has length {d:.3}"));
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let d = distance(&pos[a], &pos[b]);
            if !bonded[a * n + b] && d < cfg.min_nonbonded {
                return Some(format!("atoms {a} and {b} only {d:.3} apart"));
            }
        }
    }
    None
}

/// Centers `pos` and rotates it so the principal axes of largest spread
/// align with x, then y, then z. Eigenvector signs are fixed so that each
/// axis' largest-magnitude component is positive, and the frame is kept
/// right-handed.
fn align_principal_axes(pos: &mut [[f64; 3]]) {
    let n = pos.len() as f64;
    let mean = [0, 1, 2].map(|k| pos.iter().map(|p| p[k]).sum::<f64>() / n);
    for p in pos.iter_mut() {
        for k in 0..3 {
            p[k] -= mean[k];
        }
    }
    let mut cov = Matrix3::zeros();
    for p in pos.iter() {
        let v = Vector3::new(p[0], p[1], p[2]);
        cov += v * v.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| {
            let v: Vector3<f64> = eig.eigenvectors.column(i).into();
            let pivot = (0..3)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
                .expect("three components");
            if v[pivot] < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();
    axes[2] = axes[0].cross(&axes[1]);
    for p in pos.iter_mut() {
        let v = Vector3::new(p[0], p[1], p[2]);
        *p = [axes[0].dot(&v), axes[1].dot(&v), axes[2].dot(&v)];
    }
}

/// Assigns deterministic coordinates to a connected molecule graph.
pub fn embed_molecule_coords(g: &AtomGraph, seed: u64, cfg: &EmbedConfig) -> Result<AtomGraph> {
    if g.is_empty() {
        return Err(Error::InvalidGraph("molecule has no atoms".into()));
    }
    if g.component_count() > 1 {
        return Err(Error::DisconnectedMolecule);
    }
    let mut last = String::new();
    for attempt in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut pos = relax(g, cfg, &mut rng);
        align_principal_axes(&mut pos);
        match violations(g, &pos, cfg) {
            None => {
                let mut out = g.clone();
                out.coords = Some(pos);
                return Ok(out);
            }
            Some(v) => last = v,
        }
    }
    Err(Error::EmbeddingFailed(last))
}
