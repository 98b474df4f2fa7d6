//! All-atom graphs: SMILES molecules, PDB atom records, idealized nucleic-acid
//! fibers, radius graphs and batching.

mod batch;
mod embed;
pub mod elements;
mod fiber;
mod io;
mod pdb;
mod radius;
mod smiles;
pub mod vocab;

pub use batch::{batch_graphs, BatchedGraph};
pub use embed::{embed_molecule_coords, EmbedConfig};
pub use fiber::{generate_fiber, FiberConfig, NucleicKind};
pub use io::{read_graph, write_graph, GraphFile};
pub use pdb::{format_atom_record, parse_pdb_atoms, to_pdb};
pub use radius::{build_radius_graph, DEFAULT_CUTOFF};
pub use smiles::parse_smiles;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Molecule,
    Protein,
    Dna,
    Rna,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Molecule,
        Modality::Protein,
        Modality::Dna,
        Modality::Rna,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Molecule => "molecule",
            Modality::Protein => "protein",
            Modality::Dna => "dna",
            Modality::Rna => "rna",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-atom categorical features.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Atomic number, at least 1.
    pub element: u8,
    pub atom_name_id: usize,
    pub residue_id: usize,
    pub chain_index: usize,
    pub residue_index: usize,
    pub is_backbone: bool,
    pub is_phosphate_or_ca: bool,
}

impl Atom {
    /// Small-molecule atom: name is the element symbol, or the lowercase
    /// symbol when aromatic.
    pub fn molecular(element: u8, aromatic: bool) -> Self {
        let sym = elements::symbol(element).unwrap_or("misc");
        let name = if aromatic {
            sym.to_ascii_lowercase()
        } else {
            sym.to_string()
        };
        Self {
            element,
            atom_name_id: vocab::atom_name_id(&name),
            residue_id: vocab::residue_id(vocab::MOLECULE_RESIDUE),
            chain_index: 0,
            residue_index: 0,
            is_backbone: false,
            is_phosphate_or_ca: false,
        }
    }

    pub fn name(&self) -> &'static str {
        vocab::atom_name(self.atom_name_id)
    }

    pub fn residue(&self) -> &'static str {
        vocab::residue_name(self.residue_id)
    }
}

/// Atoms, optional coordinates (Å) and undirected edges stored as `(i, j)`
/// with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomGraph {
    pub modality: Modality,
    pub atoms: Vec<Atom>,
    pub coords: Option<Vec<[f64; 3]>>,
    pub edges: Vec<(usize, usize)>,
}

impl AtomGraph {
    pub fn new(modality: Modality, atoms: Vec<Atom>) -> Self {
        Self {
            modality,
            atoms,
            coords: None,
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Replaces the edge list with the normalized, deduplicated form of `edges`.
    pub fn set_edges(&mut self, edges: impl IntoIterator<Item = (usize, usize)>) {
        let mut e: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        e.sort_unstable();
        e.dedup();
        self.edges = e;
    }

    /// Checks every structural invariant of the graph.
    pub fn validate(&self) -> Result<()> {
        let n = self.atoms.len();
        if let Some(c) = &self.coords {
            if c.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "{} coordinate rows for {n} atoms",
                    c.len()
                )));
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGraph("non-finite coordinate".into()));
            }
        }
        if let Some(a) = self.atoms.iter().find(|a| a.element == 0) {
            return Err(Error::InvalidGraph(format!("atomic number 0 in {a:?}")));
        }
        let mut prev = None;
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range {n}")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            if a > b {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) not normalized")));
            }
            if prev.is_some_and(|p| p >= (a, b)) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) duplicated or out of order"
                )));
            }
            prev = Some((a, b));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        let c = self.coords.as_ref()?;
        if c.is_empty() {
            return None;
        }
        let mut m = [0.0; 3];
        for p in c {
            for k in 0..3 {
                m[k] += p[k];
            }
        }
        Some(m.map(|v| v / c.len() as f64))
    }

    /// Subtracts the coordinate mean.
    pub fn center(&mut self) {
        let Some(m) = self.centroid() else {
            return;
        };
        if let Some(c) = self.coords.as_mut() {
            for p in c.iter_mut() {
                for k in 0..3 {
                    p[k] -= m[k];
                }
            }
        }
    }

    /// Adjacency lists derived from the edge set.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Number of connected components of the edge graph (0 for an empty graph).
    pub fn component_count(&self) -> usize {
        let adj = self.neighbors();
        let mut seen = vec![false; adj.len()];
        let mut count = 0;
        for start in 0..adj.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

/// Euclidean distance in Å.
pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centering_is_idempotent() {
        let mut g = AtomGraph::new(Modality::Molecule, vec![Atom::molecular(6, false); 3]);
        g.coords = Some(vec![[1.0, 2.0, 3.0], [4.0, -1.0, 0.5], [0.0, 0.0, 9.0]]);
        g.center();
        let once = g.coords.clone();
        let m = g.centroid().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        g.center();
        let twice = g.coords.clone().unwrap();
        for (a, b) in once.unwrap().iter().zip(&twice) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn validation_catches_bad_edges() {
        let mut g = AtomGraph::new(Modality::Molecule, vec![Atom::molecular(6, false); 2]);
        g.edges = vec![(0, 0)];
        assert!(g.validate().is_err());
        g.edges = vec![(0, 2)];
        assert!(g.validate().is_err());
        g.edges = vec![(0, 1), (0, 1)];
        assert!(g.validate().is_err());
        g.set_edges([(1, 0), (0, 1)]);
        assert_eq!(g.edges, vec![(0, 1)]);
        g.validate().unwrap();
    }
}
