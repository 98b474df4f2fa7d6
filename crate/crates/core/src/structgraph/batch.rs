use std::ops::Range;

use super::{Atom, AtomGraph, Modality};
use crate::error::{Error, Result};

/// Concatenation of several graphs with per-atom graph assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedGraph {
    pub atoms: Vec<Atom>,
    pub coords: Vec<[f64; 3]>,
    /// Undirected edges in global atom indices, `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
    /// Graph index of every atom; non-decreasing.
    pub batch: Vec<usize>,
    pub modalities: Vec<Modality>,
    ranges: Vec<Range<usize>>,
    edge_ranges: Vec<Range<usize>>,
}

impl BatchedGraph {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn graph_count(&self) -> usize {
        self.ranges.len()
    }

    /// Node index set `I_g` as a contiguous range.
    pub fn nodes(&self, g: usize) -> Range<usize> {
        self.ranges[g].clone()
    }

    pub fn graph_len(&self, g: usize) -> usize {
        self.ranges[g].len()
    }

    /// Edges of graph `g`, still in global indices.
    pub fn graph_edges(&self, g: usize) -> &[(usize, usize)] {
        &self.edges[self.edge_ranges[g].clone()]
    }

    /// Splits the batch back into its graphs.
    pub fn unbatch(&self) -> Vec<AtomGraph> {
        (0..self.graph_count())
            .map(|g| {
                let r = self.nodes(g);
                let off = r.start;
                AtomGraph {
                    modality: self.modalities[g],
                    atoms: self.atoms[r.clone()].to_vec(),
                    coords: Some(self.coords[r].to_vec()),
                    edges: self
                        .graph_edges(g)
                        .iter()
                        .map(|&(a, b)| (a - off, b - off))
                        .collect(),
                }
            })
            .collect()
    }

    /// Copy with replaced coordinates (same atom order).
    pub fn with_coords(&self, coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.len() != self.len() {
            return Err(Error::shape(
                "with_coords",
                format!("{} rows for {} atoms", coords.len(), self.len()),
            ));
        }
        Ok(Self {
            coords,
            ..self.clone()
        })
    }
}

/// Concatenates graphs in list order.
pub fn batch_graphs(graphs: &[AtomGraph]) -> Result<BatchedGraph> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("cannot batch an empty graph list".into()));
    }
    let mut out = BatchedGraph {
        atoms: Vec::new(),
        coords: Vec::new(),
        edges: Vec::new(),
        batch: Vec::new(),
        modalities: Vec::new(),
        ranges: Vec::new(),
        edge_ranges: Vec::new(),
    };
    for (g, graph) in graphs.iter().enumerate() {
        let coords = graph.coords.as_ref().ok_or(Error::MissingCoordinates(g))?;
        graph.validate()?;
        let off = out.atoms.len();
        let e0 = out.edges.len();
        out.atoms.extend(graph.atoms.iter().cloned());
        out.coords.extend(coords.iter().copied());
        out.edges.extend(graph.edges.iter().map(|&(a, b)| (a + off, b + off)));
        out.batch.extend(std::iter::repeat(g).take(graph.len()));
        out.modalities.push(graph.modality);
        out.ranges.push(off..out.atoms.len());
        out.edge_ranges.push(e0..out.edges.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> AtomGraph {
        let mut g = AtomGraph::new(Modality::Molecule, vec![Atom::molecular(6, false); n]);
        g.coords = Some((0..n).map(|i| [i as f64, 0.0, 0.0]).collect());
        g.set_edges((1..n).map(|i| (i - 1, i)));
        g
    }

    #[test]
    fn batch_vector_and_round_trip() {
        let gs = vec![chain(3), chain(5)];
        let b = batch_graphs(&gs).unwrap();
        assert_eq!(b.batch, [0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(b.nodes(1), 3..8);
        assert_eq!(b.unbatch(), gs);
        let single = batch_graphs(&[chain(4)]).unwrap();
        assert!(single.batch.iter().all(|&g| g == 0));
    }

    #[test]
    fn missing_coordinates_are_rejected() {
        let mut g = chain(2);
        g.coords = None;
        assert!(matches!(batch_graphs(&[chain(1), g]), Err(Error::MissingCoordinates(1))));
    }
}
