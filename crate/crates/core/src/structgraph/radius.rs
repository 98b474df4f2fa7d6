use super::{distance, AtomGraph, Modality};
use crate::error::{Error, Result};

/// Connectivity radius in Å, shared with the RBF range.
pub const DEFAULT_CUTOFF: f64 = 10.0;

/// Adds an undirected edge for every atom pair within `cutoff` (inclusive).
///
/// Existing molecule bonds are kept; other modalities' edge lists are
/// replaced by the radius edges.
pub fn build_radius_graph(g: &AtomGraph, cutoff: f64) -> Result<AtomGraph> {
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::InvalidArgument(format!("cutoff must be positive, got {cutoff}")));
    }
    let coords = g.coords.as_ref().ok_or(Error::MissingCoordinates(0))?;
    let mut edges = Vec::new();
    for a in 0..coords.len() {
        for b in a + 1..coords.len() {
            if distance(&coords[a], &coords[b]) <= cutoff {
                edges.push((a, b));
            }
        }
    }
    if g.modality == Modality::Molecule {
        edges.extend(g.edges.iter().copied());
    }
    let mut out = g.clone();
    out.set_edges(edges);
    Ok(out)
}
