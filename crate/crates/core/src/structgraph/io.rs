//! Canonical graph JSON interchange.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::elements::{atomic_number_ci, symbol};
use super::vocab;
use super::{Atom, AtomGraph, Modality};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomFlags {
    pub backbone: bool,
    pub phos_or_ca: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub element: String,
    pub name: String,
    pub residue: String,
    pub chain: usize,
    pub residue_index: usize,
    pub flags: AtomFlags,
}

/// On-disk graph: coordinates in Å, edges as `[i, j]` pairs.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct GraphFile {
    pub modality: Modality,
    pub atoms: Vec<AtomRecord>,
    #[serde(default)]
    pub coords: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct GraphFileOut<'a> {
    modality: Modality,
    atoms: &'a [AtomRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<[Box<RawValue>; 3]>>,
    edges: Vec<[usize; 2]>,
}

fn fixed6(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.6}")).expect("formatted float is valid JSON")
}

impl GraphFile {
    pub fn from_graph(g: &AtomGraph) -> Self {
        let atoms = g
            .atoms
            .iter()
            .map(|a| AtomRecord {
                element: symbol(a.element).unwrap_or("X").to_string(),
                name: a.name().to_string(),
                residue: a.residue().to_string(),
                chain: a.chain_index,
                residue_index: a.residue_index,
                flags: AtomFlags {
                    backbone: a.is_backbone,
                    phos_or_ca: a.is_phosphate_or_ca,
                },
            })
            .collect();
        Self {
            modality: g.modality,
            atoms,
            coords: g.coords.clone(),
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    pub fn into_graph(self) -> Result<AtomGraph> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, r) in self.atoms.iter().enumerate() {
            let element = atomic_number_ci(&r.element).ok_or_else(|| {
                Error::InvalidGraph(format!("atom {i}: unknown element '{}'", r.element))
            })?;
            atoms.push(Atom {
                element,
                atom_name_id: vocab::atom_name_id(&r.name),
                residue_id: vocab::residue_id(&r.residue),
                chain_index: r.chain,
                residue_index: r.residue_index,
                is_backbone: r.flags.backbone,
                is_phosphate_or_ca: r.flags.phos_or_ca,
            });
        }
        let mut g = AtomGraph::new(self.modality, atoms);
        g.coords = self.coords;
        let n = g.len();
        if let Some(&[a, b]) = self.edges.iter().find(|[a, b]| a >= &n || b >= &n || a == b) {
            return Err(Error::InvalidGraph(format!("bad edge [{a}, {b}] for {n} atoms")));
        }
        g.set_edges(self.edges.iter().map(|&[a, b]| (a, b)));
        g.validate()?;
        Ok(g)
    }

    /// Pretty JSON with coordinates written to six decimals.
    pub fn to_json(&self) -> Result<String> {
        let out = GraphFileOut {
            modality: self.modality,
            atoms: &self.atoms,
            coords: self
                .coords
                .as_ref()
                .map(|c| c.iter().map(|p| p.map(fixed6)).collect()),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }
}

pub fn write_graph(path: &Path, g: &AtomGraph) -> Result<()> {
    let text = GraphFile::from_graph(g).to_json()?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_graph(path: &Path) -> Result<AtomGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GraphFile = serde_json::from_str(&text)?;
    file.into_graph()
}
