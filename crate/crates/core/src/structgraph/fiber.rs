//! Idealized single-strand nucleic-acid helices built from per-nucleotide
//! templates.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::elements::atomic_number;
use super::radius::{build_radius_graph, DEFAULT_CUTOFF};
use super::vocab;
use super::{Atom, AtomGraph, Modality};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NucleicKind {
    Dna,
    Rna,
}

impl NucleicKind {
    pub fn alphabet(self) -> &'static str {
        match self {
            NucleicKind::Dna => "ACGT",
            NucleicKind::Rna => "ACGU",
        }
    }

    fn key(self) -> &'static str {
        match self {
            NucleicKind::Dna => "dna",
            NucleicKind::Rna => "rna",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            NucleicKind::Dna => Modality::Dna,
            NucleicKind::Rna => Modality::Rna,
        }
    }

    fn residue_name(self, base: char) -> String {
        match self {
            NucleicKind::Dna => format!("D{base}"),
            NucleicKind::Rna => base.to_string(),
        }
    }
}

impl std::str::FromStr for NucleicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dna" => Ok(NucleicKind::Dna),
            "rna" => Ok(NucleicKind::Rna),
            other => Err(Error::InvalidArgument(format!("unknown nucleic kind '{other}'"))),
        }
    }
}

/// Helix step parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberConfig {
    /// Translation per residue along the helix axis, Å.
    pub rise: f64,
    /// Rotation per residue about the helix axis, degrees.
    pub twist_degrees: f64,
}

impl FiberConfig {
    pub fn default_for(kind: NucleicKind) -> Self {
        match kind {
            NucleicKind::Dna => Self {
                rise: 3.38,
                twist_degrees: 36.0,
            },
            NucleicKind::Rna => Self {
                rise: 2.81,
                twist_degrees: 32.7,
            },
        }
    }
}

struct TemplateAtom {
    name: String,
    element: u8,
    local: [f64; 3],
}

type Templates = HashMap<(String, char), Vec<TemplateAtom>>;

const TEMPLATE_TABLE: &str = include_str!("../../data/nucleotides.tsv");

fn templates() -> &'static Templates {
    static CELL: OnceLock<Templates> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut map: Templates = HashMap::new();
        for line in TEMPLATE_TABLE.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            assert_eq!(f.len(), 7, "malformed template row: {line}");
            let base = f[1].chars().next().expect("base letter");
            let coord = |s: &str| s.parse::<f64>().expect("template coordinate");
            map.entry((f[0].to_string(), base)).or_default().push(TemplateAtom {
                name: f[2].to_string(),
                element: atomic_number(f[3]).expect("template element"),
                local: [coord(f[4]), coord(f[5]), coord(f[6])],
            });
        }
        map
    })
}

/// Builds a centered single-strand helix: residue `i` is its template rotated
/// by `i * twist` about z and raised by `i * rise`.
pub fn generate_fiber(sequence: &str, kind: NucleicKind, cfg: &FiberConfig) -> Result<AtomGraph> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    for (position, ch) in sequence.chars().enumerate() {
        if !kind.alphabet().contains(ch) {
            return Err(Error::AlphabetViolation { ch, position });
        }
    }
    let table = templates();
    let mut atoms = Vec::new();
    let mut coords = Vec::new();
    let twist = cfg.twist_degrees.to_radians();
    for (i, base) in sequence.chars().enumerate() {
        let template = &table[&(kind.key().to_string(), base)];
        let (s, c) = (i as f64 * twist).sin_cos();
        let residue = kind.residue_name(base);
        for t in template {
            let [x, y, z] = t.local;
            coords.push([c * x - s * y, s * x + c * y, z + i as f64 * cfg.rise]);
            atoms.push(Atom {
                element: t.element,
                atom_name_id: vocab::atom_name_id(&t.name),
                residue_id: vocab::residue_id(&residue),
                chain_index: 0,
                residue_index: i,
                is_backbone: vocab::is_nucleic_backbone(&t.name),
                is_phosphate_or_ca: vocab::is_phosphate(&t.name),
            });
        }
    }
    let mut g = AtomGraph::new(kind.modality(), atoms);
    g.coords = Some(coords);
    g.center();
    build_radius_graph(&g, DEFAULT_CUTOFF)
}
