//! Fixed atom-name and residue vocabularies. Unknown strings map to `misc` (id 0).

use std::collections::HashMap;
use std::sync::OnceLock;

pub const MISC: usize = 0;

const ATOM_NAMES: &[&str] = &[
    "misc",
    // element symbols used as names for small-molecule atoms
    "H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I", "Na", "K", "Mg", "Ca",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    // aromatic SMILES atoms
    "b", "c", "n", "o", "p", "s", "se", "as",
    // protein heavy atoms
    "CA", "CB", "CG", "CG1", "CG2", "CD", "CD1", "CD2", "CE", "CE1", "CE2", "CE3", "CZ", "CZ2",
    "CZ3", "CH2", "ND1", "ND2", "NE", "NE1", "NE2", "NH1", "NH2", "NZ", "OD1", "OD2", "OE1",
    "OE2", "OG", "OG1", "OH", "SD", "SG", "OXT",
    // sugar-phosphate backbone
    "OP1", "OP2", "OP3", "O5'", "C5'", "C4'", "O4'", "C3'", "O3'", "C2'", "O2'", "C1'",
    // nucleobases
    "N1", "N2", "N3", "N4", "N6", "N7", "N9", "C2", "C4", "C5", "C6", "C7", "C8", "O2", "O4",
    "O6",
];

const RESIDUES: &[&str] = &[
    "misc", "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS",
    "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL", "DA", "DC", "DG", "DT", "A", "C", "G",
    "U", "MOL",
];

/// Residue name given to every small-molecule atom.
pub const MOLECULE_RESIDUE: &str = "MOL";

fn index(table: &'static [&'static str], cell: &'static OnceLock<HashMap<&'static str, usize>>) -> &'static HashMap<&'static str, usize> {
    cell.get_or_init(|| table.iter().enumerate().map(|(i, s)| (*s, i)).collect())
}

static ATOM_INDEX: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();
static RESIDUE_INDEX: OnceLock<HashMap<&'static str, usize>> = OnceLock::new();

pub fn atom_name_id(name: &str) -> usize {
    index(ATOM_NAMES, &ATOM_INDEX).get(name).copied().unwrap_or(MISC)
}

pub fn atom_name(id: usize) -> &'static str {
    ATOM_NAMES.get(id).copied().unwrap_or(ATOM_NAMES[MISC])
}

pub fn atom_name_count() -> usize {
    ATOM_NAMES.len()
}

pub fn residue_id(name: &str) -> usize {
    index(RESIDUES, &RESIDUE_INDEX).get(name).copied().unwrap_or(MISC)
}

pub fn residue_name(id: usize) -> &'static str {
    RESIDUES.get(id).copied().unwrap_or(RESIDUES[MISC])
}

pub fn residue_count() -> usize {
    RESIDUES.len()
}

pub fn is_amino_acid(residue: &str) -> bool {
    let id = residue_id(residue);
    (1..=20).contains(&id)
}

pub fn is_dna_residue(residue: &str) -> bool {
    matches!(residue, "DA" | "DC" | "DG" | "DT")
}

pub fn is_rna_residue(residue: &str) -> bool {
    matches!(residue, "A" | "C" | "G" | "U")
}

/// Sugar-phosphate backbone atom names of a nucleotide.
pub fn is_nucleic_backbone(name: &str) -> bool {
    matches!(
        name,
        "P" | "OP1" | "OP2" | "OP3" | "O5'" | "C5'" | "C4'" | "O4'" | "C3'" | "O3'" | "C2'" | "O2'" | "C1'"
    )
}

/// Atoms of the phosphate group.
pub fn is_phosphate(name: &str) -> bool {
    matches!(name, "P" | "OP1" | "OP2" | "OP3")
}

pub fn is_protein_backbone(name: &str) -> bool {
    matches!(name, "N" | "CA" | "C" | "O")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_are_unique() {
        let mut seen = std::collections::HashSet::new();
        for (i, n) in ATOM_NAMES.iter().enumerate() {
            assert!(seen.insert(n), "duplicate {n}");
            assert_eq!(atom_name_id(n), i);
        }
        for (i, r) in RESIDUES.iter().enumerate() {
            assert_eq!(residue_id(r), i);
        }
        assert_eq!(atom_name_id("HG21"), MISC);
        assert_eq!(residue_id("HOH"), MISC);
        assert_eq!(atom_name(atom_name_id("c")), "c");
    }
}
