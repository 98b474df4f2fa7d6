//! Fixed-column PDB `ATOM` record reader.

use std::collections::HashMap;

use super::elements::{atomic_number, atomic_number_ci};
use super::radius::{build_radius_graph, DEFAULT_CUTOFF};
use super::vocab;
use super::{Atom, AtomGraph, Modality};
use crate::error::{Error, Result};

struct Record {
    name: String,
    residue: String,
    chain: char,
    /// Residue sequence number plus insertion code, used only to detect
    /// residue boundaries.
    residue_key: (String, char),
    coord: [f64; 3],
    element: String,
}

fn pdb_err(line: usize, message: impl Into<String>) -> Error {
    Error::Pdb {
        line,
        message: message.into(),
    }
}

fn field(line: &str, range: std::ops::Range<usize>) -> &str {
    let end = range.end.min(line.len());
    line.get(range.start.min(end)..end).unwrap_or("")
}

fn parse_record(line: &str, number: usize) -> Result<Record> {
    if !line.is_ascii() {
        return Err(pdb_err(number, "non-ASCII characters in ATOM record"));
    }
    if line.len() < 54 {
        return Err(pdb_err(
            number,
            format!("line has {} columns, coordinates need 54", line.len()),
        ));
    }
    let coord_field = |r: std::ops::Range<usize>, axis: &str| -> Result<f64> {
        let raw = field(line, r).trim();
        let v: f64 = raw
            .parse()
            .map_err(|_| pdb_err(number, format!("unparsable {axis} coordinate '{raw}'")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(pdb_err(number, format!("non-finite {axis} coordinate")))
        }
    };
    Ok(Record {
        name: field(line, 12..16).to_string(),
        residue: field(line, 17..20).trim().to_string(),
        chain: line.as_bytes()[21] as char,
        residue_key: (
            field(line, 22..26).trim().to_string(),
            line.as_bytes()[26] as char,
        ),
        coord: [
            coord_field(30..38, "x")?,
            coord_field(38..46, "y")?,
            coord_field(46..54, "z")?,
        ],
        element: field(line, 76..78).trim().to_string(),
    })
}

/// Element from the element columns, or inferred from the 4-column atom
/// name: a blank or digit in column 13 means a one-letter element in column
/// 14; otherwise a two-letter symbol is accepted for non-polymer residues and
/// the first letter is used for standard residues.
fn infer_element(rec: &Record, number: usize) -> Result<u8> {
    if !rec.element.is_empty() {
        return atomic_number_ci(&rec.element)
            .ok_or_else(|| pdb_err(number, format!("unknown element '{}'", rec.element)));
    }
    let raw: Vec<char> = format!("{:<4}", rec.name).chars().collect();
    let letters = |s: &[char]| s.iter().filter(|c| c.is_ascii_alphabetic()).collect::<String>();
    let one = if raw[0] == ' ' || raw[0].is_ascii_digit() {
        letters(&raw[1..2])
    } else {
        let standard = vocab::is_amino_acid(&rec.residue)
            || vocab::is_dna_residue(&rec.residue)
            || vocab::is_rna_residue(&rec.residue);
        let two = letters(&raw[0..2]);
        if !standard && two.len() == 2 {
            if let Some(z) = atomic_number_ci(&two) {
                return Ok(z);
            }
        }
        letters(&raw[0..1])
    };
    atomic_number(&one.to_ascii_uppercase())
        .ok_or_else(|| pdb_err(number, format!("cannot infer element from atom name '{}'", rec.name.trim())))
}

/// Parses `ATOM` records in file order, builds radius edges and centers.
///
/// Other record types (`HETATM`, `TER`, `REMARK`, ...) are skipped.
pub fn parse_pdb_atoms(text: &str) -> Result<AtomGraph> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let is_atom = line.starts_with("ATOM")
            && line.get(4..6.min(line.len())).is_some_and(|s| s.trim().is_empty());
        if is_atom {
            records.push((i + 1, parse_record(line, i + 1)?));
        }
    }
    if records.is_empty() {
        return Err(Error::NoAtomRecords);
    }
    let modality = if records.iter().all(|(_, r)| vocab::is_dna_residue(&r.residue)) {
        Modality::Dna
    } else if records.iter().all(|(_, r)| vocab::is_rna_residue(&r.residue)) {
        Modality::Rna
    } else {
        Modality::Protein
    };

    let mut chains: HashMap<char, usize> = HashMap::new();
    let mut atoms = Vec::with_capacity(records.len());
    let mut coords = Vec::with_capacity(records.len());
    let mut residue_index = 0usize;
    let mut last_residue: Option<(char, (String, char), String)> = None;
    for (number, rec) in &records {
        let next = chains.len();
        let chain_index = *chains.entry(rec.chain).or_insert(next);
        let key = (rec.chain, rec.residue_key.clone(), rec.residue.clone());
        match &last_residue {
            Some(prev) if *prev == key => {}
            Some(_) => residue_index += 1,
            None => {}
        }
        last_residue = Some(key);

        let name = rec.name.trim();
        let nucleic = vocab::is_dna_residue(&rec.residue) || vocab::is_rna_residue(&rec.residue);
        let (is_backbone, is_phosphate_or_ca) = if nucleic {
            (vocab::is_nucleic_backbone(name), vocab::is_phosphate(name))
        } else {
            (vocab::is_protein_backbone(name), name == "CA")
        };
        atoms.push(Atom {
            element: infer_element(rec, *number)?,
            atom_name_id: vocab::atom_name_id(name),
            residue_id: vocab::residue_id(&rec.residue),
            chain_index,
            residue_index,
            is_backbone,
            is_phosphate_or_ca,
        });
        coords.push(rec.coord);
    }
    let mut g = AtomGraph::new(modality, atoms);
    g.coords = Some(coords);
    g.center();
    build_radius_graph(&g, DEFAULT_CUTOFF)
}

/// Writes `ATOM` records for a graph with coordinates. Residue numbers are
/// `residue_index + 1`; chains are lettered from `A`.
pub fn to_pdb(g: &AtomGraph) -> Result<String> {
    let coords = g.coords.as_ref().ok_or(Error::MissingCoordinates(0))?;
    let mut out = String::new();
    for (i, (atom, c)) in g.atoms.iter().zip(coords).enumerate() {
        let element = super::elements::symbol(atom.element).unwrap_or("X").to_ascii_uppercase();
        let chain = (b'A' + (atom.chain_index % 26) as u8) as char;
        out.push_str(&format_atom_record(
            i + 1,
            atom.name(),
            atom.residue(),
            chain,
            atom.residue_index + 1,
            *c,
            &element,
        ));
        out.push('\n');
    }
    Ok(out)
}

/// Formats one fixed-column `ATOM` record.
pub fn format_atom_record(
    serial: usize,
    name: &str,
    residue: &str,
    chain: char,
    residue_seq: usize,
    coord: [f64; 3],
    element: &str,
) -> String {
    let padded = if name.len() < 4 && element.len() == 1 {
        format!(" {name:<3}")
    } else {
        format!("{name:<4}")
    };
    format!(
        "ATOM  {serial:>5} {padded} {residue:>3} {chain}{residue_seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {element:>2}",
        coord[0], coord[1], coord[2]
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom_is_centered() {
        let line = format_atom_record(1, "N", "GLY", 'A', 1, [1.0, 2.0, 3.0], "N");
        let g = parse_pdb_atoms(&line).unwrap();
        assert_eq!(g.coords.unwrap(), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn backbone_flags() {
        let text = [
            format_atom_record(1, "N", "ALA", 'A', 1, [0.0, 0.0, 0.0], "N"),
            format_atom_record(2, "CA", "ALA", 'A', 1, [1.46, 0.0, 0.0], "C"),
        ]
        .join("\n");
        let g = parse_pdb_atoms(&text).unwrap();
        assert!(g.atoms.iter().all(|a| a.is_backbone));
        assert_eq!(
            g.atoms.iter().map(|a| a.is_phosphate_or_ca).collect::<Vec<_>>(),
            [false, true]
        );
        assert_eq!(g.edges, [(0, 1)]);
        assert_eq!(g.modality, Modality::Protein);
    }

    #[test]
    fn hetatm_only_is_rejected() {
        let line = format_atom_record(1, "O", "HOH", 'A', 1, [0.0; 3], "O").replacen("ATOM  ", "HETATM", 1);
        assert_eq!(parse_pdb_atoms(&line).unwrap_err().to_string(), "no ATOM records");
    }

    #[test]
    fn short_and_garbled_lines_report_line_numbers() {
        let good = format_atom_record(1, "N", "ALA", 'A', 1, [0.0; 3], "N");
        let text = format!("REMARK test\n{good}\nATOM      2  CA  ALA A   1       1.000");
        match parse_pdb_atoms(&text).unwrap_err() {
            Error::Pdb { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let bad = good.replacen("   0.000", "   x.000", 1);
        match parse_pdb_atoms(&bad).unwrap_err() {
            Error::Pdb { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("x coordinate"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn element_inference_from_name() {
        let blank = |name: &str, res: &str| {
            let mut l = format_atom_record(1, name, res, 'A', 1, [0.0; 3], "C");
            l.truncate(76);
            parse_pdb_atoms(&l).unwrap().atoms[0].element
        };
        assert_eq!(blank("CA", "ALA"), 6);
        assert_eq!(blank("OP1", "DA"), 8);
        assert_eq!(blank("SG", "CYS"), 16);
    }
}
