//! Parser for a SMILES subset: organic-subset and aromatic atoms, simple
//! bracket atoms, bonds `- = # :`, branches, ring closures (`0-9`, `%nn`) and
//! `.` separators. Hydrogens are never materialized.

use std::collections::BTreeMap;

use super::elements::atomic_number;
use super::{Atom, AtomGraph, Modality};
use crate::error::{Error, Result};

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Smiles {
        offset,
        message: message.into(),
    }
}

/// Organic-subset symbols, two-letter forms first so `Cl` wins over `C`.
const ORGANIC: [&str; 10] = ["Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC: [(&str, u8); 8] = [
    ("se", 34),
    ("as", 33),
    ("b", 5),
    ("c", 6),
    ("n", 7),
    ("o", 8),
    ("p", 15),
    ("s", 16),
];

struct OpenRing {
    atom: usize,
    offset: usize,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    edges: Vec<(usize, usize)>,
    seen: std::collections::HashSet<(usize, usize)>,
    /// Offsets of open '(' paired with the atom the branch hangs from.
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, OpenRing>,
    prev: Option<usize>,
    /// Offset of a bond symbol not yet attached to a following atom.
    pending_bond: Option<usize>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn starts_with(&self, s: &str) -> bool {
        self.text[self.pos..].starts_with(s.as_bytes())
    }

    fn bond(&mut self, a: usize, b: usize, offset: usize) -> Result<()> {
        if a == b {
            return Err(err(offset, "ring closure bonds an atom to itself"));
        }
        let key = (a.min(b), a.max(b));
        if !self.seen.insert(key) {
            return Err(err(offset, format!("duplicate bond between atoms {} and {}", key.0, key.1)));
        }
        self.edges.push(key);
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, offset: usize) -> Result<()> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(p) = self.prev {
            self.bond(p, idx, offset)?;
        }
        self.pending_bond = None;
        self.prev = Some(idx);
        Ok(())
    }

    fn organic(&mut self) -> Result<Option<Atom>> {
        for sym in ORGANIC {
            if self.starts_with(sym) {
                self.pos += sym.len();
                let z = atomic_number(sym).expect("organic symbol");
                return Ok(Some(Atom::molecular(z, false)));
            }
        }
        for (sym, z) in AROMATIC {
            // Two-letter aromatic forms only exist inside brackets.
            if sym.len() == 1 && self.starts_with(sym) {
                self.pos += 1;
                return Ok(Some(Atom::molecular(z, true)));
            }
        }
        Ok(None)
    }

    fn bracket(&mut self) -> Result<Atom> {
        let open = self.pos;
        self.pos += 1;
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(err(self.pos, "isotopes are not supported"));
        }
        let start = self.pos;
        let mut atom = None;
        for (sym, z) in AROMATIC {
            if self.starts_with(sym) {
                self.pos += sym.len();
                atom = Some(Atom::molecular(z, true));
                break;
            }
        }
        if atom.is_none() {
            let upper = self.peek().filter(u8::is_ascii_uppercase);
            let Some(u) = upper else {
                return Err(err(start, "expected an element symbol in bracket atom"));
            };
            let two = self
                .text
                .get(self.pos + 1)
                .filter(|c| c.is_ascii_lowercase())
                .map(|&l| format!("{}{}", u as char, l as char));
            let (sym, len) = match &two {
                Some(s) if atomic_number(s).is_some() => (s.clone(), 2),
                _ => ((u as char).to_string(), 1),
            };
            let z = atomic_number(&sym).ok_or_else(|| {
                let written = two.as_deref().unwrap_or(&sym);
                err(start, format!("unknown atom symbol '{written}'"))
            })?;
            self.pos += len;
            atom = Some(Atom::molecular(z, false));
        }
        if self.peek() == Some(b'@') {
            return Err(err(self.pos, "stereochemistry is not supported"));
        }
        if self.peek() == Some(b'H') {
            self.pos += 1;
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            if matches!(self.peek(), Some(c) if c == sign || c.is_ascii_digit()) {
                return Err(err(self.pos, "charges beyond a single sign are not supported"));
            }
        }
        match self.peek() {
            Some(b']') => {
                self.pos += 1;
                Ok(atom.expect("atom parsed"))
            }
            Some(b':') => Err(err(self.pos, "atom classes are not supported")),
            Some(_) => Err(err(self.pos, "unexpected character in bracket atom")),
            None => Err(err(open, "unterminated bracket atom")),
        }
    }

    fn ring(&mut self, label: u32, offset: usize) -> Result<()> {
        let Some(current) = self.prev else {
            return Err(err(offset, "ring-closure digit without a preceding atom"));
        };
        self.pending_bond = None;
        match self.rings.remove(&label) {
            Some(open) => self.bond(open.atom, current, offset),
            None => {
                self.rings.insert(label, OpenRing { atom: current, offset });
                Ok(())
            }
        }
    }

    fn run(mut self) -> Result<AtomGraph> {
        if self.text.is_empty() {
            return Err(err(0, "empty SMILES"));
        }
        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                b'(' => {
                    let Some(p) = self.prev else {
                        return Err(err(offset, "branch without a preceding atom"));
                    };
                    if self.pending_bond.is_some() {
                        return Err(err(offset, "bond symbol before a branch"));
                    }
                    self.branches.push((offset, p));
                    self.pos += 1;
                }
                b')' => {
                    if let Some(b) = self.pending_bond {
                        return Err(err(b, "dangling bond"));
                    }
                    let Some((open, p)) = self.branches.pop() else {
                        return Err(err(offset, "unbalanced parenthesis"));
                    };
                    if self.prev == Some(p) {
                        return Err(err(open, "empty branch"));
                    }
                    self.prev = Some(p);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.prev.is_none() {
                        return Err(err(offset, "bond without a preceding atom"));
                    }
                    if self.pending_bond.is_some() {
                        return Err(err(offset, "consecutive bond symbols"));
                    }
                    self.pending_bond = Some(offset);
                    self.pos += 1;
                }
                b'/' | b'\\' => return Err(err(offset, "stereochemistry is not supported")),
                b'$' => return Err(err(offset, "quadruple bonds are not supported")),
                b'.' => {
                    if let Some(b) = self.pending_bond {
                        return Err(err(b, "dangling bond"));
                    }
                    if self.prev.is_none() {
                        return Err(err(offset, "'.' without a preceding atom"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring(u32::from(c - b'0'), offset)?;
                }
                b'%' => {
                    let digits = self.text.get(offset + 1..offset + 3);
                    let Some(d) = digits.filter(|d| d.iter().all(u8::is_ascii_digit)) else {
                        return Err(err(offset, "'%' must be followed by two digits"));
                    };
                    let label = u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0');
                    self.pos += 3;
                    self.ring(label, offset)?;
                }
                b'[' => {
                    let atom = self.bracket()?;
                    self.add_atom(atom, offset)?;
                }
                _ => match self.organic()? {
                    Some(atom) => self.add_atom(atom, offset)?,
                    None => {
                        let ch = std::str::from_utf8(&self.text[offset..])
                            .ok()
                            .and_then(|s| s.chars().next())
                            .unwrap_or('?');
                        return Err(err(offset, format!("unknown atom symbol '{ch}'")));
                    }
                },
            }
        }
        if let Some(b) = self.pending_bond {
            return Err(err(b, "dangling bond"));
        }
        if let Some(&(open, _)) = self.branches.first() {
            return Err(err(open, "unbalanced parenthesis"));
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return Err(err(open.offset, "unmatched ring-closure digit"));
        }
        let mut g = AtomGraph::new(Modality::Molecule, self.atoms);
        g.set_edges(self.edges);
        Ok(g)
    }
}

/// Parses `text` into a heavy-atom molecule graph without coordinates.
///
/// Atoms appear in left-to-right order. Errors carry the byte offset of the
/// offending token.
pub fn parse_smiles(text: &str) -> Result<AtomGraph> {
    Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        edges: Vec::new(),
        seen: Default::default(),
        branches: Vec::new(),
        rings: BTreeMap::new(),
        prev: None,
        pending_bond: None,
    }
    .run()
}
