use crate::error::Result;
use crate::lmtoy::split_words;
use crate::structgraph::{
    embed_molecule_coords, generate_fiber, parse_pdb_atoms, parse_smiles, AtomGraph, EmbedConfig, FiberConfig,
    NucleicKind, DEFAULT_CUTOFF,
};
use crate::trainer::{prepare_graph, Sample};

/// Where a demo structure comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Smiles(&'static str),
    Pdb(&'static str),
    Fiber(&'static str, NucleicKind),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DemoRecord {
    pub source: Source,
    pub instruction: &'static str,
    pub answer: &'static str,
}

const PEPTIDE_GA: &str = include_str!("../../data/peptide_ga.pdb");
const PEPTIDE_SC: &str = include_str!("../../data/peptide_sc.pdb");

/// Eight samples over all four modalities; samples sharing an instruction
/// differ only in structure.
pub const DEMO_RECORDS: [DemoRecord; 8] = [
    DemoRecord {
        source: Source::Smiles("CCO"),
        instruction: "Describe this molecule.",
        answer: "ethanol, a short chain alcohol.",
    },
    DemoRecord {
        source: Source::Smiles("c1ccccc1O"),
        instruction: "Describe this molecule.",
        answer: "phenol, an aromatic ring carrying a hydroxyl group.",
    },
    DemoRecord {
        source: Source::Pdb(PEPTIDE_GA),
        instruction: "Describe this protein fragment.",
        answer: "a glycine alanine dipeptide.",
    },
    DemoRecord {
        source: Source::Pdb(PEPTIDE_SC),
        instruction: "Describe this protein fragment.",
        answer: "a serine cysteine dipeptide with a thiol.",
    },
    DemoRecord {
        source: Source::Fiber("ACGT", NucleicKind::Dna),
        instruction: "Describe this nucleic acid.",
        answer: "a short dna strand with four bases.",
    },
    DemoRecord {
        source: Source::Fiber("GGCATT", NucleicKind::Dna),
        instruction: "Describe this nucleic acid.",
        answer: "a six base dna strand rich in guanine.",
    },
    DemoRecord {
        source: Source::Fiber("ACGU", NucleicKind::Rna),
        instruction: "Describe this nucleic acid.",
        answer: "a short rna strand with four bases.",
    },
    DemoRecord {
        source: Source::Fiber("UUAGC", NucleicKind::Rna),
        instruction: "Describe this nucleic acid.",
        answer: "a five base rna strand.",
    },
];

/// Small molecules for encoder pretraining runs.
pub const DEMO_MOLECULES: [&str; 4] = ["CCO", "c1ccccc1O", "CC(=O)N", "OCC(N)C(=O)O"];

/// Builds a connected graph with coordinates.
pub fn build_structure(source: Source, seed: u64) -> Result<AtomGraph> {
    let raw = match source {
        Source::Smiles(s) => embed_molecule_coords(&parse_smiles(s)?, seed, &EmbedConfig::default())?,
        Source::Pdb(text) => parse_pdb_atoms(text)?,
        Source::Fiber(seq, kind) => generate_fiber(seq, kind, &FiberConfig::default_for(kind))?,
    };
    prepare_graph(&raw, DEFAULT_CUTOFF)
}

pub fn demo_corpus(seed: u64) -> Result<Vec<Sample>> {
    DEMO_RECORDS
        .iter()
        .map(|r| {
            Ok(Sample {
                instruction: r.instruction.into(),
                answer: r.answer.into(),
                graph: build_structure(r.source, seed)?,
            })
        })
        .collect()
}

pub fn demo_molecules(seed: u64) -> Result<Vec<AtomGraph>> {
    DEMO_MOLECULES
        .iter()
        .map(|s| build_structure(Source::Smiles(s), seed))
        .collect()
}

/// Rounded mean text length of the demo prompts: one BOS plus the
/// instruction and answer words.
pub fn demo_language_tokens() -> usize {
    let total: usize = DEMO_RECORDS
        .iter()
        .map(|r| 1 + split_words(r.instruction).len() + split_words(r.answer).len())
        .sum();
    (total as f64 / DEMO_RECORDS.len() as f64).round() as usize
}
