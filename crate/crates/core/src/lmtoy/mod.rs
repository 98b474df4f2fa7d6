//! A small causal decoder standing in for the language backbone, with its
//! word vocabulary, reasoning-span augmentation and masked likelihood.

mod decoder;

pub use decoder::{DecoderConfig, ToyDecoder, PREFIX};

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Bound, Var};

pub const PAD: usize = 0;
pub const PLACEHOLDER: usize = 1;
pub const THINK_OPEN: usize = 2;
pub const THINK_CLOSE: usize = 3;
pub const UNKNOWN: usize = 4;
pub const BOS: usize = 5;
pub const EOS: usize = 6;

const RESERVED: [&str; 7] = ["<pad>", "<geo>", "<think>", "</think>", "<unk>", "<bos>", "<eos>"];

/// Lower-cased words and single punctuation marks.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() && ch != '\'' && ch != '-' {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Word inventory; reserved ids come first and are never produced by
/// [`ToyVocab::encode`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyVocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl ToyVocab {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        Self::from_words(words.into_iter().collect())
    }

    fn from_words(words: Vec<String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let index = all
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { words: all, index }
    }

    /// Restores the lookup table after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_words(self.words.into_iter().skip(RESERVED.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNKNOWN))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }
}

/// Neutral filler rationales of 0 to 12 words.
pub const DEFAULT_TEMPLATES: [&str; 16] = [
    "",
    "okay",
    "right",
    "let's see",
    "consider the structure",
    "note the geometry",
    "look at the shape",
    "first check the overall layout",
    "the atoms form a familiar pattern",
    "keep the description short and plain",
    "each region of the structure looks consistent",
    "think about how the parts fit together here",
    "the spatial arrangement points toward one clear reading here",
    "weigh the local contacts and the global layout before answering",
    "the bonds and distances together suggest a simple and direct answer",
    "go through the geometry step by step then settle on an answer",
];

/// Encoded template pool.
pub fn template_pool(vocab: &ToyVocab, templates: &[&str]) -> Vec<Vec<usize>> {
    templates.iter().map(|t| vocab.encode(t)).collect()
}

/// `y = [open, r̃, close, a]` with its loss mask and span indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub instruction: Vec<usize>,
    pub reasoning: Vec<usize>,
    pub answer: Vec<usize>,
    pub target: Vec<usize>,
    pub loss_mask: Vec<bool>,
    pub reasoning_positions: Vec<usize>,
    pub answer_positions: Vec<usize>,
}

fn mix(seed: u64, parts: &[&[usize]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for part in parts {
        for &v in *part {
            h = (h ^ v as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h = (h ^ 0xff).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Draws a filler span keyed on `(instruction, seed)` only, so the span
/// carries no information about the answer, and builds the supervised
/// target; delimiters are supervised only when asked.
pub fn build_augmented_target(
    instruction: &[usize],
    answer: &[usize],
    pool: &[Vec<usize>],
    seed: u64,
    supervise_delimiters: bool,
) -> Result<AugmentedSample> {
    if pool.is_empty() {
        return Err(Error::EmptyTemplatePool);
    }
    if answer.is_empty() {
        return Err(Error::InvalidArgument("answer must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[instruction]));
    let reasoning = pool[rng.random_range(0..pool.len())].clone();
    Ok(assemble(instruction, &reasoning, answer, supervise_delimiters))
}

/// Deterministic target for an explicit reasoning span.
pub fn assemble(
    instruction: &[usize],
    reasoning: &[usize],
    answer: &[usize],
    supervise_delimiters: bool,
) -> AugmentedSample {
    let r = reasoning.len();
    let mut target = Vec::with_capacity(r + answer.len() + 2);
    target.push(THINK_OPEN);
    target.extend_from_slice(reasoning);
    target.push(THINK_CLOSE);
    target.extend_from_slice(answer);
    let reasoning_positions: Vec<usize> = (1..=r).collect();
    let answer_positions: Vec<usize> = (r + 2..target.len()).collect();
    let loss_mask = (0..target.len())
        .map(|t| answer_positions.contains(&t) || (supervise_delimiters && (t == 0 || t == r + 1)))
        .collect();
    AugmentedSample {
        instruction: instruction.to_vec(),
        reasoning: reasoning.to_vec(),
        answer: answer.to_vec(),
        target,
        loss_mask,
        reasoning_positions,
        answer_positions,
    }
}

pub struct MaskedNll<'t> {
    pub loss: Var<'t>,
    /// Set when no position is supervised; the loss is then exactly zero.
    pub unsupervised: bool,
}

/// `−Σ_t m_t log softmax(logits_t)[y_t]`.
pub fn masked_nll<'t>(logits: Var<'t>, targets: &[usize], mask: &[bool]) -> Result<MaskedNll<'t>> {
    Ok(MaskedNll {
        loss: logits.masked_nll(targets, mask)?,
        unsupervised: !mask.iter().any(|&m| m),
    })
}

/// Mean of the instruction tokens' input embeddings, `[1, D_LLM]`.
pub fn instruction_summary<'t>(p: &Bound<'t>, decoder: &ToyDecoder, ids: &[usize]) -> Result<Var<'t>> {
    if ids.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    decoder.embed(p, ids)?.mean_rows()
}

#[cfg(test)]
mod tests;
