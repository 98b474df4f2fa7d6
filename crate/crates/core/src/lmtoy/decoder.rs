use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{find_placeholders, ModalitySequence};
use crate::error::{Error, Result};
use crate::numcore::{
    Activation, AttentionMask, Bound, EmptyRows, LayerNorm, Linear, Mlp, MultiHeadAttention,
    ParamSet, Tape, Tensor, Var,
};

use super::PLACEHOLDER;

/// Prefix of every decoder parameter name.
pub const PREFIX: &str = "decoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_multiplier: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            blocks: 2,
            ffn_multiplier: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: Mlp,
}

/// Pre-norm causal transformer with sinusoidal positions and an untied head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoder {
    pub config: DecoderConfig,
    pub vocab_size: usize,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    head: Linear,
}

fn positions(len: usize, width: usize) -> Tensor {
    Tensor::from_fn(len, width, |pos, c| {
        let freq = 10000f64.powf(-((c / 2 * 2) as f64) / width as f64);
        let angle = pos as f64 * freq;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl ToyDecoder {
    pub fn init(
        config: DecoderConfig,
        vocab_size: usize,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if vocab_size == 0 || config.blocks == 0 {
            return Err(Error::InvalidArgument("decoder needs a vocabulary and at least one block".into()));
        }
        let d = config.width;
        params.init_table(&format!("{PREFIX}embed"), vocab_size, d, 1.0, rng);
        let blocks = (0..config.blocks)
            .map(|b| {
                let n = |s: &str| format!("{PREFIX}block{b}.{s}");
                Ok(Block {
                    attn_norm: params.init_layer_norm(&n("attn_norm"), d),
                    attn: MultiHeadAttention::init(params, &n("attn"), d, config.heads, rng)?,
                    ffn_norm: params.init_layer_norm(&n("ffn_norm"), d),
                    ffn: Mlp::init(params, &n("ffn"), d, d * config.ffn_multiplier, d, Activation::Gelu, rng),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = params.init_layer_norm(&format!("{PREFIX}final_norm"), d);
        let head = params.init_linear(&format!("{PREFIX}head"), d, vocab_size, 1.0, rng);
        Ok(Self {
            config,
            vocab_size,
            blocks,
            final_norm,
            head,
        })
    }

    /// Input embeddings `[L, D]` of token ids.
    pub fn embed<'t>(&self, p: &Bound<'t>, ids: &[usize]) -> Result<Var<'t>> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary {}", self.vocab_size)));
        }
        p.get(&format!("{PREFIX}embed.weight"))?.gather_rows(ids)
    }

    /// Embedded, fully visible sequence with placeholders located.
    pub fn sequence<'t>(&self, p: &Bound<'t>, ids: &[usize], labels: Vec<i64>) -> Result<ModalitySequence<'t>> {
        let seq = ModalitySequence {
            embeddings: self.embed(p, ids)?,
            attention_mask: vec![true; ids.len()],
            labels,
            placeholders: find_placeholders(ids, PLACEHOLDER),
        };
        seq.validate()?;
        Ok(seq)
    }

    /// Causal logits `[L, V]`; keys with a false attention mask are never
    /// attended to.
    pub fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, seq: &ModalitySequence<'t>) -> Result<Var<'t>> {
        self.forward_with_attention(p, tape, seq).map(|(logits, _)| logits)
    }

    pub fn forward_with_attention<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        seq: &ModalitySequence<'t>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        seq.validate()?;
        let l = seq.len();
        if seq.embeddings.cols() != self.config.width {
            return Err(Error::shape(
                "decoder",
                format!("embedding width {} vs model width {}", seq.embeddings.cols(), self.config.width),
            ));
        }
        let allowed = (0..l * l)
            .map(|e| {
                let (q, k) = (e / l, e % l);
                k <= q && seq.attention_mask[k]
            })
            .collect();
        let mask = AttentionMask::Pairs {
            queries: l,
            keys: l,
            allowed,
        };
        let mut h = seq.embeddings.add(tape.constant(positions(l, self.config.width)))?;
        let mut weights = Vec::new();
        for block in &self.blocks {
            let normed = block.attn_norm.forward(p, h)?;
            let att = block.attn.forward(p, normed, normed, &mask, EmptyRows::Zero)?;
            weights.extend(att.weights);
            h = h.add(att.output)?;
            h = h.add(block.ffn.forward(p, block.ffn_norm.forward(p, h)?)?)?;
        }
        let logits = self.head.forward(p, self.final_norm.forward(p, h)?)?;
        Ok((logits, weights))
    }
}
