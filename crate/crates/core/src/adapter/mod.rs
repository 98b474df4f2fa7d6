//! Geometry grounding: patch queries refined by self- and cross-attention over
//! the full node embeddings, projected to language-model width and spliced
//! into token sequences at placeholder positions.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    concat_rows, Activation, AttentionMask, Bound, EmptyRows, LayerNorm, Linear, Mlp,
    MultiHeadAttention, ParamSet, Tensor, Var,
};
use crate::patcher::Patched;
use crate::structgraph::BatchedGraph;

/// Prefix of every fusion-stack parameter name.
pub const PREFIX: &str = "adapter.";

/// Label excluded from every loss.
pub const IGNORE_INDEX: i64 = -100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub model_width: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Feed-forward hidden width.
    pub mlp_hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            model_width: 4096,
            heads: 32,
            blocks: 8,
            mlp_hidden: 16384,
        }
    }
}

impl FusionConfig {
    pub fn desk() -> Self {
        Self {
            model_width: 64,
            heads: 4,
            blocks: 2,
            mlp_hidden: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FusionBlock {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: Mlp,
}

/// Patch-query fusion stack with pre-norm residual blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionStack {
    pub config: FusionConfig,
    pub node_width: usize,
    pub output_width: usize,
    patch_norm: LayerNorm,
    patch_proj: Linear,
    node_norm: LayerNorm,
    node_proj: Linear,
    blocks: Vec<FusionBlock>,
    out_proj: Linear,
    out_norm: LayerNorm,
}

/// Refined tokens per graph plus every attention weight matrix used.
pub struct Retrieved<'t> {
    /// Per graph, `[k_g, D_LLM]`.
    pub tokens: Vec<Var<'t>>,
    pub attention: Vec<Var<'t>>,
}

impl Retrieved<'_> {
    /// `G×K×D_LLM` with zero rows in invalid slots.
    pub fn padded(&self, k: usize) -> Vec<Tensor> {
        self.tokens
            .iter()
            .map(|t| {
                let v = t.value();
                Tensor::from_fn(k, v.cols(), |r, c| if r < v.rows() { v.get(r, c) } else { 0.0 })
            })
            .collect()
    }
}

impl FusionStack {
    pub fn init(
        config: FusionConfig,
        params: &mut ParamSet,
        node_width: usize,
        output_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.blocks == 0 {
            return Err(Error::InvalidArgument("fusion stack needs at least one block".into()));
        }
        let d = config.model_width;
        let name = |s: &str| format!("{PREFIX}{s}");
        let patch_norm = params.init_layer_norm(&name("patch_norm"), node_width);
        let patch_proj = params.init_linear(&name("patch_proj"), node_width, d, 1.0, rng);
        let node_norm = params.init_layer_norm(&name("node_norm"), node_width);
        let node_proj = params.init_linear(&name("node_proj"), node_width, d, 1.0, rng);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let n = |s: &str| format!("{PREFIX}block{b}.{s}");
            blocks.push(FusionBlock {
                self_norm: params.init_layer_norm(&n("self_norm"), d),
                self_attn: MultiHeadAttention::init(params, &n("self_attn"), d, config.heads, rng)?,
                cross_norm: params.init_layer_norm(&n("cross_norm"), d),
                cross_attn: MultiHeadAttention::init(params, &n("cross_attn"), d, config.heads, rng)?,
                ffn_norm: params.init_layer_norm(&n("ffn_norm"), d),
                ffn: Mlp::init(params, &n("ffn"), d, config.mlp_hidden, d, Activation::Gelu, rng),
            });
        }
        let out_proj = params.init_linear(&name("out_proj"), d, output_width, 1.0, rng);
        let out_norm = params.init_layer_norm(&name("out_norm"), output_width);
        Ok(Self {
            config,
            node_width,
            output_width,
            patch_norm,
            patch_proj,
            node_norm,
            node_proj,
            blocks,
            out_proj,
            out_norm,
        })
    }

    /// Refines the valid patch tokens of one graph against that graph's nodes.
    pub fn refine<'t>(
        &self,
        p: &Bound<'t>,
        patches: Var<'t>,
        nodes: Var<'t>,
        attention: &mut Vec<Var<'t>>,
    ) -> Result<Var<'t>> {
        let keys = self.node_proj.forward(p, self.node_norm.forward(p, nodes)?)?;
        let mut q = self.patch_proj.forward(p, self.patch_norm.forward(p, patches)?)?;
        for block in &self.blocks {
            let normed = block.self_norm.forward(p, q)?;
            let s = block
                .self_attn
                .forward(p, normed, normed, &AttentionMask::None, EmptyRows::Error)?;
            attention.extend(s.weights);
            q = q.add(s.output)?;
            let c = block.cross_attn.forward(
                p,
                block.cross_norm.forward(p, q)?,
                keys,
                &AttentionMask::None,
                EmptyRows::Error,
            )?;
            attention.extend(c.weights);
            q = q.add(c.output)?;
            q = q.add(block.ffn.forward(p, block.ffn_norm.forward(p, q)?)?)?;
        }
        self.out_norm.forward(p, self.out_proj.forward(p, q)?)
    }

    /// Per-graph retrieval. `tokens[g]` holds the `k_g` valid patch tokens of
    /// graph `g`, whose nodes are rows `ranges[g]` of `x`.
    pub fn retrieve<'t>(
        &self,
        p: &Bound<'t>,
        tokens: &[Var<'t>],
        x: Var<'t>,
        ranges: &[std::ops::Range<usize>],
    ) -> Result<Retrieved<'t>> {
        if tokens.len() != ranges.len() {
            return Err(Error::shape(
                "retrieve_geometry",
                format!("{} token sets for {} graphs", tokens.len(), ranges.len()),
            ));
        }
        let mut out = Retrieved {
            tokens: Vec::with_capacity(tokens.len()),
            attention: Vec::new(),
        };
        for (g, (t, r)) in tokens.iter().zip(ranges).enumerate() {
            if t.rows() == 0 {
                return Err(Error::EmptyPatchSet(g));
            }
            if r.is_empty() {
                return Err(Error::InvalidGraph(format!("graph {g} has no nodes")));
            }
            let nodes = x.slice_rows(r.start, r.len())?;
            out.tokens.push(self.refine(p, *t, nodes, &mut out.attention)?);
        }
        Ok(out)
    }
}

/// [`FusionStack::retrieve`] over the valid tokens of a patched batch.
pub fn retrieve_geometry<'t>(
    p: &Bound<'t>,
    stack: &FusionStack,
    patched: &Patched<'t>,
    x: Var<'t>,
    batch: &BatchedGraph,
) -> Result<Retrieved<'t>> {
    let ranges: Vec<_> = (0..batch.graph_count()).map(|g| batch.nodes(g)).collect();
    stack.retrieve(p, &patched.tokens, x, &ranges)
}

/// Ascending indices `i` with `ids[i] == placeholder`.
pub fn find_placeholders(ids: &[usize], placeholder: usize) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .filter_map(|(i, &t)| (t == placeholder).then_some(i))
        .collect()
}

/// Embedded sequence with mask, labels and placeholder positions.
#[derive(Clone, Debug)]
pub struct ModalitySequence<'t> {
    /// `[L, D_LLM]`.
    pub embeddings: Var<'t>,
    pub attention_mask: Vec<bool>,
    pub labels: Vec<i64>,
    pub placeholders: Vec<usize>,
}

impl<'t> ModalitySequence<'t> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.embeddings.rows();
        if self.attention_mask.len() != l || self.labels.len() != l {
            return Err(Error::shape(
                "modality sequence",
                format!(
                    "{l} embeddings, {} mask entries, {} labels",
                    self.attention_mask.len(),
                    self.labels.len()
                ),
            ));
        }
        if self.placeholders.iter().any(|&p| p >= l) || !self.placeholders.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("placeholder positions out of range or unsorted".into()));
        }
        Ok(())
    }
}

/// Where one graph's tokens went: the placeholder's original position and
/// the number of rows that replaced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub position: usize,
    pub count: usize,
}

/// New index of every non-placeholder original token.
pub fn reindex(original_len: usize, injections: &[Injection]) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(original_len);
    let mut shift: isize = 0;
    let mut next = injections.iter().peekable();
    for i in 0..original_len {
        if let Some(inj) = next.peek().filter(|inj| inj.position == i) {
            shift += inj.count as isize - 1;
            next.next();
            out.push(None);
        } else {
            out.push(Some((i as isize + shift) as usize));
        }
    }
    out
}

/// Replaces each placeholder, in order, by the corresponding geometry block.
pub fn inject_tokens<'t>(
    seq: &ModalitySequence<'t>,
    geometry: &[Var<'t>],
) -> Result<(ModalitySequence<'t>, Vec<Injection>)> {
    seq.validate()?;
    if seq.placeholders.len() != geometry.len() {
        return Err(Error::PlaceholderMismatch {
            placeholders: seq.placeholders.len(),
            graphs: geometry.len(),
        });
    }
    let width = seq.embeddings.cols();
    if let Some(g) = geometry.iter().find(|g| g.cols() != width || g.rows() == 0) {
        return Err(Error::shape(
            "inject_tokens",
            format!("geometry block {:?} for embedding width {width}", g.shape()),
        ));
    }
    let mut parts = Vec::new();
    let mut mask = Vec::new();
    let mut labels = Vec::new();
    let mut injections = Vec::with_capacity(geometry.len());
    let mut prev = 0;
    for (&pos, block) in seq.placeholders.iter().zip(geometry) {
        if pos > prev {
            parts.push(seq.embeddings.slice_rows(prev, pos - prev)?);
            mask.extend_from_slice(&seq.attention_mask[prev..pos]);
            labels.extend_from_slice(&seq.labels[prev..pos]);
        }
        parts.push(*block);
        mask.extend(std::iter::repeat(true).take(block.rows()));
        labels.extend(std::iter::repeat(IGNORE_INDEX).take(block.rows()));
        injections.push(Injection {
            position: pos,
            count: block.rows(),
        });
        prev = pos + 1;
    }
    let l = seq.len();
    if prev < l {
        parts.push(seq.embeddings.slice_rows(prev, l - prev)?);
        mask.extend_from_slice(&seq.attention_mask[prev..]);
        labels.extend_from_slice(&seq.labels[prev..]);
    }
    let embeddings = if parts.len() == 1 { parts[0] } else { concat_rows(&parts)? };
    Ok((
        ModalitySequence {
            embeddings,
            attention_mask: mask,
            labels,
            placeholders: Vec::new(),
        },
        injections,
    ))
}
