use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Stage};
use super::corpus::Sample;
use crate::adapter::{inject_tokens, retrieve_geometry, FusionStack, IGNORE_INDEX};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::lmtoy::{
    build_augmented_target, instruction_summary, masked_nll, template_pool, AugmentedSample, ToyDecoder,
    ToyVocab, BOS, DEFAULT_TEMPLATES, PLACEHOLDER,
};
use crate::numcore::{concat_rows, Bound, ParamSet, Tape, Tensor, Var};
use crate::patcher::{run_patching, AnchorGate};
use crate::structgraph::{batch_graphs, AtomGraph};

pub const CHECKPOINT_FORMAT: &str = "geotok-checkpoint-1";

/// Parameters plus everything needed to rebuild the modules around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub stage: Stage,
    pub config: RunConfig,
    pub vocab: Option<ToyVocab>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(stage: Stage, config: RunConfig, vocab: Option<ToyVocab>, params: ParamSet) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            stage,
            config,
            vocab,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint format `{}`", ckpt.format)));
        }
        ckpt.vocab = ckpt.vocab.map(ToyVocab::reindexed);
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_json(&text)
    }

    /// Requires one of `stages`.
    pub fn expect_stage(&self, stages: &[Stage]) -> Result<()> {
        if stages.contains(&self.stage) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "checkpoint holds a {} stage; expected one of {}",
                self.stage,
                stages.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

/// Per-component RNG so each module's initialization is independent of the
/// others.
pub(crate) fn component_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag)
}

const ENCODER_TAG: u64 = 1;
const DECODER_TAG: u64 = 2;
const GATE_TAG: u64 = 3;
const STACK_TAG: u64 = 4;

pub fn init_encoder(config: &RunConfig, params: &mut ParamSet) -> Result<Encoder> {
    Encoder::init(config.encoder(), params, &mut component_rng(config.seed, ENCODER_TAG))
}

pub fn init_decoder(config: &RunConfig, vocab: &ToyVocab, params: &mut ParamSet) -> Result<ToyDecoder> {
    ToyDecoder::init(config.decoder(), vocab.len(), params, &mut component_rng(config.seed, DECODER_TAG))
}

/// Replaces values in `fresh` by those in `stored`; every stored name must
/// exist in `fresh` with the same shape.
pub fn overlay(fresh: &mut ParamSet, stored: &ParamSet) -> Result<()> {
    for (name, value) in stored.iter() {
        let slot = fresh
            .get_mut(name)
            .map_err(|_| Error::InvalidArgument(format!("checkpoint parameter `{name}` does not fit this architecture")))?;
        if slot.shape() != value.shape() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint parameter `{name}` has shape {:?}, architecture expects {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value.clone();
    }
    Ok(())
}

/// Encoder, gate, fusion stack and decoder over one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub config: RunConfig,
    pub vocab: ToyVocab,
    pub encoder: Encoder,
    pub gate: AnchorGate,
    pub stack: FusionStack,
    pub decoder: ToyDecoder,
    templates: Vec<Vec<usize>>,
}

/// Decoder token layout of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    /// `[BOS, PLACEHOLDER, instruction…, target…]`.
    pub ids: Vec<usize>,
    /// Token id where the position is supervised, else the ignore index.
    pub labels: Vec<i64>,
    pub instruction: Vec<usize>,
    pub augmented: AugmentedSample,
}

impl Layout {
    pub fn new(
        vocab: &ToyVocab,
        templates: &[Vec<usize>],
        seed: u64,
        supervise_delimiters: bool,
        sample: &Sample,
    ) -> Result<Self> {
        let instruction = vocab.encode(&sample.instruction);
        if instruction.is_empty() {
            return Err(Error::EmptyInstruction);
        }
        let answer = vocab.encode(&sample.answer);
        let augmented = build_augmented_target(&instruction, &answer, templates, seed, supervise_delimiters)?;
        let mut ids = vec![BOS, PLACEHOLDER];
        ids.extend_from_slice(&instruction);
        let offset = ids.len();
        ids.extend_from_slice(&augmented.target);
        let mut labels = vec![IGNORE_INDEX; ids.len()];
        for (t, &m) in augmented.loss_mask.iter().enumerate() {
            if m {
                labels[offset + t] = augmented.target[t] as i64;
            }
        }
        Ok(Self {
            ids,
            labels,
            instruction,
            augmented,
        })
    }

    pub fn supervised(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }
}

/// A laid-out sample with its frozen encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub layout: Layout,
    pub graph: AtomGraph,
    pub nodes: Tensor,
    pub coords: Tensor,
}

/// Summed next-token loss of a batch and the number of supervised tokens.
pub struct LmLoss<'t> {
    pub total: Var<'t>,
    pub supervised: usize,
    /// Geometry tokens per sample.
    pub counts: Vec<usize>,
}

/// `−Σ log p(labels[t+1] | ≤ t)` over positions whose next label is
/// supervised.
pub fn next_token_nll<'t>(logits: Var<'t>, labels: &[i64]) -> Result<Var<'t>> {
    let l = labels.len();
    if logits.rows() != l {
        return Err(Error::shape("next_token_nll", format!("{} logit rows for {l} labels", logits.rows())));
    }
    let next = |t: usize| labels.get(t + 1).copied().filter(|&v| v != IGNORE_INDEX);
    let targets: Vec<usize> = (0..l).map(|t| next(t).map_or(0, |v| v as usize)).collect();
    let mask: Vec<bool> = (0..l).map(|t| next(t).is_some()).collect();
    Ok(masked_nll(logits, &targets, &mask)?.loss)
}

impl Connector {
    /// Builds every module from `config`, then overlays stored parameters.
    pub fn assemble(config: RunConfig, vocab: ToyVocab, stored: &ParamSet) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut params = ParamSet::new();
        let encoder = init_encoder(&config, &mut params)?;
        let decoder = init_decoder(&config, &vocab, &mut params)?;
        let gate = AnchorGate::init(
            &mut params,
            config.graph_encoder_hidden_size,
            config.language_model_width,
            config.gate_mlp_hidden_size,
            config.gate_dropout,
            &mut component_rng(config.seed, GATE_TAG),
        );
        let stack = FusionStack::init(
            config.fusion(),
            &mut params,
            config.graph_encoder_hidden_size,
            config.language_model_width,
            &mut component_rng(config.seed, STACK_TAG),
        )?;
        overlay(&mut params, stored)?;
        let templates = template_pool(&vocab, &DEFAULT_TEMPLATES);
        Ok((
            Self {
                config,
                vocab,
                encoder,
                gate,
                stack,
                decoder,
                templates,
            },
            params,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, ParamSet)> {
        let vocab = ckpt
            .vocab
            .clone()
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no vocabulary".into()))?;
        Self::assemble(ckpt.config.clone(), vocab, &ckpt.params)
    }

    pub fn layout(&self, sample: &Sample) -> Result<Layout> {
        Layout::new(
            &self.vocab,
            &self.templates,
            self.config.seed,
            self.config.supervise_delimiters,
            sample,
        )
    }

    /// Layout plus evaluation-mode encoding.
    pub fn prepare(&self, params: &ParamSet, sample: &Sample) -> Result<Prepared> {
        let batch = batch_graphs(std::slice::from_ref(&sample.graph))?;
        let (nodes, coords) = self.encoder.encode(params, &batch)?;
        Ok(Prepared {
            layout: self.layout(sample)?,
            graph: sample.graph.clone(),
            nodes,
            coords,
        })
    }

    /// Geometry-grounded loss of a batch: gate, patching and retrieval run on
    /// the concatenated graphs; each sample is then decoded separately.
    pub fn lm_loss<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: &[&Prepared],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LmLoss<'t>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let graphs: Vec<AtomGraph> = batch.iter().map(|s| s.graph.clone()).collect();
        let batched = batch_graphs(&graphs)?;
        let z = concat_rows(
            &batch
                .iter()
                .map(|s| instruction_summary(p, &self.decoder, &s.layout.instruction))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let stack_rows = |f: fn(&Prepared) -> &Tensor| -> Result<Var<'t>> {
            let parts: Vec<Var<'t>> = batch.iter().map(|s| tape.constant(f(s).clone())).collect();
            concat_rows(&parts)
        };
        let x = stack_rows(|s| &s.nodes)?;
        let coords = stack_rows(|s| &s.coords)?;
        let patched = run_patching(p, &self.gate, z, x, coords, &batched, &self.config.patch(), rng)?;
        let retrieved = retrieve_geometry(p, &self.stack, &patched, x, &batched)?;
        let mut total: Option<Var<'t>> = None;
        let mut supervised = 0;
        for (s, tokens) in batch.iter().zip(&retrieved.tokens) {
            let seq = self.decoder.sequence(p, &s.layout.ids, s.layout.labels.clone())?;
            let (injected, _) = inject_tokens(&seq, std::slice::from_ref(tokens))?;
            let logits = self.decoder.forward(p, tape, &injected)?;
            let loss = next_token_nll(logits, &injected.labels)?;
            supervised += s.layout.supervised();
            total = Some(match total {
                Some(t) => t.add(loss)?,
                None => loss,
            });
        }
        Ok(LmLoss {
            total: total.expect("non-empty batch"),
            supervised,
            counts: patched.counts(),
        })
    }

    /// Text-only loss with the placeholder left as an ordinary token.
    pub fn text_loss<'t>(&self, p: &Bound<'t>, tape: &'t Tape, batch: &[&Layout]) -> Result<Var<'t>> {
        text_loss(&self.decoder, p, tape, batch)
    }
}

pub(crate) fn text_loss<'t>(
    decoder: &ToyDecoder,
    p: &Bound<'t>,
    tape: &'t Tape,
    batch: &[&Layout],
) -> Result<Var<'t>> {
    let mut total = tape.scalar(0.0);
    for s in batch {
        let seq = decoder.sequence(p, &s.ids, s.labels.clone())?;
        let seq = crate::adapter::ModalitySequence {
            placeholders: Vec::new(),
            ..seq
        };
        total = total.add(next_token_nll(decoder.forward(p, tape, &seq)?, &seq.labels)?)?;
    }
    Ok(total)
}
