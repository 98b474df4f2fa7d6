use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, Stage, StageConfig};
use super::corpus::{interleave, split, Sample, SampleStream};
use super::model::{component_rng, init_decoder, init_encoder, text_loss, Checkpoint, Connector, Layout, Prepared};
use super::report::{EvalRecord, FinalMetrics, StepRecord, TrainReport};
use crate::encoder::{mask_regions, pretrain_losses, type_accuracy, Encoder};
use crate::error::{Error, Result};
use crate::lmtoy::{template_pool, ToyVocab, DEFAULT_TEMPLATES};
use crate::numcore::{AdamW, ParamSet, Tape, Tensor};
use crate::structgraph::{batch_graphs, AtomGraph};
use crate::{encoder, lmtoy};

/// Masks drawn per evaluation graph chunk; fixed so evaluations compare.
pub const EVAL_MASK_DRAWS: u64 = 4;
const EVAL_CHUNK: usize = 8;
const EVAL_MASK_SEED: u64 = 0x5eed_0e7a;
const STEP_TAG: u64 = 0x10;

/// A trained checkpoint and how it got there.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Loss value and gradients of one micro-batch.
pub type MicroStep = (f64, BTreeMap<String, Tensor>);

pub(crate) struct Evaluation {
    pub(crate) loss: f64,
    pub(crate) accuracy: Option<f64>,
}

/// Fails on the first frozen parameter whose bits differ from `before`.
pub fn verify_frozen(before: &ParamSet, after: &ParamSet) -> Result<()> {
    for (name, value) in before.iter() {
        let now = after
            .get(name)
            .map_err(|_| Error::FrozenParameterChanged(name.to_string()))?;
        let same = now.shape() == value.shape()
            && now.data().iter().zip(value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::FrozenParameterChanged(name.to_string()));
        }
    }
    Ok(())
}

fn accumulate(into: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match into.get_mut(&name) {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            None => {
                into.insert(name, g);
            }
        }
    }
}

fn stage_tag(stage: Stage) -> u64 {
    STEP_TAG
        + match stage {
            Stage::EncoderPretrain => 0,
            Stage::DecoderPretrain => 1,
            Stage::Alignment => 2,
            Stage::Adaptation => 3,
        }
}

/// Optimizer loop shared by every stage. Each update consumes
/// `grad_accumulation` micro-batches of `batch_size` samples and sums their
/// losses and gradients.
pub(crate) fn optimize(
    params: &mut ParamSet,
    cfg: &StageConfig,
    run: &RunConfig,
    train: Vec<usize>,
    eval_count: usize,
    mut micro: impl FnMut(&ParamSet, &[usize], &mut ChaCha8Rng) -> Result<MicroStep>,
    mut evaluate: impl FnMut(&ParamSet) -> Result<Evaluation>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let started = Instant::now();
    let frozen = params.filter(|n| !cfg.trainable(n));
    let tag = stage_tag(cfg.stage);
    let mut stream = SampleStream::new(train.clone(), cfg.seed ^ tag);
    let mut rng = component_rng(cfg.seed, tag);
    let mut opt = AdamW::new(cfg.optimizer())?;
    let total = cfg.total_steps(train.len());
    let mut report = TrainReport {
        stage: cfg.stage,
        seed: cfg.seed,
        config_hash: run.hash()?,
        train_samples: train.len(),
        eval_samples: eval_count,
        steps: Vec::with_capacity(total),
        evals: Vec::new(),
        final_metrics: FinalMetrics::default(),
        clipped_steps: 0,
        wall_clock_seconds: 0.0,
    };
    let mut record_eval = |params: &ParamSet, step: usize, report: &mut TrainReport| -> Result<()> {
        let e = evaluate(params)?;
        if !e.loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        report.evals.push(EvalRecord {
            step,
            loss: e.loss,
            accuracy: e.accuracy,
        });
        Ok(())
    };
    for step in 1..=total {
        let mut loss = 0.0;
        let mut grads = BTreeMap::new();
        for _ in 0..cfg.grad_accumulation {
            let batch = stream.take(cfg.batch_size);
            let (l, g) = micro(params, &batch, &mut rng)?;
            if !l.is_finite() {
                return Err(Error::Diverged(step));
            }
            loss += l;
            accumulate(&mut grads, g);
        }
        let stats = opt.step(params, &grads).map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::Diverged(step),
            other => other,
        })?;
        report.clipped_steps += usize::from(stats.clipped);
        report.steps.push(StepRecord {
            step,
            loss,
            lr: stats.learning_rate,
            grad_norm: stats.grad_norm,
            clipped: stats.clipped,
        });
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != total {
            record_eval(params, step, &mut report)?;
        }
    }
    record_eval(params, total, &mut report)?;
    verify_frozen(&frozen, params)?;
    let last = *report.evals.last().expect("final evaluation recorded");
    report.final_metrics = FinalMetrics {
        eval_loss: last.loss,
        masked_type_accuracy: last.accuracy,
        masked_nll: last.accuracy.is_none().then_some(last.loss),
    };
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Masked reconstruction pretraining of a fresh encoder.
pub fn pretrain_encoder(graphs: &[AtomGraph], config: &RunConfig) -> Result<StageOutcome> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("encoder pretraining needs at least one graph".into()));
    }
    config.validate()?;
    let graphs = interleave(graphs.to_vec(), |g| g.modality, config.modality);
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("no graph of the selected modality".into()));
    }
    let cfg = config.stage(Stage::EncoderPretrain);
    let mut params = ParamSet::new();
    let encoder = init_encoder(config, &mut params)?;
    let (train, eval) = split(graphs.len(), cfg.eval_ratio);
    let trainable = |n: &str| cfg.trainable(n);
    let micro = |params: &ParamSet, idx: &[usize], rng: &mut ChaCha8Rng| -> Result<MicroStep> {
        let chosen: Vec<AtomGraph> = idx.iter().map(|&i| graphs[i].clone()).collect();
        encoder_step(&encoder, params, &chosen, rng, &trainable)
    };
    let evaluate = |params: &ParamSet| evaluate_encoder(&encoder, params, &eval.iter().map(|&i| &graphs[i]).collect::<Vec<_>>());
    let report = optimize(&mut params, &cfg, config, train, eval.len(), micro, evaluate)?;
    let params = params.filter(|n| n.starts_with(encoder::PREFIX));
    Ok(StageOutcome {
        checkpoint: Checkpoint::new(Stage::EncoderPretrain, config.clone(), None, params),
        report,
    })
}

fn encoder_step(
    encoder: &Encoder,
    params: &ParamSet,
    graphs: &[AtomGraph],
    rng: &mut ChaCha8Rng,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<MicroStep> {
    let c = &encoder.config;
    let batch = batch_graphs(graphs)?;
    let masked = mask_regions(&batch, c.mask_fraction, c.mask_region_atoms, c.direction_noise_sigma, rng.random())?;
    let tape = Tape::new();
    let p = params.bind(&tape, trainable);
    let out = encoder.forward(&p, &tape, &batch, Some(&masked), Some(rng))?;
    let heads = out.heads.expect("heads are computed for masked batches");
    let total = pretrain_losses(&heads, &masked, c.lambda_dist, c.lambda_dir)?.total;
    let loss = total.item();
    if !loss.is_finite() {
        return Ok((loss, BTreeMap::new()));
    }
    Ok((loss, p.gradients(&tape.backward(total)?)))
}

fn evaluate_encoder(encoder: &Encoder, params: &ParamSet, graphs: &[&AtomGraph]) -> Result<Evaluation> {
    let c = &encoder.config;
    let (mut loss, mut hits, mut count) = (0.0, 0.0, 0usize);
    for (k, chunk) in graphs.chunks(EVAL_CHUNK).enumerate() {
        let owned: Vec<AtomGraph> = chunk.iter().map(|g| (*g).clone()).collect();
        let batch = batch_graphs(&owned)?;
        for draw in 0..EVAL_MASK_DRAWS {
            let seed = EVAL_MASK_SEED ^ (k as u64) << 8 ^ draw;
            let masked = mask_regions(&batch, c.mask_fraction, c.mask_region_atoms, c.direction_noise_sigma, seed)?;
            let tape = Tape::new();
            let p = params.bind(&tape, |_| false);
            let out = encoder.forward(&p, &tape, &batch, Some(&masked), None)?;
            let heads = out.heads.expect("heads are computed for masked batches");
            let l = pretrain_losses(&heads, &masked, c.lambda_dist, c.lambda_dir)?;
            let n = masked.atoms.len();
            loss += l.total.item();
            hits += type_accuracy(&heads.element_logits.value(), &masked.element_targets) * n as f64;
            count += n;
        }
    }
    Ok(Evaluation {
        loss: loss / count as f64,
        accuracy: Some(hits / count as f64),
    })
}

/// Word vocabulary of a corpus plus the filler templates.
pub fn corpus_vocab(samples: &[Sample]) -> ToyVocab {
    ToyVocab::from_texts(
        DEFAULT_TEMPLATES
            .iter()
            .copied()
            .chain(samples.iter().flat_map(|s| [s.instruction.as_str(), s.answer.as_str()])),
    )
}

fn lm_micro<'a>(
    connector: &'a Connector,
    prepared: &'a [Prepared],
    cfg: &StageConfig,
) -> impl Fn(&ParamSet, &[usize], &mut ChaCha8Rng) -> Result<MicroStep> + 'a {
    let stage = cfg.stage;
    move |params, idx, rng| {
        let tape = Tape::new();
        let p = params.bind(&tape, |n| stage.trainable(n));
        let batch: Vec<&Prepared> = idx.iter().map(|&i| &prepared[i]).collect();
        let loss = connector.lm_loss(&p, &tape, &batch, Some(rng))?.total;
        let value = loss.item();
        if !value.is_finite() {
            return Ok((value, BTreeMap::new()));
        }
        Ok((value, p.gradients(&tape.backward(loss)?)))
    }
}

/// Mean next-token NLL per supervised answer token over `samples`.
pub fn evaluate_connector(connector: &Connector, params: &ParamSet, samples: &[&Prepared]) -> Result<f64> {
    let (mut loss, mut count) = (0.0, 0usize);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = params.bind(&tape, |_| false);
        let l = connector.lm_loss(&p, &tape, chunk, None)?;
        loss += l.total.item();
        count += l.supervised;
    }
    Ok(if count == 0 { 0.0 } else { loss / count as f64 })
}

fn prepare_all(connector: &Connector, params: &ParamSet, samples: &[Sample]) -> Result<Vec<Prepared>> {
    samples.iter().map(|s| connector.prepare(params, s)).collect()
}

fn run_lm_stage(
    stage: Stage,
    connector: &Connector,
    params: &mut ParamSet,
    samples: &[Sample],
    config: &RunConfig,
) -> Result<TrainReport> {
    let cfg = config.stage(stage);
    let prepared = prepare_all(connector, params, samples)?;
    let (train, eval) = split(prepared.len(), cfg.eval_ratio);
    let eval_set: Vec<&Prepared> = eval.iter().map(|&i| &prepared[i]).collect();
    let micro = lm_micro(connector, &prepared, &cfg);
    let evaluate = |params: &ParamSet| {
        Ok(Evaluation {
            loss: evaluate_connector(connector, params, &eval_set)?,
            accuracy: None,
        })
    };
    optimize(params, &cfg, config, train, eval.len(), micro, evaluate)
}

fn ordered(samples: &[Sample], config: &RunConfig) -> Result<Vec<Sample>> {
    let out = interleave(samples.to_vec(), Sample::modality, config.modality);
    if out.is_empty() {
        return Err(Error::InvalidArgument("corpus has no sample of the selected modality".into()));
    }
    Ok(out)
}

/// Next-token warm start of the toy decoder on the corpus text, with each
/// placeholder kept as an ordinary token.
pub fn pretrain_decoder(samples: &[Sample], config: &RunConfig) -> Result<StageOutcome> {
    config.validate()?;
    let samples = ordered(samples, config)?;
    let vocab = corpus_vocab(&samples);
    let mut params = ParamSet::new();
    let decoder = init_decoder(config, &vocab, &mut params)?;
    let templates = template_pool(&vocab, &DEFAULT_TEMPLATES);
    let layouts = samples
        .iter()
        .map(|s| Layout::new(&vocab, &templates, config.seed, config.supervise_delimiters, s))
        .collect::<Result<Vec<_>>>()?;
    let cfg = config.stage(Stage::DecoderPretrain);
    let (train, eval) = split(layouts.len(), cfg.eval_ratio);
    let micro = |params: &ParamSet, idx: &[usize], _: &mut ChaCha8Rng| -> Result<MicroStep> {
        let tape = Tape::new();
        let p = params.bind(&tape, |n| cfg.trainable(n));
        let batch: Vec<&Layout> = idx.iter().map(|&i| &layouts[i]).collect();
        let loss = text_loss(&decoder, &p, &tape, &batch)?;
        let value = loss.item();
        if !value.is_finite() {
            return Ok((value, BTreeMap::new()));
        }
        Ok((value, p.gradients(&tape.backward(loss)?)))
    };
    let evaluate = |params: &ParamSet| {
        let tape = Tape::new();
        let p = params.bind(&tape, |_| false);
        let batch: Vec<&Layout> = eval.iter().map(|&i| &layouts[i]).collect();
        let count: usize = batch.iter().map(|l| l.supervised()).sum();
        let loss = text_loss(&decoder, &p, &tape, &batch)?.item();
        Ok(Evaluation {
            loss: if count == 0 { 0.0 } else { loss / count as f64 },
            accuracy: None,
        })
    };
    let report = optimize(&mut params, &cfg, config, train, eval.len(), micro, evaluate)?;
    Ok(StageOutcome {
        checkpoint: Checkpoint::new(Stage::DecoderPretrain, config.clone(), Some(vocab), params),
        report,
    })
}

/// Trains only the gate and the fusion stack on top of a pretrained encoder
/// and a frozen decoder; without a decoder checkpoint the decoder is a fresh
/// seeded initialization over the corpus vocabulary.
pub fn align_connector(
    samples: &[Sample],
    encoder_ckpt: &Checkpoint,
    decoder_ckpt: Option<&Checkpoint>,
    config: &RunConfig,
) -> Result<StageOutcome> {
    encoder_ckpt.expect_stage(&[Stage::EncoderPretrain, Stage::Alignment, Stage::Adaptation])?;
    let samples = ordered(samples, config)?;
    let mut run = config.clone();
    run.adopt_encoder(&encoder_ckpt.config);
    let mut stored = encoder_ckpt.params.filter(|n| n.starts_with(encoder::PREFIX));
    let vocab = match decoder_ckpt {
        Some(d) => {
            d.expect_stage(&[Stage::DecoderPretrain, Stage::Alignment, Stage::Adaptation])?;
            run.adopt_decoder(&d.config);
            stored.extend(d.params.filter(|n| n.starts_with(lmtoy::PREFIX)));
            d.vocab
                .clone()
                .ok_or_else(|| Error::InvalidArgument("decoder checkpoint has no vocabulary".into()))?
        }
        None => corpus_vocab(&samples),
    };
    let (connector, mut params) = Connector::assemble(run.clone(), vocab.clone(), &stored)?;
    let report = run_lm_stage(Stage::Alignment, &connector, &mut params, &samples, &run)?;
    Ok(StageOutcome {
        checkpoint: Checkpoint::new(Stage::Alignment, run, Some(vocab), params),
        report,
    })
}

/// End-to-end tuning of connector and decoder at the smaller rate; the
/// encoder stays frozen.
pub fn adapt_lm(samples: &[Sample], checkpoint: &Checkpoint, config: &RunConfig) -> Result<StageOutcome> {
    checkpoint.expect_stage(&[Stage::Alignment, Stage::Adaptation])?;
    let samples = ordered(samples, config)?;
    let mut run = config.clone();
    run.adopt_architecture(&checkpoint.config);
    let vocab = checkpoint
        .vocab
        .clone()
        .ok_or_else(|| Error::InvalidArgument("checkpoint has no vocabulary".into()))?;
    let (connector, mut params) = Connector::assemble(run.clone(), vocab.clone(), &checkpoint.params)?;
    let report = run_lm_stage(Stage::Adaptation, &connector, &mut params, &samples, &run)?;
    Ok(StageOutcome {
        checkpoint: Checkpoint::new(Stage::Adaptation, run, Some(vocab), params),
        report,
    })
}

/// Loads a stage's connector and reports its mean answer-token NLL on
/// `samples`.
pub fn evaluate_checkpoint(samples: &[Sample], checkpoint: &Checkpoint) -> Result<f64> {
    let (connector, params) = Connector::from_checkpoint(checkpoint)?;
    let prepared = prepare_all(&connector, &params, samples)?;
    evaluate_connector(&connector, &params, &prepared.iter().collect::<Vec<_>>())
}
