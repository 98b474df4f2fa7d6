use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapter::{inject_tokens, retrieve_geometry, FusionConfig, FusionStack, IGNORE_INDEX};
use crate::encoder::{mask_regions, pretrain_losses, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::lmtoy::{instruction_summary, DecoderConfig, ToyDecoder, BOS, PLACEHOLDER, THINK_CLOSE, THINK_OPEN};
use crate::numcore::ops::softmax_rows;
use crate::numcore::{check_params, relative_error, ParamSet, Probe, Tape, Tensor};
use crate::patcher::{run_patching, soft_assign, AnchorGate, PatchConfig};
use crate::structgraph::{batch_graphs, build_radius_graph, Atom, AtomGraph, BatchedGraph, Modality};
use crate::trainer::next_token_nll;

/// Tolerance of the full connector pipeline check.
pub const PIPELINE_TOLERANCE: f64 = 1e-5;
/// Tolerance of the closed-form Jacobian checks.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-7;
pub const PIPELINE_STEP: f64 = 1e-4;
pub const PIPELINE_INSTANCES: usize = 5;
/// Seeds tried per pipeline instance before giving up on a stable selection.
const RESAMPLE_LIMIT: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckCase {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Scalars compared.
    pub coordinates: usize,
    pub passed: bool,
}

impl CheckCase {
    fn new(name: impl Into<String>, max_rel_error: f64, tolerance: f64, coordinates: usize) -> Self {
        Self {
            name: name.into(),
            max_rel_error,
            tolerance,
            coordinates,
            passed: max_rel_error <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuiteReport {
    pub cases: Vec<CheckCase>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed)
    }
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Row-wise softmax Jacobian `(diag(p) − p pᵀ)/τ` against central
/// differences of the softmax itself.
pub fn softmax_jacobian_case(seed: u64) -> CheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols, tau, h) = (5, 3, 0.7, 1e-6);
    let x = gaussian(rows, cols, 1.0, &mut rng);
    let p = softmax_rows(&x, tau);
    let mut worst = 0.0f64;
    for r in 0..rows {
        for j in 0..cols {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.set(r, j, x.get(r, j) + h);
            minus.set(r, j, x.get(r, j) - h);
            let (sp, sm) = (softmax_rows(&plus, tau), softmax_rows(&minus, tau));
            for i in 0..cols {
                let delta = if i == j { 1.0 } else { 0.0 };
                let closed = p.get(r, i) * (delta - p.get(r, j)) / tau;
                let numeric = (sp.get(r, i) - sm.get(r, i)) / (2.0 * h);
                worst = worst.max(relative_error(closed, numeric));
            }
        }
    }
    CheckCase::new("softmax jacobian", worst, CLOSED_FORM_TOLERANCE, rows * cols * cols)
}

/// Pooling derivative `∂t_a/∂W_ia = (X_i − t_a)/m_a` against central
/// differences and against the recorded backward pass.
pub fn pooling_gradient_case(seed: u64) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, d, eps, h) = (5, 3, 4, 1e-8, 1e-6);
    let w = uniform(n, k, 0.05, 1.0, &mut rng);
    let x = gaussian(n, d, 1.0, &mut rng);
    let pool = |w: &Tensor| -> Result<Tensor> {
        let tape = Tape::new();
        let t = tape.constant(w.clone()).pool(tape.constant(x.clone()), eps)?;
        Ok((*t.value()).clone())
    };
    let t = pool(&w)?;
    let mass: Vec<f64> = (0..k).map(|a| (0..n).map(|i| w.get(i, a)).sum::<f64>() + eps).collect();
    let probe = gaussian(k, d, 1.0, &mut rng);
    let tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let loss = wv.pool(tape.constant(x.clone()), eps)?.mul(tape.constant(probe.clone()))?.sum();
    let recorded = tape.backward(loss)?.wrt(wv);
    let mut worst = 0.0f64;
    for i in 0..n {
        for a in 0..k {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.set(i, a, w.get(i, a) + h);
            minus.set(i, a, w.get(i, a) - h);
            let (tp, tm) = (pool(&plus)?, pool(&minus)?);
            let mut contracted = 0.0;
            for c in 0..d {
                let closed = (x.get(i, c) - t.get(a, c)) / mass[a];
                let numeric = (tp.get(a, c) - tm.get(a, c)) / (2.0 * h);
                worst = worst.max(relative_error(closed, numeric));
                contracted += closed * probe.get(a, c);
            }
            worst = worst.max(relative_error(recorded.get(i, a), contracted));
        }
    }
    Ok(CheckCase::new("pooling gradient", worst, CLOSED_FORM_TOLERANCE, n * k * (d + 1)))
}

/// `∂‖x_i − x_j‖/∂x_i = (x_i − x_j)/d` against the recorded backward pass.
pub fn distance_gradient_case(seed: u64) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = 6;
    let a = gaussian(pairs, 3, 2.0, &mut rng);
    let b = gaussian(pairs, 3, 2.0, &mut rng);
    let tape = Tape::new();
    let av = tape.leaf(a.clone());
    let d = av.sub(tape.constant(b.clone()))?.square().sum_cols().sqrt();
    let grads = tape.backward(d.sum())?.wrt(av);
    let mut worst = 0.0f64;
    for r in 0..pairs {
        let dist = (0..3).map(|c| (a.get(r, c) - b.get(r, c)).powi(2)).sum::<f64>().sqrt();
        for c in 0..3 {
            worst = worst.max(relative_error(grads.get(r, c), (a.get(r, c) - b.get(r, c)) / dist));
        }
    }
    Ok(CheckCase::new("distance gradient", worst, CLOSED_FORM_TOLERANCE, pairs * 3))
}

fn cloud(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> AtomGraph {
    let elements = [1u8, 6, 7, 8, 16];
    let atoms = (0..n)
        .map(|_| Atom::molecular(elements[rng.random_range(0..elements.len())], false))
        .collect();
    let mut g = AtomGraph::new(Modality::Molecule, atoms);
    g.coords = Some((0..n).map(|_| [0; 3].map(|_| rng.random_range(-spread..spread))).collect());
    g.set_edges((1..n).map(|i| (i - 1, i)));
    g
}

fn coords_tensor(batch: &BatchedGraph) -> Tensor {
    Tensor::from_fn(batch.len(), 3, |i, c| batch.coords[i][c])
}

/// Soft assignment membership against the recorded backward pass.
pub fn soft_assign_case(seed: u64) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let cfg = PatchConfig {
        temperature: 0.5,
        distance_scale: 0.8,
        ..PatchConfig::default()
    };
    let anchors = [4usize, 1, 6];
    let coords = gaussian(n, 3, 1.5, &mut rng);
    let logits = gaussian(n, 1, 1.0, &mut rng);
    let probe = gaussian(n, anchors.len(), 1.0, &mut rng);
    let report = crate::numcore::finite_diff_check(
        |tape, v| {
            let w = soft_assign(v[0], &anchors, v[1], &cfg)?;
            Ok(Probe::smooth(w.mul(tape.constant(probe.clone()))?.sum()))
        },
        &[coords, logits],
        1e-6,
    )?;
    let coordinates = report.leaves.iter().map(|l| l.coordinates).sum();
    Ok(CheckCase::new("soft assignment", report.max_rel_error(), CLOSED_FORM_TOLERANCE, coordinates))
}

/// Masked pretraining loss of a small encoder over all its parameters.
pub fn encoder_case(seed: u64) -> Result<CheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig {
        hidden_size: 8,
        depth: 2,
        rbf_count: 6,
        rbf_cutoff: 6.0,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let mut params = ParamSet::new();
    let encoder = Encoder::init(cfg, &mut params, &mut rng)?;
    let graphs = [
        build_radius_graph(&cloud(6, 2.5, &mut rng), 4.0)?,
        build_radius_graph(&cloud(5, 2.5, &mut rng), 4.0)?,
    ];
    let batch = batch_graphs(&graphs)?;
    let masked = mask_regions(&batch, 0.3, 3, 0.1, seed)?;
    let report = check_params(&params, &[], 1e-5, |tape, p, _| {
        let out = encoder.forward(p, tape, &batch, Some(&masked), None)?;
        let heads = out.heads.as_ref().ok_or(Error::NoMaskedAtoms)?;
        let losses = pretrain_losses(heads, &masked, 0.7, 1.3)?;
        Ok(Probe::smooth(losses.total))
    })?;
    Ok(CheckCase::new(
        "encoder pretraining loss",
        report.max_rel_error(),
        PIPELINE_TOLERANCE,
        params.scalar_count(),
    ))
}

/// Modules and inputs of one pipeline instance.
struct PipelineInstance {
    params: ParamSet,
    gate: AnchorGate,
    stack: FusionStack,
    decoder: ToyDecoder,
    batch: BatchedGraph,
    x: Tensor,
    instruction: Vec<usize>,
    sequences: Vec<(Vec<usize>, Vec<i64>)>,
    patch: PatchConfig,
}

const VOCAB: usize = 12;
const NODE_WIDTH: usize = 8;
const LM_WIDTH: usize = 8;

fn pipeline_instance(seed: u64) -> Result<PipelineInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let gate = AnchorGate::init(&mut params, NODE_WIDTH, LM_WIDTH, 8, 0.0, &mut rng);
    let fusion = FusionConfig {
        blocks: 1,
        heads: 2,
        model_width: 8,
        mlp_hidden: 8,
    };
    let stack = FusionStack::init(fusion, &mut params, NODE_WIDTH, LM_WIDTH, &mut rng)?;
    let dec_cfg = DecoderConfig {
        width: LM_WIDTH,
        heads: 2,
        blocks: 1,
        ffn_multiplier: 2,
    };
    let decoder = ToyDecoder::init(dec_cfg, VOCAB, &mut params, &mut rng)?;
    let sizes = [rng.random_range(4..=6), rng.random_range(4..=6)];
    let graphs: Vec<AtomGraph> = sizes.iter().map(|&n| cloud(n, 2.0, &mut rng)).collect();
    let batch = batch_graphs(&graphs)?;
    let x = gaussian(batch.len(), NODE_WIDTH, 1.0, &mut rng);
    let instruction = vec![7, 8];
    // [BOS, PH, instruction, <think>, r, </think>, answer]; only the answer is supervised.
    let sequences = (0..2)
        .map(|g| {
            let answer = [9 + g, 11 - g];
            let ids = vec![BOS, PLACEHOLDER, 7, 8, THINK_OPEN, 10, THINK_CLOSE, answer[0], answer[1]];
            let mut labels = vec![IGNORE_INDEX; ids.len()];
            labels[7] = answer[0] as i64;
            labels[8] = answer[1] as i64;
            (ids, labels)
        })
        .collect();
    Ok(PipelineInstance {
        params,
        gate,
        stack,
        decoder,
        batch,
        x,
        instruction,
        sequences,
        patch: PatchConfig {
            rho: 0.4,
            temperature: 0.5,
            ..PatchConfig::default()
        },
    })
}

/// Gate → patch → pool → fusion → inject → masked NLL, checked over the node
/// features, the coordinates and every gate, fusion and decoder parameter.
/// Returns the case and the seed that produced a stable anchor selection.
pub fn pipeline_case(seed: u64) -> Result<(CheckCase, u64)> {
    for attempt in 0..RESAMPLE_LIMIT {
        let s = seed.wrapping_mul(1000).wrapping_add(attempt);
        let inst = pipeline_instance(s)?;
        let coords = coords_tensor(&inst.batch);
        let result = check_params(&inst.params, &[inst.x.clone(), coords], PIPELINE_STEP, |tape, p, v| {
            let summary = instruction_summary(p, &inst.decoder, &inst.instruction)?;
            let z = crate::numcore::concat_rows(&[summary, summary])?;
            let patched = run_patching(p, &inst.gate, z, v[0], v[1], &inst.batch, &inst.patch, None)?;
            let retrieved = retrieve_geometry(p, &inst.stack, &patched, v[0], &inst.batch)?;
            let mut loss = tape.scalar(0.0);
            for ((ids, labels), tokens) in inst.sequences.iter().zip(&retrieved.tokens) {
                let seq = inst.decoder.sequence(p, ids, labels.clone())?;
                let (injected, _) = inject_tokens(&seq, std::slice::from_ref(tokens))?;
                let logits = inst.decoder.forward(p, tape, &injected)?;
                loss = loss.add(next_token_nll(logits, &injected.labels)?)?;
            }
            Ok(Probe {
                loss,
                selection: patched.selection(),
            })
        });
        match result {
            Ok(report) => {
                let coordinates = report.leaves.iter().map(|l| l.coordinates).sum();
                let case = CheckCase::new(
                    format!("connector pipeline #{seed}"),
                    report.max_rel_error(),
                    PIPELINE_TOLERANCE,
                    coordinates,
                );
                return Ok((case, s));
            }
            Err(Error::SelectionChanged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidArgument(format!(
        "no stable anchor selection within {RESAMPLE_LIMIT} resamples of seed {seed}"
    )))
}

/// Every finite-difference and closed-form check.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    report.cases.push(softmax_jacobian_case(seed));
    report.cases.push(pooling_gradient_case(seed)?);
    report.cases.push(distance_gradient_case(seed)?);
    report.cases.push(soft_assign_case(seed)?);
    report.cases.push(encoder_case(seed)?);
    for i in 0..PIPELINE_INSTANCES as u64 {
        report.cases.push(pipeline_case(seed.wrapping_add(i))?.0);
    }
    Ok(report)
}
