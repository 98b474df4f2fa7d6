use serde::Serialize;

use crate::error::{Error, Result};
use crate::lmtoy::{instruction_summary, ToyVocab};
use crate::numcore::{ParamSet, Tape, Tensor};
use crate::patcher::{gate_logits, patch_from_logits};
use crate::structgraph::{batch_graphs, AtomGraph};
use crate::trainer::{Checkpoint, Connector, RunConfig, Stage};

/// Outcome of patching one graph under one instruction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchReport {
    pub node_count: usize,
    pub k_g: usize,
    /// Node indices in selection order.
    pub anchors: Vec<usize>,
    pub membership_row_sums: Vec<f64>,
    pub token_norms: Vec<f64>,
}

/// Patches `graph` with the gate of `checkpoint`, or with a freshly seeded
/// connector from `config` when none is given. Patch settings always come
/// from `config`.
pub fn patch_report(
    graph: &AtomGraph,
    instruction: &str,
    checkpoint: Option<&Checkpoint>,
    config: &RunConfig,
) -> Result<PatchReport> {
    let (connector, params) = match checkpoint {
        Some(ckpt) => {
            ckpt.expect_stage(&[Stage::Alignment, Stage::Adaptation])?;
            let mut run = config.clone();
            run.adopt_architecture(&ckpt.config);
            let vocab = ckpt
                .vocab
                .clone()
                .ok_or_else(|| Error::InvalidArgument("checkpoint has no vocabulary".into()))?;
            Connector::assemble(run, vocab, &ckpt.params)?
        }
        None => Connector::assemble(config.clone(), ToyVocab::from_texts([instruction]), &ParamSet::new())?,
    };
    let ids = connector.vocab.encode(instruction);
    if ids.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let batch = batch_graphs(std::slice::from_ref(graph))?;
    let (nodes, _) = connector.encoder.encode(&params, &batch)?;
    let tape = Tape::new();
    let p = params.bind(&tape, |_| false);
    let z = instruction_summary(&p, &connector.decoder, &ids)?;
    let x = tape.constant(nodes);
    let logits = gate_logits(&p, &connector.gate, z, x, &batch.batch, None)?;
    let coords = tape.constant(Tensor::from_fn(batch.len(), 3, |i, c| batch.coords[i][c]));
    let patched = patch_from_logits(logits, x, coords, &batch, &connector.config.patch())?;
    let membership = patched.membership[0].value();
    let tokens = patched.tokens[0].value();
    Ok(PatchReport {
        node_count: graph.len(),
        k_g: patched.anchors[0].len(),
        anchors: patched.anchors[0].clone(),
        membership_row_sums: (0..membership.rows()).map(|r| membership.row(r).iter().sum()).collect(),
        token_norms: (0..tokens.rows())
            .map(|r| tokens.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect(),
    })
}
