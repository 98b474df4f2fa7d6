use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmtoy::instruction_summary;
use crate::numcore::{Tape, Tensor};
use crate::patcher::{gate_logits, plan_counts, PatchConfig};
use crate::structgraph::{batch_graphs, Atom, AtomGraph, Modality};
use crate::trainer::{Checkpoint, Connector, Stage};

pub const CSV_HEADER: [&str; 5] = ["node_count", "method", "structural_tokens", "language_tokens", "ratio"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adaptive,
    FixedK,
    PerNode,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Adaptive, Method::FixedK, Method::PerNode];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Adaptive => "adaptive",
            Method::FixedK => "fixed_k",
            Method::PerNode => "per_node",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub node_count: usize,
    pub method: Method,
    pub structural_tokens: usize,
    pub language_tokens: usize,
    /// `structural / (structural + language)`.
    pub ratio: f64,
}

impl BudgetRow {
    fn new(node_count: usize, method: Method, structural_tokens: usize, language_tokens: usize) -> Self {
        let total = structural_tokens + language_tokens;
        let ratio = if total == 0 {
            0.0
        } else {
            structural_tokens as f64 / total as f64
        };
        Self {
            node_count,
            method,
            structural_tokens,
            language_tokens,
            ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    /// Size-major, methods in [`Method::ALL`] order.
    pub rows: Vec<BudgetRow>,
    pub fixed_k: usize,
    pub k_max: usize,
}

impl BudgetCurve {
    pub fn row(&self, node_count: usize, method: Method) -> Option<&BudgetRow> {
        self.rows.iter().find(|r| r.node_count == node_count && r.method == method)
    }

    pub fn counts(&self, method: Method) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.structural_tokens)
            .collect()
    }

    /// Checks the per-method row invariants.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let ok = match r.method {
                Method::PerNode => r.structural_tokens == r.node_count,
                Method::FixedK => r.structural_tokens == self.fixed_k,
                Method::Adaptive => r.structural_tokens <= self.k_max.min(r.node_count),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "{} row at N = {} has {} structural tokens",
                    r.method, r.node_count, r.structural_tokens
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.node_count.to_string(),
                r.method.to_string(),
                r.structural_tokens.to_string(),
                r.language_tokens.to_string(),
                r.ratio.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Where adaptive logits come from.
#[derive(Clone, Debug)]
pub enum GateMode {
    /// All logits equal.
    Uniform,
    /// A connector checkpoint scoring synthetic carbon chains of each size
    /// under `instruction`.
    Trained { checkpoint: Box<Checkpoint>, instruction: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetConfig {
    pub patch: PatchConfig,
    pub fixed_k: usize,
    pub language_tokens: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            patch: PatchConfig {
                rho: 0.1,
                k_max: 2048,
                ..PatchConfig::default()
            },
            fixed_k: 32,
            language_tokens: super::demo_language_tokens(),
        }
    }
}

/// Zig-zag chain of `n` bonded carbons, 1.5 Å apart.
pub fn carbon_chain(n: usize) -> AtomGraph {
    let mut g = AtomGraph::new(Modality::Molecule, vec![Atom::molecular(6, false); n]);
    let step = 1.5 * (35f64.to_radians()).cos();
    let rise = 1.5 * (35f64.to_radians()).sin();
    g.coords = Some(
        (0..n)
            .map(|i| [i as f64 * step, if i % 2 == 0 { 0.0 } else { rise }, 0.0])
            .collect(),
    );
    g.set_edges((1..n).map(|i| (i - 1, i)));
    g.center();
    g
}

fn trained_logits(connector: &Connector, params: &crate::ParamSet, instruction: &str, n: usize) -> Result<Vec<f64>> {
    let ids = connector.vocab.encode(instruction);
    if ids.is_empty() {
        return Err(Error::EmptyInstruction);
    }
    let batch = batch_graphs(&[carbon_chain(n)])?;
    let (nodes, _) = connector.encoder.encode(params, &batch)?;
    let tape = Tape::new();
    let p = params.bind(&tape, |_| false);
    let z = instruction_summary(&p, &connector.decoder, &ids)?;
    let logits = gate_logits(&p, &connector.gate, z, tape.constant(nodes), &batch.batch, None)?;
    let values: Tensor = (*logits.value()).clone();
    Ok(values.into_data())
}

/// Structural token counts per size and method, one graph per size.
pub fn token_budget_curve(node_counts: &[usize], mode: &GateMode, config: &BudgetConfig) -> Result<BudgetCurve> {
    config.patch.validate()?;
    if let Some(bad) = node_counts.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidArgument(format!("node count {bad} must be positive")));
    }
    let trained = match mode {
        GateMode::Uniform => None,
        GateMode::Trained { checkpoint, instruction } => {
            checkpoint.expect_stage(&[Stage::Alignment, Stage::Adaptation])?;
            let (connector, params) = Connector::from_checkpoint(checkpoint)?;
            Some((connector, params, instruction.as_str()))
        }
    };
    let mut rows = Vec::with_capacity(node_counts.len() * Method::ALL.len());
    for &n in node_counts {
        let logits = match &trained {
            None => vec![0.0; n],
            Some((c, p, instruction)) => trained_logits(c, p, instruction, n)?,
        };
        let adaptive = plan_counts(&logits, &[n], &config.patch)?[0];
        for method in Method::ALL {
            let tokens = match method {
                Method::Adaptive => adaptive,
                Method::FixedK => config.fixed_k,
                Method::PerNode => n,
            };
            rows.push(BudgetRow::new(n, method, tokens, config.language_tokens));
        }
    }
    let curve = BudgetCurve {
        rows,
        fixed_k: config.fixed_k,
        k_max: config.patch.k_max,
    };
    curve.validate()?;
    Ok(curve)
}
