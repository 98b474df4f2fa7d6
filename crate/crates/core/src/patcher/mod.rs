//! Instruction-conditioned adaptive patching: gate logits, mass-based anchor
//! selection, soft patch growth and membership-weighted pooling.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ops::softmax_rows;
use crate::numcore::{concat_cols, dropout, Activation, Bound, Linear, ParamSet, Tensor, Var};
use crate::structgraph::BatchedGraph;

/// Prefix of every gate parameter name.
pub const PREFIX: &str = "gate.";

/// Slack on the cumulative-mass comparison so that `k` mass-`1/N` terms
/// reach `k/N` despite rounding.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub rho: f64,
    pub k_max: usize,
    pub distance_scale: f64,
    pub temperature: f64,
    pub pooling_eps: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            k_max: 2048,
            distance_scale: 1.0,
            temperature: 0.1,
            pooling_eps: 1e-8,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("patch config: {m}")));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if !(self.distance_scale > 0.0 && self.temperature > 0.0 && self.pooling_eps > 0.0) {
            return bad("distance_scale, temperature and pooling_eps must be positive");
        }
        Ok(())
    }
}

/// Pointwise MLP on `concat(X_i, z_{b_i})` producing one logit per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorGate {
    pub first: Linear,
    pub second: Linear,
    pub dropout: f64,
    pub node_width: usize,
    pub instruction_width: usize,
}

impl AnchorGate {
    pub fn init(
        params: &mut ParamSet,
        node_width: usize,
        instruction_width: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let first = params.init_linear(&format!("{PREFIX}0"), node_width + instruction_width, hidden, 1.0, rng);
        let second = params.init_linear(&format!("{PREFIX}1"), hidden, 1, 1.0, rng);
        Self {
            first,
            second,
            dropout,
            node_width,
            instruction_width,
        }
    }

    /// Sets every gate parameter to zero, which makes all logits equal.
    pub fn zero(&self, params: &mut ParamSet) -> Result<()> {
        for lin in [&self.first, &self.second] {
            for suffix in ["weight", "bias"] {
                let t = params.get_mut(&format!("{}.{suffix}", lin.name))?;
                t.data_mut().fill(0.0);
            }
        }
        Ok(())
    }
}

/// `ℓ: [N, 1]` with `ℓ_i = g(X_i, z_{b_i})`.
pub fn gate_logits<'t>(
    p: &Bound<'t>,
    gate: &AnchorGate,
    z: Var<'t>,
    x: Var<'t>,
    graph_of: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var<'t>> {
    if graph_of.len() != x.rows() {
        return Err(Error::shape("gate", format!("{} batch entries for {} nodes", graph_of.len(), x.rows())));
    }
    if let Some(&g) = graph_of.iter().find(|&&g| g >= z.rows()) {
        return Err(Error::InvalidArgument(format!(
            "node references graph {g} but only {} instruction rows exist",
            z.rows()
        )));
    }
    if x.cols() != gate.node_width || z.cols() != gate.instruction_width {
        return Err(Error::shape(
            "gate",
            format!("inputs {}+{} vs gate {}+{}", x.cols(), z.cols(), gate.node_width, gate.instruction_width),
        ));
    }
    let input = concat_cols(&[x, z.gather_rows(graph_of)?])?;
    let h = Activation::Gelu.apply(gate.first.forward(p, input)?);
    let h = dropout(h, gate.dropout, rng)?;
    gate.second.forward(p, h)
}

/// Ordered anchors of one graph: nodes sorted by softmax mass (descending,
/// ties by index), truncated at the first prefix reaching `rho` or at `k_max`.
pub fn select_anchors(logits: &[f64], rho: f64, k_max: usize) -> Vec<usize> {
    if logits.is_empty() {
        return Vec::new();
    }
    let probs = softmax_rows(&Tensor::row_vector(logits.to_vec()), 1.0).into_data();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut k = order.len();
    for (j, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= rho - MASS_TOLERANCE {
            k = j + 1;
            break;
        }
    }
    order.truncate(k.min(k_max).max(1));
    order
}

/// `W: [n, k]`, row-wise softmax over anchors of
/// `(−s_d·‖P_i − P_a‖² + ℓ_a) / τ`.
pub fn soft_assign<'t>(
    coords: Var<'t>,
    anchors: &[usize],
    logits: Var<'t>,
    cfg: &PatchConfig,
) -> Result<Var<'t>> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("soft assignment needs at least one anchor".into()));
    }
    let n = coords.rows();
    if coords.cols() != 3 || logits.shape() != [n, 1] {
        return Err(Error::shape(
            "soft_assign",
            format!("coords {:?}, logits {:?}", coords.shape(), logits.shape()),
        ));
    }
    let tape = coords.tape();
    let k = anchors.len();
    let anchor_coords = coords.gather_rows(anchors)?;
    let node_sq = coords.square().sum_cols().matmul(tape.constant(Tensor::filled(1, k, 1.0)))?;
    let anchor_sq = anchor_coords.square().sum_cols().transpose();
    let cross = coords.matmul(anchor_coords.transpose())?;
    let sq_dist = node_sq.add_row(anchor_sq)?.sub(cross.scale(2.0))?;
    let bias = logits.gather_rows(anchors)?.transpose();
    sq_dist
        .scale(-cfg.distance_scale)
        .add_row(bias)?
        .softmax(cfg.temperature)
}

/// Tokens `t_a = Σ_i W_ia X_i / (Σ_i W_ia + ε)`, shape `[k, D]`.
pub fn pool_patches<'t>(membership: Var<'t>, features: Var<'t>, eps: f64) -> Result<Var<'t>> {
    membership.pool(features, eps)
}

/// Recorded patching of a whole batch.
pub struct Patched<'t> {
    pub logits: Var<'t>,
    /// Per graph, `[k_g, D_enc]`.
    pub tokens: Vec<Var<'t>>,
    /// Per graph, `[|I_g|, k_g]`.
    pub membership: Vec<Var<'t>>,
    /// Per graph, global node indices of the anchors in selection order.
    pub anchors: Vec<Vec<usize>>,
}

impl Patched<'_> {
    pub fn counts(&self) -> Vec<usize> {
        self.anchors.iter().map(Vec::len).collect()
    }

    /// Discrete state that must stay fixed for gradients to be exact.
    pub fn selection(&self) -> Vec<i64> {
        let mut s = Vec::new();
        for a in &self.anchors {
            s.push(a.len() as i64);
            s.extend(a.iter().map(|&i| i as i64));
        }
        s
    }

    /// Padded plain-array view.
    pub fn result(&self) -> PatchResult {
        let k = self.anchors.iter().map(Vec::len).max().unwrap_or(0);
        let d = self.tokens.first().map_or(0, |t| t.cols());
        let mut out = PatchResult {
            tokens: Vec::new(),
            mask: Vec::new(),
            anchors: Vec::new(),
            counts: self.counts(),
            membership: Vec::new(),
        };
        for (g, t) in self.tokens.iter().enumerate() {
            let kg = self.anchors[g].len();
            let tv = t.value();
            out.tokens.push(Tensor::from_fn(k, d, |r, c| if r < kg { tv.get(r, c) } else { 0.0 }));
            out.mask.push((0..k).map(|r| r < kg).collect());
            out.anchors
                .push((0..k).map(|r| self.anchors[g].get(r).map_or(-1, |&i| i as i64)).collect());
            out.membership.push((*self.membership[g].value()).clone());
        }
        out
    }
}

/// Padded patch tokens `T: G×K×D`, validity `M`, anchors `A` (−1 when invalid).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchResult {
    pub tokens: Vec<Tensor>,
    pub mask: Vec<Vec<bool>>,
    pub anchors: Vec<Vec<i64>>,
    pub counts: Vec<usize>,
    pub membership: Vec<Tensor>,
}

impl PatchResult {
    pub fn max_count(&self) -> usize {
        self.mask.first().map_or(0, Vec::len)
    }
}

/// Selection, assignment and pooling from precomputed logits `[N, 1]`.
pub fn patch_from_logits<'t>(
    logits: Var<'t>,
    x: Var<'t>,
    coords: Var<'t>,
    batch: &BatchedGraph,
    cfg: &PatchConfig,
) -> Result<Patched<'t>> {
    cfg.validate()?;
    let n = batch.len();
    if logits.shape() != [n, 1] || x.rows() != n || coords.shape() != [n, 3] {
        return Err(Error::shape(
            "patching",
            format!(
                "{n} nodes, logits {:?}, features {:?}, coords {:?}",
                logits.shape(),
                x.shape(),
                coords.shape()
            ),
        ));
    }
    let lv = logits.value();
    let mut out = Patched {
        logits,
        tokens: Vec::new(),
        membership: Vec::new(),
        anchors: Vec::new(),
    };
    for g in 0..batch.graph_count() {
        let r = batch.nodes(g);
        let (start, len) = (r.start, r.len());
        let local = select_anchors(&lv.data()[r], cfg.rho, cfg.k_max);
        let w = soft_assign(
            coords.slice_rows(start, len)?,
            &local,
            logits.slice_rows(start, len)?,
            cfg,
        )?;
        out.tokens.push(pool_patches(w, x.slice_rows(start, len)?, cfg.pooling_eps)?);
        out.membership.push(w);
        out.anchors.push(local.iter().map(|&i| i + start).collect());
    }
    Ok(out)
}

/// Gate, then [`patch_from_logits`].
#[allow(clippy::too_many_arguments)]
pub fn run_patching<'t>(
    p: &Bound<'t>,
    gate: &AnchorGate,
    z: Var<'t>,
    x: Var<'t>,
    coords: Var<'t>,
    batch: &BatchedGraph,
    cfg: &PatchConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Patched<'t>> {
    let logits = gate_logits(p, gate, z, x, &batch.batch, rng)?;
    patch_from_logits(logits, x, coords, batch, cfg)
}

/// Anchor counts only, for sizes where the dense membership is too large.
pub fn plan_counts(logits: &[f64], graph_sizes: &[usize], cfg: &PatchConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if graph_sizes.iter().sum::<usize>() != logits.len() {
        return Err(Error::shape("plan_counts", "graph sizes do not cover the logits"));
    }
    let mut start = 0;
    let mut counts = Vec::with_capacity(graph_sizes.len());
    for &n in graph_sizes {
        counts.push(select_anchors(&logits[start..start + n], cfg.rho, cfg.k_max).len());
        start += n;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests;
