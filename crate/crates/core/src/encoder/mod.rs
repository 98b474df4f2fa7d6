//! SE(3)-equivariant all-atom encoder with masked-reconstruction heads.

mod losses;
mod masking;

pub use losses::{pretrain_losses, type_accuracy, PretrainLosses};
pub use masking::{mask_regions, MaskedBatch};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::tape::rbf_basis;
use crate::numcore::{
    concat_cols, concat_rows, dropout, Activation, Bound, LayerNorm, Linear, Mlp, ParamSet, Tape,
    Tensor, Var,
};
use crate::structgraph::elements::{element_class, CLASS_COUNT, MASK_CLASS, PREDICTED_CLASSES};
use crate::structgraph::{vocab, BatchedGraph};

/// Prefix of every encoder parameter name.
pub const PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub depth: usize,
    pub rbf_count: usize,
    /// Å.
    pub rbf_cutoff: f64,
    pub dropout: f64,
    pub coord_updates: bool,
    pub use_layernorm: bool,
    pub lambda_dist: f64,
    pub lambda_dir: f64,
    pub mask_fraction: f64,
    /// Upper bound on atoms per grown mask region.
    pub mask_region_atoms: usize,
    pub direction_noise_sigma: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 256,
            depth: 8,
            rbf_count: 32,
            rbf_cutoff: 10.0,
            dropout: 0.1,
            coord_updates: true,
            use_layernorm: true,
            lambda_dist: 1.0,
            lambda_dir: 1.0,
            mask_fraction: 0.15,
            mask_region_atoms: 8,
            direction_noise_sigma: 0.1,
        }
    }
}

impl EncoderConfig {
    /// Small configuration that trains in seconds.
    pub fn desk() -> Self {
        Self {
            hidden_size: 32,
            depth: 3,
            rbf_count: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("encoder config: {m}")));
        if self.hidden_size == 0 || self.depth == 0 || self.rbf_count == 0 {
            return bad("hidden_size, depth and rbf_count must be positive");
        }
        if !(self.rbf_cutoff > 0.0) {
            return bad("rbf_cutoff must be positive");
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return bad("mask_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.mask_region_atoms == 0 {
            return bad("mask_region_atoms must be positive");
        }
        if !(self.direction_noise_sigma >= 0.0) {
            return bad("direction_noise_sigma must be non-negative");
        }
        Ok(())
    }

    /// Basis centers, evenly spaced on `[0, cutoff]`.
    pub fn rbf_centers(&self) -> Vec<f64> {
        let n = self.rbf_count;
        if n == 1 {
            return vec![0.0];
        }
        let step = self.rbf_cutoff / (n - 1) as f64;
        (0..n).map(|k| k as f64 * step).collect()
    }

    /// Gaussian sharpness `1 / (2 Δ²)` for center spacing `Δ`.
    pub fn rbf_gamma(&self) -> f64 {
        let step = self.rbf_cutoff / self.rbf_count.saturating_sub(1).max(1) as f64;
        0.5 / (step * step)
    }
}

/// Radial basis activations of one distance; all zero at or beyond the cutoff.
pub fn rbf_expand(distance: f64, config: &EncoderConfig) -> Vec<f64> {
    let gamma = config.rbf_gamma();
    config
        .rbf_centers()
        .iter()
        .map(|&c| rbf_basis(distance, c, gamma, config.rbf_cutoff).0)
        .collect()
}

/// Per-head predictions on the masked set.
pub struct HeadOutputs<'t> {
    /// `[|M|, PREDICTED_CLASSES]`.
    pub element_logits: Var<'t>,
    /// `[|E_M|, 1]`.
    pub distances: Var<'t>,
    /// `[|E_M|, 3]`.
    pub direction_noise: Var<'t>,
}

pub struct EncoderOutput<'t> {
    /// `[N, hidden]`, invariant under rigid motions.
    pub node_embeddings: Var<'t>,
    /// `[N, 3]`, equivariant under rigid motions.
    pub coords: Var<'t>,
    pub heads: Option<HeadOutputs<'t>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    message: Mlp,
    update: Mlp,
    norm: LayerNorm,
    coord: Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    flags: Linear,
    layers: Vec<Layer>,
    type_head: Mlp,
    dist_head: Mlp,
    dir_head: Mlp,
}

fn table(name: &str) -> String {
    format!("{PREFIX}{name}.weight")
}

impl Encoder {
    /// Registers all `encoder.*` parameters.
    pub fn init(config: EncoderConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let r = config.rbf_count;
        let act = Activation::Silu;
        params.init_table(&format!("{PREFIX}element"), CLASS_COUNT, h, 1.0, rng);
        params.init_table(&format!("{PREFIX}atom_name"), vocab::atom_name_count(), h, 1.0, rng);
        params.init_table(&format!("{PREFIX}residue"), vocab::residue_count(), h, 1.0, rng);
        let flags = params.init_linear(&format!("{PREFIX}flags"), 2, h, 1.0, rng);
        let layers = (0..config.depth)
            .map(|l| {
                let name = format!("{PREFIX}layer{l}");
                Layer {
                    message: Mlp::init(params, &format!("{name}.message"), 2 * h + r, h, h, act, rng),
                    update: Mlp::init(params, &format!("{name}.update"), 2 * h, h, h, act, rng),
                    norm: params.init_layer_norm(&format!("{name}.norm"), h),
                    coord: Mlp::init(params, &format!("{name}.coord"), h, h, 1, act, rng),
                }
            })
            .collect();
        let type_head = Mlp::init(params, &format!("{PREFIX}head.type"), h, h, PREDICTED_CLASSES, act, rng);
        let dist_head = Mlp::init(params, &format!("{PREFIX}head.dist"), h + r, h, 1, act, rng);
        let dir_head = Mlp::init(params, &format!("{PREFIX}head.dir"), h + r, h, 2, act, rng);
        Ok(Self {
            config,
            flags,
            layers,
            type_head,
            dist_head,
            dir_head,
        })
    }

    fn embed<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: &BatchedGraph,
        masked: Option<&MaskedBatch>,
    ) -> Result<Var<'t>> {
        let hidden_mask = |i: usize| masked.is_some_and(|m| m.mask[i]);
        let elements: Vec<usize> = (0..batch.len())
            .map(|i| {
                if hidden_mask(i) {
                    MASK_CLASS
                } else {
                    element_class(batch.atoms[i].element)
                }
            })
            .collect();
        let names: Vec<usize> = (0..batch.len())
            .map(|i| {
                if hidden_mask(i) {
                    vocab::MISC
                } else {
                    batch.atoms[i].atom_name_id
                }
            })
            .collect();
        let residues: Vec<usize> = batch.atoms.iter().map(|a| a.residue_id).collect();
        let flags = Tensor::from_fn(batch.len(), 2, |i, k| {
            let a = &batch.atoms[i];
            f64::from(u8::from(if k == 0 { a.is_backbone } else { a.is_phosphate_or_ca }))
        });
        let h = p.get(&table("element"))?.gather_rows(&elements)?;
        let h = h.add(p.get(&table("atom_name"))?.gather_rows(&names)?)?;
        let h = h.add(p.get(&table("residue"))?.gather_rows(&residues)?)?;
        h.add(self.flags.forward(p, tape.constant(flags))?)
    }

    /// Runs the message-passing stack; with `masked`, hides the masked atoms'
    /// identity features and evaluates the pretraining heads. Dropout is
    /// active only when `rng` is supplied.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: &BatchedGraph,
        masked: Option<&MaskedBatch>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOutput<'t>> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::InvalidGraph("empty batch".into()));
        }
        let cfg = &self.config;
        let centers = cfg.rbf_centers();
        let gamma = cfg.rbf_gamma();

        let mut recv = Vec::with_capacity(2 * batch.edges.len());
        let mut send = Vec::with_capacity(2 * batch.edges.len());
        for &(a, b) in &batch.edges {
            recv.extend([a, b]);
            send.extend([b, a]);
        }
        let mut degree = vec![0usize; n];
        for &i in &recv {
            degree[i] += 1;
        }
        let inv_degree = Tensor::column(recv.iter().map(|&i| 1.0 / degree[i] as f64).collect());
        let self_rbf = {
            let row: Vec<f64> = centers.iter().map(|&c| rbf_basis(0.0, c, gamma, cfg.rbf_cutoff).0).collect();
            Tensor::from_fn(n, centers.len(), |_, k| row[k])
        };
        let all_recv: Vec<usize> = recv.iter().copied().chain(0..n).collect();

        let flat: Vec<f64> = batch.coords.iter().flatten().copied().collect();
        let mut x = tape.constant(Tensor::new(n, 3, flat)?);
        let mut h = self.embed(p, tape, batch, masked)?;

        for (l, layer) in self.layers.iter().enumerate() {
            let self_in = concat_cols(&[h, h, tape.constant(self_rbf.clone())])?;
            let (diff, dist) = if recv.is_empty() {
                (None, None)
            } else {
                let diff = x.gather_rows(&recv)?.sub(x.gather_rows(&send)?)?;
                let dist = diff.square().sum_cols().sqrt();
                (Some(diff), Some(dist))
            };
            let message_in = match dist {
                Some(dist) => {
                    let edge_in =
                        concat_cols(&[h.gather_rows(&recv)?, h.gather_rows(&send)?, dist.rbf(&centers, gamma, cfg.rbf_cutoff)?])?;
                    concat_rows(&[edge_in, self_in])?
                }
                None => self_in,
            };
            let messages = layer.message.forward(p, message_in)?;
            let aggregated = messages.scatter_add_rows(&all_recv, n)?;
            let aggregated = dropout(aggregated, cfg.dropout, rng.as_deref_mut())?;
            let updated = h.add(layer.update.forward(p, concat_cols(&[h, aggregated])?)?)?;
            h = if cfg.use_layernorm {
                layer.norm.forward(p, updated)?
            } else {
                updated
            };
            if cfg.coord_updates {
                if let (Some(diff), Some(dist)) = (diff, dist) {
                    let edge_messages = messages.slice_rows(0, recv.len())?;
                    let phi = layer.coord.forward(p, edge_messages)?.tanh();
                    let inv = dist.add_scalar(1.0).ln().scale(-1.0).exp();
                    let coef = phi.mul(inv)?.mul(tape.constant(inv_degree.clone()))?;
                    x = x.add(diff.mul_col(coef)?.scatter_add_rows(&recv, n)?)?;
                }
            }
            if !h.value().is_finite() || !x.value().is_finite() {
                return Err(Error::NonFiniteLayer(format!("layer{l}")));
            }
        }

        let heads = match masked {
            Some(m) => Some(self.heads(p, tape, h, x, batch, m)?),
            None => None,
        };
        Ok(EncoderOutput {
            node_embeddings: h,
            coords: x,
            heads,
        })
    }

    fn heads<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        h: Var<'t>,
        x: Var<'t>,
        batch: &BatchedGraph,
        m: &MaskedBatch,
    ) -> Result<HeadOutputs<'t>> {
        if m.atoms.is_empty() {
            return Err(Error::NoMaskedAtoms);
        }
        if m.mask.len() != batch.len() {
            return Err(Error::shape("encoder heads", "mask length differs from batch"));
        }
        let cfg = &self.config;
        let element_logits = self.type_head.forward(p, h.gather_rows(&m.atoms)?)?;
        let e = m.edges.len();
        if e == 0 {
            let empty = || tape.constant(Tensor::zeros(0, 1));
            return Ok(HeadOutputs {
                element_logits,
                distances: empty(),
                direction_noise: tape.constant(Tensor::zeros(0, 3)),
            });
        }
        let ia: Vec<usize> = m.edges.iter().map(|&(a, _)| a).collect();
        let ib: Vec<usize> = m.edges.iter().map(|&(_, b)| b).collect();
        let (centers, gamma) = (cfg.rbf_centers(), cfg.rbf_gamma());
        let rbf = Tensor::from_fn(e, cfg.rbf_count, |k, r| {
            rbf_basis(m.distances[k], centers[r], gamma, cfg.rbf_cutoff).0
        });
        let pair = concat_cols(&[h.gather_rows(&ia)?.add(h.gather_rows(&ib)?)?, tape.constant(rbf)])?;
        let distances = self.dist_head.forward(p, pair)?;
        let coefs = self.dir_head.forward(p, pair)?;
        let diff = x.gather_rows(&ia)?.sub(x.gather_rows(&ib)?)?;
        let unit = diff.mul_col(diff.square().sum_cols().sqrt().ln().scale(-1.0).exp())?;
        let noisy = Tensor::from_fn(e, 3, |k, c| m.noisy_directions[k][c]);
        let direction_noise = tape
            .constant(noisy)
            .mul_col(coefs.slice_cols(0, 1)?)?
            .add(unit.mul_col(coefs.slice_cols(1, 1)?)?)?;
        Ok(HeadOutputs {
            element_logits,
            distances,
            direction_noise,
        })
    }

    /// Evaluation-mode embeddings and updated coordinates as plain arrays.
    pub fn encode(&self, params: &ParamSet, batch: &BatchedGraph) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let p = params.bind(&tape, |_| false);
        let out = self.forward(&p, &tape, batch, None, None)?;
        Ok((
            (*out.node_embeddings.value()).clone(),
            (*out.coords.value()).clone(),
        ))
    }
}
