//! Named parameters and the small layer vocabulary built on the tape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{concat_cols, scaled_dot_attention, AttentionMask, EmptyRows};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered map from stable parameter names to values.
///
/// Iteration order is lexicographic in the name, which makes checkpoints and
/// optimizer traversals deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(self.params.len()))?;
        for (k, v) in &self.params {
            let stored = StoredParam {
                shape: v.shape(),
                values: v.data().to_vec(),
            };
            map.serialize_entry(k, &stored)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let stored = BTreeMap::<String, StoredParam>::deserialize(deserializer)?;
        let mut params = BTreeMap::new();
        for (name, p) in stored {
            let t = Tensor::new(p.shape[0], p.shape[1], p.values).map_err(serde::de::Error::custom)?;
            params.insert(name, t);
        }
        Ok(Self { params })
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Moves every parameter of `other` into `self`, replacing same-named entries.
    pub fn extend(&mut self, other: ParamSet) {
        self.params.extend(other.params);
    }

    /// Subset whose names satisfy `keep`.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Largest absolute entrywise difference over parameters present in both
    /// sets; `None` if the name sets or shapes differ.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Option<f64> {
        if self.params.len() != other.params.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for ((ka, va), (kb, vb)) in self.params.iter().zip(&other.params) {
            if ka != kb || va.shape() != vb.shape() {
                return None;
            }
            worst = worst.max(va.max_abs_diff(vb));
        }
        Some(worst)
    }

    /// Records every parameter on `tape`; names accepted by `trainable`
    /// become differentiable leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&str) -> bool) -> Bound<'t> {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.params {
            let var = if trainable(name) {
                tape.leaf(value.clone())
            } else {
                tape.constant(value.clone())
            };
            vars.insert(name.clone(), var);
        }
        Bound { vars }
    }

    /// Canonical JSON checkpoint: `{name: {"shape": [r, c], "values": [...]}}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
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

    /// Adds `{name}.weight: [input, output]` and `{name}.bias: [1, output]`.
    ///
    /// Weights are drawn from `N(0, gain^2 / input)`; the bias starts at zero.
    pub fn init_linear(
        &mut self,
        name: &str,
        input: usize,
        output: usize,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Linear {
        let std = gain / (input.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = Tensor::from_fn(input, output, |_, _| normal.sample(rng));
        self.insert(format!("{name}.weight"), w);
        self.insert(format!("{name}.bias"), Tensor::zeros(1, output));
        Linear::new(name)
    }

    /// Adds `{name}.gain` (ones) and `{name}.bias` (zeros) of width `dim`.
    pub fn init_layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        self.insert(format!("{name}.gain"), Tensor::filled(1, dim, 1.0));
        self.insert(format!("{name}.bias"), Tensor::zeros(1, dim));
        LayerNorm::new(name)
    }

    /// Adds `{name}.weight: [rows, dim]` drawn from `N(0, std^2)`.
    pub fn init_table(
        &mut self,
        name: &str,
        rows: usize,
        dim: usize,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> String {
        let normal = Normal::new(0.0, std).expect("finite std");
        let key = format!("{name}.weight");
        self.insert(key.clone(), Tensor::from_fn(rows, dim, |_, _| normal.sample(rng)));
        key
    }
}

impl<'a> IntoIterator for &'a ParamSet {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = std::collections::btree_map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.params.iter()
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn from_vars(vars: BTreeMap<String, Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> + '_ {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients of every differentiable parameter, zero where nothing flowed.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, v)| (k.clone(), grads.wrt(*v)))
            .collect()
    }
}

/// Affine map `x W + b` over rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
}

impl Linear {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let w = p.get(&format!("{}.weight", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        x.matmul(w)?.add_row(b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub name: String,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let g = p.get(&format!("{}.gain", self.name))?;
        let b = p.get(&format!("{}.bias", self.name))?;
        x.layer_norm(g, b, Self::EPS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Gelu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Silu => x.silu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

/// Inverted dropout: each entry survives with probability `1 - rate` and is
/// scaled by `1 / (1 - rate)`. The mask is a constant of the recorded graph.
pub fn dropout<'t>(x: Var<'t>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
    let Some(rng) = rng else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    if rate >= 1.0 {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} must be below 1")));
    }
    let keep = 1.0 / (1.0 - rate);
    let [r, c] = x.shape();
    let mask = Tensor::from_fn(r, c, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
    x.mul(x.tape().constant(mask))
}

/// Multi-head attention with separate query and key/value inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub name: String,
    pub heads: usize,
    pub width: usize,
}

/// Attention output plus the per-head weight matrices that produced it.
pub struct AttentionOutput<'t> {
    pub output: Var<'t>,
    pub weights: Vec<Var<'t>>,
}

impl MultiHeadAttention {
    /// Registers `{name}.{q,k,v,o}` projections of width `width`.
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {width} is not divisible into {heads} heads"
            )));
        }
        for proj in ["q", "k", "v", "o"] {
            params.init_linear(&format!("{name}.{proj}"), width, width, 1.0, rng);
        }
        Ok(Self {
            name: name.to_string(),
            heads,
            width,
        })
    }

    fn proj(&self, p: &str) -> Linear {
        Linear::new(format!("{}.{p}", self.name))
    }

    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        queries: Var<'t>,
        keys_values: Var<'t>,
        mask: &AttentionMask,
        empty_rows: EmptyRows,
    ) -> Result<AttentionOutput<'t>> {
        let q = self.proj("q").forward(p, queries)?;
        let k = self.proj("k").forward(p, keys_values)?;
        let v = self.proj("v").forward(p, keys_values)?;
        let head_dim = self.width / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_dim;
            let att = scaled_dot_attention(
                q.slice_cols(start, head_dim)?,
                k.slice_cols(start, head_dim)?,
                v.slice_cols(start, head_dim)?,
                mask,
                empty_rows,
            )?;
            outs.push(att.output);
            weights.push(att.weights);
        }
        let merged = if outs.len() == 1 { outs[0] } else { concat_cols(&outs)? };
        Ok(AttentionOutput {
            output: self.proj("o").forward(p, merged)?,
            weights,
        })
    }
}

/// Two-layer perceptron `Linear -> activation -> Linear`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let first = params.init_linear(&format!("{name}.0"), input, hidden, 1.0, rng);
        let second = params.init_linear(&format!("{name}.1"), hidden, output, 1.0, rng);
        Self {
            first,
            second,
            activation,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.activation.apply(self.first.forward(p, x)?);
        self.second.forward(p, h)
    }
}
