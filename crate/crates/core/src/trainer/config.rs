use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapter::FusionConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::lmtoy::DecoderConfig;
use crate::numcore::AdamWConfig;
use crate::patcher::PatchConfig;
use crate::structgraph::Modality;

/// Flat run configuration. Key names follow the architecture and training
/// hyperparameter tables; unknown keys are rejected.
///
/// `Default` is the desk preset: full-scale patching and optimization values with
/// narrow widths. [`RunConfig::full_scale`] restores the full widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub graph_encoder_hidden_size: usize,
    pub graph_encoder_depth: usize,
    pub graph_encoder_dropout: f64,
    pub coordinate_updates: bool,
    pub encoder_layernorm: bool,
    pub number_of_rbf_bases: usize,
    pub rbf_cutoff_distance: f64,

    pub fusion_block_count: usize,
    pub attention_head_count: usize,
    pub fusion_model_width: usize,
    pub fusion_mlp_intermediate_size: usize,

    pub max_anchors_per_graph: usize,
    pub mass_based_anchor_fraction: f64,
    pub assignment_distance_scale: f64,
    pub assignment_temperature: f64,
    pub gate_mlp_hidden_size: usize,
    pub gate_dropout: f64,

    pub lambda_dist: f64,
    pub lambda_dir: f64,
    pub mask_fraction: f64,
    pub mask_region_atoms: usize,
    pub direction_noise_sigma: f64,

    pub language_model_width: usize,
    pub language_model_heads: usize,
    pub language_model_blocks: usize,
    pub language_model_ffn_multiplier: usize,
    pub supervise_delimiters: bool,

    /// Connector alignment rate.
    pub learning_rate: f64,
    pub encoder_learning_rate: f64,
    pub decoder_learning_rate: f64,
    /// End-to-end adaptation rate; must be below `learning_rate`.
    pub adaptation_learning_rate: f64,
    pub training_epochs: usize,
    /// Optimizer updates; overrides `training_epochs` when set.
    pub max_steps: Option<usize>,
    pub per_device_train_batch_size: usize,
    pub gradient_accumulation_steps: usize,
    pub warmup_steps: usize,
    pub gradient_clipping: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub evaluation_split_ratio: f64,
    pub evaluation_frequency: usize,
    pub logging_frequency: usize,
    /// Restricts the corpus to one modality; `None` interleaves all of them.
    pub modality: Option<Modality>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph_encoder_hidden_size: 32,
            graph_encoder_depth: 3,
            graph_encoder_dropout: 0.1,
            coordinate_updates: true,
            encoder_layernorm: true,
            number_of_rbf_bases: 16,
            rbf_cutoff_distance: 10.0,
            fusion_block_count: 2,
            attention_head_count: 4,
            fusion_model_width: 64,
            fusion_mlp_intermediate_size: 128,
            max_anchors_per_graph: 2048,
            mass_based_anchor_fraction: 0.1,
            assignment_distance_scale: 1.0,
            assignment_temperature: 0.1,
            gate_mlp_hidden_size: 64,
            gate_dropout: 0.0,
            lambda_dist: 1.0,
            lambda_dir: 1.0,
            mask_fraction: 0.15,
            mask_region_atoms: 8,
            direction_noise_sigma: 0.1,
            language_model_width: 64,
            language_model_heads: 4,
            language_model_blocks: 2,
            language_model_ffn_multiplier: 4,
            supervise_delimiters: false,
            learning_rate: 1e-4,
            encoder_learning_rate: 1e-4,
            decoder_learning_rate: 1e-3,
            adaptation_learning_rate: 1e-5,
            training_epochs: 4,
            max_steps: None,
            per_device_train_batch_size: 1,
            gradient_accumulation_steps: 16,
            warmup_steps: 100,
            gradient_clipping: 1.0,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            evaluation_split_ratio: 0.1,
            evaluation_frequency: 100,
            logging_frequency: 10,
            modality: None,
            seed: 0,
        }
    }
}

/// Which training stage a run performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EncoderPretrain,
    DecoderPretrain,
    Alignment,
    Adaptation,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::EncoderPretrain => "encoder_pretrain",
            Stage::DecoderPretrain => "decoder_pretrain",
            Stage::Alignment => "alignment",
            Stage::Adaptation => "adaptation",
        }
    }

    /// Parameter selector: alignment trains the gate and the fusion stack
    /// with its projections; adaptation adds the decoder. The encoder is
    /// trainable only in its own stage.
    pub fn trainable(self, name: &str) -> bool {
        use crate::{adapter, encoder, lmtoy, patcher};
        let connector = name.starts_with(patcher::PREFIX) || name.starts_with(adapter::PREFIX);
        match self {
            Stage::EncoderPretrain => name.starts_with(encoder::PREFIX),
            Stage::DecoderPretrain => name.starts_with(lmtoy::PREFIX),
            Stage::Alignment => connector,
            Stage::Adaptation => connector || name.starts_with(lmtoy::PREFIX),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optimization settings of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub grad_accumulation: usize,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eval_ratio: f64,
    pub eval_every: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl StageConfig {
    pub fn trainable(&self, name: &str) -> bool {
        self.stage.trainable(name)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            warmup_steps: self.warmup_steps,
        }
    }

    /// Samples consumed by one optimizer update.
    pub fn samples_per_step(&self) -> usize {
        self.batch_size * self.grad_accumulation
    }

    /// Number of optimizer updates for a training split of `n` samples.
    pub fn total_steps(&self, n: usize) -> usize {
        self.max_steps
            .unwrap_or_else(|| (self.epochs * n).div_ceil(self.samples_per_step()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("{} stage: {m}", self.stage)));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 {
            return bad("batch size and accumulation steps must be at least 1".into());
        }
        if self.max_steps.is_none() && self.epochs == 0 {
            return bad("needs epochs or max_steps".into());
        }
        if !(0.0..1.0).contains(&self.eval_ratio) {
            return bad(format!("evaluation split ratio {} must lie in [0, 1)", self.eval_ratio));
        }
        Ok(())
    }
}

impl RunConfig {
    /// Full widths from the architecture table; not practical on a CPU.
    pub fn full_scale() -> Self {
        Self {
            graph_encoder_hidden_size: 256,
            graph_encoder_depth: 8,
            number_of_rbf_bases: 32,
            fusion_block_count: 8,
            attention_head_count: 32,
            fusion_model_width: 4096,
            fusion_mlp_intermediate_size: 16384,
            gate_mlp_hidden_size: 256,
            language_model_width: 4096,
            language_model_heads: 32,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Lower-case hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_string(self)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.patch().validate()?;
        if !(self.adaptation_learning_rate < self.learning_rate) {
            return Err(Error::InvalidArgument(format!(
                "adaptation learning rate {} must be below the alignment rate {}",
                self.adaptation_learning_rate, self.learning_rate
            )));
        }
        if self.fusion_model_width % self.attention_head_count != 0
            || self.language_model_width % self.language_model_heads != 0
        {
            return Err(Error::InvalidArgument("model widths must divide by their head counts".into()));
        }
        for stage in [Stage::EncoderPretrain, Stage::DecoderPretrain, Stage::Alignment, Stage::Adaptation] {
            self.stage(stage).validate()?;
        }
        Ok(())
    }

    /// Copies the encoder architecture of `other`.
    pub fn adopt_encoder(&mut self, other: &RunConfig) {
        self.graph_encoder_hidden_size = other.graph_encoder_hidden_size;
        self.graph_encoder_depth = other.graph_encoder_depth;
        self.coordinate_updates = other.coordinate_updates;
        self.encoder_layernorm = other.encoder_layernorm;
        self.number_of_rbf_bases = other.number_of_rbf_bases;
        self.rbf_cutoff_distance = other.rbf_cutoff_distance;
    }

    /// Copies the decoder architecture of `other`.
    pub fn adopt_decoder(&mut self, other: &RunConfig) {
        self.language_model_width = other.language_model_width;
        self.language_model_heads = other.language_model_heads;
        self.language_model_blocks = other.language_model_blocks;
        self.language_model_ffn_multiplier = other.language_model_ffn_multiplier;
    }

    /// Copies every architecture setting of `other`, plus the seed and the
    /// target layout that fix the reasoning spans.
    pub fn adopt_architecture(&mut self, other: &RunConfig) {
        self.adopt_encoder(other);
        self.adopt_decoder(other);
        self.fusion_block_count = other.fusion_block_count;
        self.attention_head_count = other.attention_head_count;
        self.fusion_model_width = other.fusion_model_width;
        self.fusion_mlp_intermediate_size = other.fusion_mlp_intermediate_size;
        self.gate_mlp_hidden_size = other.gate_mlp_hidden_size;
        self.supervise_delimiters = other.supervise_delimiters;
        self.seed = other.seed;
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_size: self.graph_encoder_hidden_size,
            depth: self.graph_encoder_depth,
            rbf_count: self.number_of_rbf_bases,
            rbf_cutoff: self.rbf_cutoff_distance,
            dropout: self.graph_encoder_dropout,
            coord_updates: self.coordinate_updates,
            use_layernorm: self.encoder_layernorm,
            lambda_dist: self.lambda_dist,
            lambda_dir: self.lambda_dir,
            mask_fraction: self.mask_fraction,
            mask_region_atoms: self.mask_region_atoms,
            direction_noise_sigma: self.direction_noise_sigma,
        }
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            rho: self.mass_based_anchor_fraction,
            k_max: self.max_anchors_per_graph,
            distance_scale: self.assignment_distance_scale,
            temperature: self.assignment_temperature,
            ..PatchConfig::default()
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            model_width: self.fusion_model_width,
            heads: self.attention_head_count,
            blocks: self.fusion_block_count,
            mlp_hidden: self.fusion_mlp_intermediate_size,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            width: self.language_model_width,
            heads: self.language_model_heads,
            blocks: self.language_model_blocks,
            ffn_multiplier: self.language_model_ffn_multiplier,
        }
    }

    pub fn stage(&self, stage: Stage) -> StageConfig {
        let learning_rate = match stage {
            Stage::EncoderPretrain => self.encoder_learning_rate,
            Stage::DecoderPretrain => self.decoder_learning_rate,
            Stage::Alignment => self.learning_rate,
            Stage::Adaptation => self.adaptation_learning_rate,
        };
        StageConfig {
            stage,
            learning_rate,
            epochs: self.training_epochs,
            max_steps: self.max_steps,
            batch_size: self.per_device_train_batch_size,
            grad_accumulation: self.gradient_accumulation_steps,
            warmup_steps: self.warmup_steps,
            clip_norm: self.gradient_clipping,
            weight_decay: self.weight_decay,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_epsilon,
            eval_ratio: self.evaluation_split_ratio,
            eval_every: self.evaluation_frequency,
            log_every: self.logging_frequency,
            seed: self.seed,
        }
    }
}
