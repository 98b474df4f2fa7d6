//! Dense f64 arrays, a reverse-mode tape, finite-difference checking and AdamW.

pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_params, finite_diff_check, relative_error, GradReport, LeafReport, Probe};
pub use nn::{
    dropout, Activation, AttentionOutput, Bound, LayerNorm, Linear, Mlp, MultiHeadAttention,
    ParamSet,
};
pub use ops::{
    concat_cols, concat_rows, scaled_dot_attention, Attention, AttentionMask, EmptyRows,
    MASKED_SCORE,
};
pub use optim::{global_norm, AdamW, AdamWConfig, StepStats};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
