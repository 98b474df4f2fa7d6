//! Structure-to-token connector: an equivariant all-atom encoder, adaptive
//! instruction-conditioned patching, a cross-attention grounding adapter that
//! splices geometry tokens into a toy language model, staged training and a
//! token-budget harness, all on a verified f64 reverse-mode engine.

// Negated float comparisons reject NaN on purpose; index loops mirror the
// math in the numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::should_implement_trait)]

pub mod error;
pub mod numcore;
pub mod structgraph;
pub mod encoder;
pub mod patcher;
pub mod adapter;
pub mod lmtoy;
pub mod trainer;
pub mod harness;

pub use error::{Error, Result};
pub use numcore::{ParamSet, Tape, Tensor, Var};
pub use structgraph::{AtomGraph, BatchedGraph, Modality};
pub use encoder::{Encoder, EncoderConfig};
pub use patcher::{PatchConfig, PatchResult};
pub use adapter::{FusionConfig, FusionStack};
pub use lmtoy::{ToyDecoder, ToyVocab};
pub use trainer::{Checkpoint, RunConfig, Stage, StageOutcome, TrainReport};
pub use harness::{BudgetCurve, GateMode, Method};
