//! Staged training: masked encoder pretraining, a decoder warm start,
//! connector alignment and end-to-end adaptation, each with exact freeze
//! contracts and deterministic artifacts.

mod config;
mod corpus;
mod model;
mod report;
mod stages;

pub use config::{RunConfig, Stage, StageConfig};
pub use corpus::{interleave, load_corpus, prepare_graph, read_records, split, CorpusRecord, Sample, SampleStream};
pub use model::{
    init_decoder, init_encoder, next_token_nll, overlay, Checkpoint, Connector, Layout, LmLoss, Prepared,
    CHECKPOINT_FORMAT,
};
pub use report::{EvalRecord, FinalMetrics, StepRecord, TrainReport};
pub use stages::{
    adapt_lm, align_connector, corpus_vocab, evaluate_checkpoint, evaluate_connector, pretrain_decoder,
    pretrain_encoder, verify_frozen, MicroStep, StageOutcome, EVAL_MASK_DRAWS,
};
