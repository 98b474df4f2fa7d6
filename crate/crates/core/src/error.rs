use std::path::PathBuf;

/// Errors raised anywhere in the connector pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty softmax axis")]
    EmptySoftmaxAxis,

    #[error("fully masked attention row")]
    FullyMaskedRow,

    #[error("objective not finite")]
    ObjectiveNotFinite,

    #[error("discrete selection changed under a finite-difference perturbation of leaf {leaf}, coordinate {coord}")]
    SelectionChanged { leaf: usize, coord: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("SMILES parse error at offset {offset}: {message}")]
    Smiles { offset: usize, message: String },

    #[error("PDB parse error at line {line}: {message}")]
    Pdb { line: usize, message: String },

    #[error("no ATOM records")]
    NoAtomRecords,

    #[error("alphabet violation: {ch} at position {position}")]
    AlphabetViolation { ch: char, position: usize },

    #[error("disconnected molecule")]
    DisconnectedMolecule,

    #[error("coordinate embedding did not satisfy distance constraints: {0}")]
    EmbeddingFailed(String),

    #[error("graph {0} has no coordinates")]
    MissingCoordinates(usize),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("non-finite values produced by encoder layer {0}")]
    NonFiniteLayer(String),

    #[error("no masked atoms")]
    NoMaskedAtoms,

    #[error("empty patch set for graph {0}")]
    EmptyPatchSet(usize),

    #[error("placeholder count {placeholders} does not match graph count {graphs}")]
    PlaceholderMismatch { placeholders: usize, graphs: usize },

    #[error("empty instruction")]
    EmptyInstruction,

    #[error("empty template pool")]
    EmptyTemplatePool,

    #[error("training diverged at step {0}: loss is not finite")]
    Diverged(usize),

    #[error("frozen parameter `{0}` changed during training")]
    FrozenParameterChanged(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
