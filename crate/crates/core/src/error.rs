use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report. Variants carry enough context to
/// name the offending element; the `Display` text is prefixed with the
/// stage that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cpg: parse error: {0}")]
    Parse(String),
    #[error("cpg: schema error: {0}")]
    Schema(String),
    #[error("cpg: unknown node {0}")]
    UnknownNode(u64),
    #[error("cpg: unknown function {0}")]
    UnknownFunction(u64),

    #[error("lattice: unknown label `{0}`")]
    UnknownLabel(String),
    #[error("lattice: invalid lattice config: {0}")]
    InvalidLattice(String),
    #[error("lattice: golden set is empty")]
    EmptyGoldenSet,

    #[error("lifting: annotator failed on function `{function_id}`: {reason}")]
    AnnotatorFailure { function_id: String, reason: String },
    #[error("lifting: invalid rule `{pattern}`: {reason}")]
    InvalidRule { pattern: String, reason: String },
    #[error("lifting: no stored annotation for function `{0}`")]
    MissingAnnotation(String),

    #[error("embedding: no embedding stored for key `{0}`")]
    MissingEmbedding(String),
    #[error("embedding: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding: zero vector has no direction")]
    ZeroVector,
    #[error("embedding: {0}")]
    InvalidEmbedding(String),

    #[error("ssckg: {0}")]
    Ssckg(String),

    #[error("graphormer: config error: {0}")]
    Config(String),
    #[error("graphormer: shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graphormer: empty graph")]
    EmptyGraph,
    #[error("graphormer: parameter file version mismatch (expected {expected}, found {found})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("graphormer: corrupt parameter file: {0}")]
    CorruptFile(String),

    #[error("risk: invalid propagation config: {0}")]
    InvalidPropagation(String),
    #[error("risk: power iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("fingerprint: target embedding set is empty")]
    EmptyTarget,
    #[error("fingerprint: {0}")]
    InvalidFingerprint(String),
    #[error("fingerprint: scores contain only one class")]
    SingleClassInput,
    #[error("fingerprint: invalid score: {0}")]
    InvalidScore(String),
    #[error("fingerprint: invalid threshold grid: {0}")]
    InvalidGrid(String),

    #[error("metrics: rater sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("metrics: {0}")]
    InvalidInput(String),

    #[error("pipeline: {0}")]
    Pipeline(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
