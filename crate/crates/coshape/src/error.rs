use thiserror::Error;

/// Errors produced by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("evaluation at a smooth-min switching locus (gap {gap:.3e} below tolerance)")]
    DegenerateGradient { gap: f64 },

    #[error("zero level set is empty inside the sampling box")]
    EmptyLevelSet,

    #[error("isolated vertex {0} has no incident triangles")]
    IsolatedVertex(usize),

    #[error("mesh has zero total surface area")]
    ZeroArea,

    #[error("family spec parse error at line {line}: {msg}")]
    SpecParse { line: usize, msg: String },

    #[error("invalid family spec: {0}")]
    InvalidSpec(String),

    #[error("singular part transform at z = {0:?}")]
    SingularTransform(Vec<f64>),

    #[error("KKT factorization failed near vertex {vertex}: {msg}")]
    Factorization { vertex: usize, msg: String },

    #[error("surface extraction failed at path step {step}: {source}")]
    PathExtraction {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("requested {requested} segments but only {samples} samples")]
    TooManySegments { requested: usize, samples: usize },

    #[error("missing correspondence for similarity-graph edge ({0}, {1})")]
    MissingCorrespondence(usize, usize),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
