use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for `{op}`: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate aperture: element weights carry no energy")]
    DegenerateAperture,

    #[error("degenerate kernel: main-lobe amplitude is zero")]
    DegenerateKernel,

    #[error("undefined reference: reference field is identically zero")]
    UndefinedReference,

    #[error("ISTA diverged at layer {layer}")]
    Divergence { layer: usize },

    #[error("training diverged at step {step}: total loss is not finite")]
    TrainingDiverged { step: u64 },

    #[error("step {step}: hard selection has {found} distinct elements, expected {k}")]
    SelectionCount { step: u64, found: usize, k: usize },

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("uniform mask requires k = N_e/2 (got N_e={n_elements}, k={k})")]
    UnsupportedUniform { n_elements: usize, k: usize },

    #[error("IDX format error at byte {offset}: expected image magic 0x00000803, found {found:#010x}")]
    IdxBadMagic { offset: u64, found: u32 },

    #[error("IDX format error at byte {offset}: truncated ({needed} more bytes expected)")]
    IdxTruncated { offset: u64, needed: u64 },

    #[error("checkpoint integrity error in tensor `{tensor}`: {reason}")]
    Integrity { tensor: String, reason: String },

    #[error("checkpoint format version {found} cannot be migrated (supported: {supported})")]
    Migration { found: u32, supported: u32 },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
