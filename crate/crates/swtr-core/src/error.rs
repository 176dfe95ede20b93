use thiserror::Error;

/// Crate-wide error type. Variants are kept coarse enough to map onto
/// distinct CLI exit codes while still naming the offending field/shape.
#[derive(Error, Debug)]
pub enum SwtrError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape in {op}: {shape:?} ({reason})")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gradient contract violated: {0}")]
    Grad(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("weight file error: {0}")]
    WeightFormat(#[from] WeightError),

    #[error("volume file error: {0}")]
    VolumeFormat(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised while reading the binary weight format. Each variant maps
/// to a distinct CLI exit code, so corruption modes stay distinguishable.
#[derive(Error, Debug)]
pub enum WeightError {
    #[error("bad magic bytes (expected \"SWTR\")")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated: {context}")]
    Truncated { context: String },
    #[error("manifest/data length disagreement: {0}")]
    LengthMismatch(String),
    #[error("payload checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
    #[error("manifest parse error: {0}")]
    Manifest(String),
    #[error("unknown tensor name: {0}")]
    UnknownTensor(String),
    #[error("missing tensors: {missing:?}; extra tensors: {extra:?}")]
    NameSetMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("shape mismatch for {name}: file {file:?}, model {model:?}")]
    TensorShape {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, SwtrError>;
