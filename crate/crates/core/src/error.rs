use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {0:?}: {1}")]
    InvalidShape(Vec<usize>, &'static str),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("non-finite weights after update")]
    NonFiniteWeights,
    #[error("truncated CIFAR-10 file: {len} bytes is not a positive multiple of 3073")]
    TruncatedFile { len: usize },
    #[error("bad label {label} in record {record}")]
    BadLabel { record: usize, label: u8 },
    #[error("covariance is not positive definite")]
    BadCovariance,
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("equivalence violation for {rule} at B={b} N={n} S={s}: relative error {rel_err:e}")]
    EquivalenceViolation {
        rule: &'static str,
        b: usize,
        n: usize,
        s: usize,
        rel_err: f64,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
