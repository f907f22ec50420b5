use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{function} is undefined for x = {value}")]
    Domain { function: &'static str, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward trace does not match the parameters or gradient: {0}")]
    StaleTrace(String),

    #[error("point is not in the interior of the probability simplex")]
    OffSimplex,

    #[error("invalid Dirichlet concentration: {0}")]
    InvalidAlpha(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("cannot stratify: class {class} has only {count} samples (need at least 3)")]
    Stratify { class: String, count: usize },
}

impl Error {
    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }
}
