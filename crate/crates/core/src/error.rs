use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A line of the corpus file could not be parsed or violates an invariant.
    #[error("line {line}: {field}: {message}")]
    Load {
        line: usize,
        field: String,
        message: String,
    },

    #[error("unsupported corpus format version {found} (expected {expected})")]
    UnsupportedVersion { found: i64, expected: i64 },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("xml error at byte {position}: {message}")]
    Xml { position: u64, message: String },

    #[error("element <{element}> is missing required attribute {attribute}")]
    MissingAttribute { element: String, attribute: String },

    #[error("invalid value for {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("selection resolves to no studies")]
    EmptySelection,

    #[error("scale {scale} cannot be applied to {kind} outcomes")]
    ScaleMismatch { scale: String, kind: String },

    #[error("study `{label}` carries a precomputed estimate on scale {found}, analysis uses {expected}")]
    PrecomputedScale {
        label: String,
        found: String,
        expected: String,
    },

    #[error("{0}")]
    InsufficientStudies(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge (estimate {estimate:e}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Quadrature { .. })
    }
}
