use std::path::PathBuf;

/// Errors produced anywhere in the rejuvenation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line count {src} ≠ {tgt}")]
    LineCountMismatch { src: usize, tgt: usize },
    #[error("{path}: line {line} is empty")]
    EmptyLine { path: PathBuf, line: usize },
    #[error("malformed input at {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite loss on pair {pair_id}")]
    NonFiniteLoss { pair_id: u64 },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("mismatched id universes: {0}")]
    Universe(String),
    #[error("missing rejuvenated id {0}")]
    MissingId(u64),
    #[error("pair {id} has no meta key {key:?}")]
    MissingMeta { id: u64, key: String },
    #[error("phase {phase} failed: {msg}")]
    Phase { phase: String, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::LineCountMismatch { .. } => "line_count_mismatch",
            Error::EmptyLine { .. } => "empty_line",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Precondition(_) => "precondition",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Diverged { .. } => "diverged",
            Error::Format(_) => "format",
            Error::Version { .. } => "version",
            Error::Universe(_) => "universe",
            Error::MissingId(_) => "missing_id",
            Error::MissingMeta { .. } => "missing_meta",
            Error::Phase { .. } => "phase",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
