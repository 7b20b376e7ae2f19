use std::path::PathBuf;

/// Errors produced anywhere in the scoring and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The encoded stream is malformed. `offset` is the byte position of the
    /// first structural problem when it could be located.
    #[error("decode error{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Decode {
        offset: Option<usize>,
        message: String,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A pooled metric mean is too close to 1 for the index denominator.
    #[error("degenerate pool: mean of metric `{metric}` is {mean}, the index denominator 1 - mean vanishes")]
    DegeneratePool { metric: &'static str, mean: f64 },

    /// Every cohort has the same raw score, so min-max scaling is undefined.
    #[error("degenerate scaling: all {} raw scores are equal", raws.len())]
    DegenerateScaling { raws: Vec<(String, f64)> },

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("coverage error: missing cells {}", gaps.join(", "))]
    Coverage { gaps: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
