use std::path::PathBuf;

/// Errors raised by every stage of the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown key `{0}`")]
    MissingKey(String),

    #[error("{}:{line}: column `{column}`: {message}", path.display())]
    Schema {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("rank-deficient design: column(s) {} linearly dependent on earlier columns", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("fixed-effect demeaning did not converge after {iterations} iterations (last delta {last_delta:e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("parameter `{name}` = {value} outside valid range {range}")]
    Parameter {
        name: String,
        value: String,
        range: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn param(name: &str, value: impl ToString, range: &str) -> Self {
        Error::Parameter {
            name: name.to_string(),
            value: value.to_string(),
            range: range.to_string(),
        }
    }
}

/// Fails with a parameter error unless `value` is finite and strictly positive.
pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, value, "(0, inf)"))
    }
}
