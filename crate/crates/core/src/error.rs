use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: duplicate record for ({market}, {obs_date}, {delivery})")]
    Duplicate {
        line: u64,
        market: String,
        obs_date: String,
        delivery: String,
    },

    #[error("no common period: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: stage `{stage}` has not been run ({path} not found)")]
    Dependency { stage: &'static str, path: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{market} M={maturity}: {source}")]
    Series {
        market: String,
        maturity: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn in_series(self, market: &str, maturity: u32) -> Self {
        Error::Series {
            market: market.to_string(),
            maturity,
            source: Box::new(self),
        }
    }

    /// Process exit code for this error: 2 config, 3 input, 4 insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Duplicate { .. } | Error::Io { .. } | Error::Dependency { .. } => 3,
            Error::Series { source, .. } | Error::File { source, .. } => source.exit_code(),
            Error::Alignment(_)
            | Error::InsufficientData(_)
            | Error::Degenerate(_)
            | Error::Domain(_)
            | Error::Bootstrap(_) => 4,
        }
    }
}
