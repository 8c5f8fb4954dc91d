use thiserror::Error;

pub type Result<T> = std::result::Result<T, PtfhError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PtfhError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("data error at row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("design matrix is rank deficient (p = {p}, m = {m})")]
    RankDeficient { p: usize, m: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl PtfhError {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            PtfhError::Config(_) => 2,
            PtfhError::Row { .. } | PtfhError::Data(_) | PtfhError::Io(_) => 3,
            PtfhError::Domain(_)
            | PtfhError::Overflow(_)
            | PtfhError::RankDeficient { .. }
            | PtfhError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PtfhError::Domain(_) => "domain",
            PtfhError::Overflow(_) => "overflow",
            PtfhError::Row { .. } => "row",
            PtfhError::Data(_) => "data",
            PtfhError::RankDeficient { .. } => "rank_deficient",
            PtfhError::Numerical(_) => "numerical",
            PtfhError::Config(_) => "config",
            PtfhError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for PtfhError {
    fn from(e: std::io::Error) -> Self {
        PtfhError::Io(e.to_string())
    }
}
