use crate::credibility::StructuralParams;

/// Crate-wide error type.  Variants map onto the CLI exit codes: validation,
/// parse, config, domain and insufficient-data failures exit 1, solver
/// non-convergence exits 2, filesystem problems exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(
        "fixed point did not converge within {iterations} iterations \
         (last mean {}, between-variance {})",
        last.collective_mean,
        last.between_variance
    )]
    NonConvergence {
        iterations: u32,
        /// Last iterate, so a caller can inspect or accept it.
        last: StructuralParams,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Domain(_)
            | Error::InsufficientData(_) => 1,
            Error::NonConvergence { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}
