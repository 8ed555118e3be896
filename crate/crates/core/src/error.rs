//! Error type shared by the library and the CLI.
//!
//! Variants are grouped by how the binary reports them: configuration
//! problems exit with code 2, numerical/decomposition failures with 3 and
//! failed verification checks with 4.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: malformed config files, inconsistent dimensions,
    /// invalid parameter combinations.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine failed to reach its accuracy target
    /// (quadrature non-convergence, eigensolver guard, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The moment matrix passed to whitening has fewer than `t` usable
    /// eigenvalues; typically the activation's second-moment coefficient
    /// vanishes or the sample set is too small.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Tensor power iteration or magnitude recovery failed.
    #[error("decomposition error: {0}")]
    Decomposition(String),

    /// A verification command (derivative checks, acceptance gates) ran to
    /// completion and the check itself failed.
    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the `cnn-recover` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numerical(_) | Error::RankDeficient(_) | Error::Decomposition(_) => 3,
            Error::CheckFailed(_) => 4,
            Error::Io(_) => 1,
        }
    }
}
