//! Block-diagonal semidefinite programs and a primal-dual interior-point solver.

mod problem;
pub mod sdpa;
mod solver;

pub use problem::{BlockKind, BlockMatrix, Entry, SdpProblem, Sense, SparseSym};
pub use solver::{residuals, solve, IterateInfo, Residuals, SdpSolution, SolveStatus, SolverOptions};

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("SDPA parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
