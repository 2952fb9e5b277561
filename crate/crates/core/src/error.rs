use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something outside an operation's domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("n*d = {n}*{d} is odd; no {d}-regular graph on {n} vertices exists")]
    Parity { n: usize, d: usize },

    #[error("random regular generation gave up after {restarts} restarts")]
    Generation { restarts: usize },

    #[error("eigensolver did not converge: best estimate {estimate}, residual {residual:e}")]
    NoConvergence { estimate: f64, residual: f64 },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("normalized Gram matrix is not PSD: eigenvalue {eigenvalue:e} below -{tol:e}")]
    NotPsd { eigenvalue: f64, tol: f64 },

    #[error("vertex {vertex} has no label with nonzero norm")]
    DegenerateVertex { vertex: usize },

    #[error("cannot corrupt {count} edges with alphabet size 1")]
    InfeasibleCorruption { count: usize },

    /// An internal invariant was broken; indicates an upstream numerical problem.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::NotPsd { .. } | Error::Invariant(_)
        )
    }
}
