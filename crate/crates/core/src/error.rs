use crate::lattice::NodeIndex;

/// Errors produced by the solvers and diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node:?} out of range: {reason}")]
    OutOfRange { node: NodeIndex, reason: &'static str },

    #[error("stopping-rule enumeration needs {count} rules at depth {depth}; the limit is depth 5")]
    Capacity { depth: usize, count: String },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("implicit step is not monotone-solvable: dt * max(mu, 0) = {product} >= 1")]
    Stability { product: f64 },

    #[error("root finder did not converge after {iterations} iterations (last defect {defect:e})")]
    NonConvergence { iterations: usize, defect: f64 },

    #[error("infeasible barriers at {node:?}: lower {lower} > upper {upper}")]
    InfeasibleBarriers {
        node: NodeIndex,
        lower: f64,
        upper: f64,
    },

    #[error("terminal value {value} at leaf {node:?} lies outside [{lower}, {upper}]")]
    TerminalOutsideBarriers {
        node: NodeIndex,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid comparison: {0}")]
    InvalidComparison(String),

    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),

    #[error("expression `{expr}`: {message}")]
    Expression { expr: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
