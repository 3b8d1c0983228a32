use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown variable '{name}' at position {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("domain error in component {component}: {message}")]
    Domain { component: usize, message: String },
    #[error("point has length {found}, layout expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("point is not in the set (violation {violation:.3e})")]
    NotInSet { violation: f64 },
    #[error("ambient dimension {0} exceeds the generator-enumeration cap")]
    DimensionCap(usize),
    #[error("set syntax error: {0}")]
    Syntax(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CqError {
    #[error("point is infeasible for the constraint system: {0}")]
    Infeasible(String),
    #[error("structure mismatch: {0}")]
    Structure(String),
    #[error("infeasible at mesh point {index}: {message}")]
    InfeasibleAt { index: usize, message: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("expression error in '{field}': {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("set error in '{field}': {source}")]
    Set {
        field: String,
        #[source]
        source: SetError,
    },
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VerifyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trajectory infeasible at node {node}: {message}")]
    Infeasible { node: usize, message: String },
    #[error("missing data: {0}")]
    Missing(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TranscribeError {
    #[error("invalid discretisation: {0}")]
    Invalid(String),
    #[error("set '{0}' is a union of several pieces; declare a piece selection")]
    UnionPiece(String),
    #[error("solution did not converge (feasibility {feasibility:.3e}, stationarity {stationarity:.3e})")]
    NotConverged { feasibility: f64, stationarity: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}
