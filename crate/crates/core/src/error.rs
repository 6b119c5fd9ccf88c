use thiserror::Error;

use crate::mfg_operator::MfgState;

pub type Result<T> = std::result::Result<T, MfgError>;

#[derive(Debug, Error)]
pub enum MfgError {
    #[error("configuration error: {key}: {rule}")]
    Config { key: String, rule: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    #[error("domain error in {what} at node {node}: value {value}")]
    Domain {
        what: &'static str,
        node: usize,
        value: f64,
    },

    #[error("singular derivative in {what} at node {node}: convolution value {value}")]
    Singular {
        what: &'static str,
        node: usize,
        value: f64,
    },

    #[error("positivity violated: {what} = {value} at node {node}")]
    Positivity {
        what: &'static str,
        node: usize,
        value: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("initialization failed: no sign change of f on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    Initialization { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("Newton iteration did not converge: residual {residual:e} after {iterations} iterations ({reason})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        reason: String,
        best: Box<MfgState>,
    },

    #[error("continuation failed at mu = {mu} (last accepted mu = {last_mu}): {reason}")]
    Continuation { mu: f64, last_mu: f64, reason: String },

    #[error("monotone flow step collapsed below {min_step:e}")]
    StepCollapse { min_step: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MfgError {
    pub(crate) fn config(key: impl Into<String>, rule: impl Into<String>) -> Self {
        MfgError::Config {
            key: key.into(),
            rule: rule.into(),
        }
    }
}
