use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expression `{source_text}`: {error}")]
    Parse {
        source_text: String,
        error: ParseError,
    },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("model schema: {0}")]
    Schema(String),
    #[error("equation {equation}: coefficient {coefficient} violates `{requirement}` (value {value:e} at t = {t})")]
    SignViolation {
        equation: usize,
        coefficient: String,
        requirement: &'static str,
        value: f64,
        t: f64,
    },
    #[error("equation {equation}: coefficient {coefficient} is not periodic with the model period (discrepancy {discrepancy:e} at t = {t})")]
    Periodicity {
        equation: usize,
        coefficient: String,
        discrepancy: f64,
        t: f64,
    },
    #[error("history lookup at t = {t} outside span [{start}, {end}]")]
    HistorySpan { t: f64, start: f64, end: f64 },
    #[error("positivity breach: component {component} reached {value:e} at t = {t}")]
    PositivityBreach {
        t: f64,
        component: usize,
        value: f64,
    },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("simplex iteration guard exceeded after {0} pivots")]
    CyclingGuard(usize),
    #[error("hypothesis not met: {0}")]
    Hypothesis(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
