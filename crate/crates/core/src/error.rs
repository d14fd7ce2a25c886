//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by geometric and numerical operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("base space is disconnected")]
    Disconnected,
    #[error("node {0} is not in the base space")]
    UnknownNode(usize),
    #[error("nodes {from} and {to} are mutually unreachable")]
    Unreachable { from: usize, to: usize },
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("curve is not causal at step {step} (margin {margin:e})")]
    NonCausal { step: usize, margin: f64 },
    #[error("no causal curve between the requested events")]
    NoCurve,
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("discretization too coarse: {0}")]
    BracketFailure(String),
    #[error("hypothesis not certified: {0}")]
    HypothesisNotCertified(String),
    #[error("point outside the connector neighborhood (displacement {displacement:e}, delta0 {delta0:e})")]
    OutOfNeighborhood { displacement: f64, delta0: f64 },
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("out of scope: {0}")]
    OutOfScope(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("base speed is not constant; reparametrize first")]
    ReparametrizeFirst,
}

pub type Result<T> = std::result::Result<T, GeomError>;
