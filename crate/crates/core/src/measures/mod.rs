//! Discrete-event integer-valued random measures on a time grid: realised
//! atoms, compensators `nu = dA phi`, stochastic integrals against `mu - nu`
//! and the predictable bracket `C(W)`.
//!
//! Everything here is a pure function of its inputs; no randomness.

mod compensator;
mod field;
mod grid;
mod integrability;
mod integral;
pub mod io;
mod kernel;
mod point;

pub use compensator::{
    classify_supports, complies_with_j_equals_k, AcDensity, CompensatorSpec, PredictableAtom,
    Supports, K_TOLERANCE,
};
pub use field::{FieldFn, Integrand, PredictableField, SampledField};
pub use grid::{GridPath, TimeGrid};
pub use integrability::{check_integrability, IntegrabilityReport, Magnitude};
pub use integral::{
    bracket_c, hat_tilde, integral_against_measure, kernel_decompose, norms, stochastic_integral,
    HatTilde, KernelDecomposition,
};
pub use kernel::{MarkDensity, MarkKernel, MarkLaw, MarkMap};
pub use point::{build_jump_measure, Atom, AtomKind, JumpRecord, MarkedPointMeasure};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("time {time} is not a grid node")]
    NotANode { time: f64 },
    #[error("zero jump size logged at t = {time}")]
    ZeroJump { time: f64 },
    #[error("logged jump {logged} at t = {time} disagrees with path jump {path}")]
    JumpMismatch { time: f64, logged: f64, path: f64 },
    #[error("atom time {time} is not strictly positive")]
    NonPositiveAtomTime { time: f64 },
    #[error("more than one atom at t = {time}")]
    DuplicateAtomTime { time: f64 },
    #[error("compensator atom at t = {time} has mass {mass} > 1")]
    AtomMassAboveOne { time: f64, mass: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("integrand is not integrable against the compensator near t = {time}")]
    NotIntegrable { time: f64 },
    #[error("bracket C(W) is infinite near t = {time}")]
    InfiniteBracket { time: f64 },
    #[error("field does not vanish at zero mark (t = {time}, value {value})")]
    NotAJumpTransform { time: f64, value: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}
