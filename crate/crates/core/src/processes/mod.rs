//! Forward simulators: PDMPs on `[0, 1]` and jump-diffusions driven by a
//! Brownian motion and an integer-valued random measure.
//!
//! Every simulated path lives on its own grid: the common uniform base grid
//! with the path's event times (jumps, boundary hits, predictable clock
//! atoms) merged in as extra nodes.

mod decompose;
mod ensemble;
mod jumpdiff;
mod ode;
mod pdmp;

pub use decompose::{decompose_path, verify_measure_transfer, Decomposition, TransferReport};
pub use ensemble::{path_rng, simulate_ensemble};
pub use jumpdiff::{
    jumpdiff_x_compensator, simulate_jumpdiff, simulate_jumpdiff_scripted, ClockSpec,
    DeclaredAtom, DrivingMeasure, JumpDiffusionModel, ScriptedJump,
};
pub use ode::{FlowOutcome, FlowSolver};
pub use pdmp::{pdmp_compensator, simulate_pdmp, PdmpModel};

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::measures::{
    build_jump_measure, CompensatorSpec, GridPath, JumpRecord, MarkLaw, MarkedPointMeasure,
    MeasureError, TimeGrid,
};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type TimeStateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `y -> Q(y, .)`, the law of the jump size out of state `y`.
pub type JumpKernelFn = Arc<dyn Fn(f64) -> MarkLaw + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("flow left [0, 1] without a detected boundary hit near t = {time} (state {state}); tighten the ODE tolerances")]
    FlowEscaped { time: f64, state: f64 },
    #[error("more than {max} events on one path")]
    TooManyJumps { max: usize },
    #[error("explosion guard: |X| = {value} at t = {time}")]
    Explosion { time: f64, value: f64 },
    #[error("scenario does not match the model: {0}")]
    ModelMismatch(String),
    #[error("decomposition residual {residual} at t = {time}")]
    DecompositionResidual { time: f64, residual: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// One simulated path with everything needed downstream.
///
/// `measure` is the measure the path's BSDE is driven by: `mu^X` itself for a
/// PDMP, the driving measure `mu` for a jump-diffusion. `jump_log` always
/// lists the jumps of `X`.
#[derive(Debug, Clone)]
pub struct SimulatedScenario {
    pub path: GridPath,
    pub measure: MarkedPointMeasure,
    pub compensator: CompensatorSpec,
    pub p_star: Option<GridPath>,
    pub brownian: Option<GridPath>,
    pub jump_log: Vec<JumpRecord>,
    pub seed: u64,
    pub path_index: u64,
}

impl SimulatedScenario {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.path.grid()
    }

    /// `mu^X`, the jump measure of the path.
    pub fn jump_measure(&self) -> Result<MarkedPointMeasure, MeasureError> {
        build_jump_measure(&self.path, &self.jump_log)
    }
}

/// The two forward model classes behind a common interface.
#[derive(Clone)]
pub enum ForwardModel {
    Pdmp(PdmpModel),
    JumpDiffusion(JumpDiffusionModel),
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForwardModel::Pdmp(m) => write!(f, "Pdmp(x0 = {})", m.x0),
            ForwardModel::JumpDiffusion(m) => write!(f, "JumpDiffusion(x0 = {})", m.x0),
        }
    }
}

impl ForwardModel {
    pub fn x0(&self) -> f64 {
        match self {
            ForwardModel::Pdmp(m) => m.x0,
            ForwardModel::JumpDiffusion(m) => m.x0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        match self {
            ForwardModel::Pdmp(m) => m.validate(),
            ForwardModel::JumpDiffusion(m) => m.validate(),
        }
    }

    pub fn simulate<R: Rng + ?Sized>(
        &self,
        base: &TimeGrid,
        rng: &mut R,
    ) -> Result<SimulatedScenario, SimulationError> {
        match self {
            ForwardModel::Pdmp(m) => pdmp::simulate_with(m, base, rng),
            ForwardModel::JumpDiffusion(m) => jumpdiff::simulate_with(m, base, rng),
        }
    }

    /// Jump of `X` produced by mark `e` of the driving measure at an
    /// inaccessible time, from pre-jump state `x`.
    pub fn gamma_tilde(&self, t: f64, x: f64, e: f64) -> f64 {
        match self {
            ForwardModel::Pdmp(_) => e,
            ForwardModel::JumpDiffusion(m) => (m.gamma)(t, x, e),
        }
    }

    /// `d<X^c, N>/d<N>` against the driving Brownian motion, if there is one.
    pub fn sigma(&self) -> Option<&TimeStateFn> {
        match self {
            ForwardModel::Pdmp(_) => None,
            ForwardModel::JumpDiffusion(m) => m.sigma.as_ref(),
        }
    }

    pub fn is_pdmp(&self) -> bool {
        matches!(self, ForwardModel::Pdmp(_))
    }
}
