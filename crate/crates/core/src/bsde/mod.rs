//! Backward solvers and value-function oracles.
//!
//! Two BSDE forms are handled. For a jump-diffusion driven by a Brownian
//! motion `N` and a measure `mu` with compensator `nu = phi dA`:
//!
//! ```text
//! Y_t = g(X_T) + int_t^T f(s, X_s, Y_s, Z_s, U_s) dA_s - int_t^T Z dN - int_t^T int U d(mu - nu)
//! ```
//!
//! and for a PDMP, with `dA = lambda(X_{s-}) ds + dp*_s` and no `Z`:
//!
//! ```text
//! Y_t = g(X_T) + int_t^T f(s, X_{s-}, Y_{s-}, U_s) dA_s - int_t^T int U d(mu^X - nu^X)
//! ```
//!
//! The `U` argument of the driver is the kernel average of `U_s(.)` under the
//! normalised intensity.

mod benchmarks;
mod lsmc;
mod oracle;
mod pdmp_solver;
mod regression;
mod residual;

pub use benchmarks::{benchmark, Benchmark, BENCHMARK_IDS};
pub use lsmc::solve_bsde_lsmc;
pub use oracle::{closed_form_oracle, integro_ode_oracle, Oracle};
pub use pdmp_solver::solve_bsde_pdmp;
pub use regression::{Design, PolyFit};
pub use residual::martingale_residual;

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::measures::io::fmt_f64;
use crate::measures::{GridPath, MeasureError, PredictableField};
use crate::processes::{ForwardModel, ScalarFn, SimulatedScenario, SimulationError};

pub const DEFAULT_DEGREE: usize = 3;
pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 50;
/// Upper bound on `dA * Lip(f)` for the implicit step.
pub const STEP_GUARD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error("singular regression design at t = {time} (degree {degree}): {detail}")]
    SingularDesign {
        time: f64,
        degree: usize,
        detail: String,
    },
    #[error("implicit driver did not converge at t = {time} after {iterations} iterations (last change {change:e})")]
    NoConvergence {
        time: f64,
        iterations: usize,
        change: f64,
    },
    #[error("step guard: dA * Lip(f) = {product} >= {STEP_GUARD} at t = {time}; refine the grid")]
    StepGuard { time: f64, product: f64 },
    #[error("non-finite regression data at t = {time}")]
    NonFinite { time: f64 },
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Arguments of the driver. `u` is the kernel-averaged `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverArgs {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
}

pub type DriverFn = Arc<dyn Fn(&DriverArgs) -> f64 + Send + Sync>;

/// Driver `f` with its Lipschitz constant in `y`.
#[derive(Clone)]
pub struct Driver {
    f: Option<DriverFn>,
    lipschitz: f64,
    uses_u: bool,
}

impl std::fmt::Debug for Driver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Driver")
            .field("zero", &self.f.is_none())
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl Driver {
    pub fn zero() -> Self {
        Self {
            f: None,
            lipschitz: 0.0,
            uses_u: false,
        }
    }

    /// General driver. `uses_u` tells the solvers whether the kernel average
    /// of `U` has to be computed.
    pub fn new(
        f: impl Fn(&DriverArgs) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
        uses_u: bool,
    ) -> Self {
        Self {
            f: Some(Arc::new(f)),
            lipschitz,
            uses_u,
        }
    }

    /// `a_y y + a_z z + a_u u + c`.
    pub fn linear(a_y: f64, a_z: f64, a_u: f64, c: f64) -> Self {
        if a_y == 0.0 && a_z == 0.0 && a_u == 0.0 && c == 0.0 {
            return Self::zero();
        }
        Self::new(
            move |a| a_y * a.y + a_z * a.z + a_u * a.u + c,
            a_y.abs(),
            a_u != 0.0,
        )
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_none()
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn uses_u(&self) -> bool {
        self.uses_u
    }

    #[inline]
    pub fn eval(&self, args: &DriverArgs) -> f64 {
        match &self.f {
            Some(f) => f(args),
            None => 0.0,
        }
    }
}

/// Which increasing process the driver is integrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriverClock {
    /// The clock `A` of the compensator, `nu = phi dA`.
    #[default]
    Compensator,
    /// Calendar time, for models without jumps.
    Time,
}

#[derive(Clone)]
pub struct BsdeProblem {
    pub terminal: ScalarFn,
    pub driver: Driver,
    pub clock: DriverClock,
    pub model: ForwardModel,
}

impl std::fmt::Debug for BsdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeProblem")
            .field("driver", &self.driver)
            .field("clock", &self.clock)
            .field("model", &self.model)
            .finish()
    }
}

impl BsdeProblem {
    /// Zero driver on the compensator clock.
    pub fn new(model: ForwardModel, terminal: ScalarFn) -> Self {
        Self {
            terminal,
            driver: Driver::zero(),
            clock: DriverClock::Compensator,
            model,
        }
    }

    pub fn with_driver(mut self, driver: Driver) -> Self {
        self.driver = driver;
        self
    }

    pub fn with_clock(mut self, clock: DriverClock) -> Self {
        self.clock = clock;
        self
    }

    /// True when a Brownian motion drives the equation (so `Z` exists).
    pub fn has_brownian(&self) -> bool {
        self.model.sigma().is_some()
    }
}

/// `v-hat(t, x)`: the predictable value estimate behind `U`.
pub trait ValueSurrogate: Send + Sync {
    fn base_times(&self) -> &[f64];

    /// Value at `(t, x)` estimated from the regression at base node `k`
    /// (`t <= t_k`).
    fn value_from(&self, k: usize, t: f64, x: f64) -> f64;

    /// Estimate used for jumps at `t`: the regression at the first base node
    /// strictly after `t`, or `g` from `T` on.
    fn value(&self, t: f64, x: f64) -> f64 {
        let times = self.base_times();
        let k = times.partition_point(|&b| b <= t).min(times.len() - 1);
        self.value_from(k, t, x)
    }

    /// Estimate of `Y` at a node at time `t`: the regression at the first
    /// base node at or after `t`.
    fn value_at_node(&self, t: f64, x: f64) -> f64 {
        let times = self.base_times();
        let k = times.partition_point(|&b| b < t).min(times.len() - 1);
        self.value_from(k, t, x)
    }
}

/// Per-base-step output of the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostic {
    pub time: f64,
    pub mean_y: f64,
    pub mean_z: Option<f64>,
    /// Mean squared residual of the `Y` regression (0 at `T`).
    pub regression_residual: f64,
    pub iterations: usize,
}

pub struct BsdeSolution {
    pub base_times: Vec<f64>,
    pub y: Vec<GridPath>,
    pub z: Option<Vec<GridPath>>,
    /// `U` at the atoms of each path's driving measure, index aligned.
    pub u_atoms: Vec<Vec<f64>>,
    /// Predictable surrogate `(t, x, e) -> U`.
    pub u_field: PredictableField,
    pub value: Arc<dyn ValueSurrogate>,
    pub diagnostics: Vec<StepDiagnostic>,
}

impl std::fmt::Debug for BsdeSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeSolution")
            .field("paths", &self.y.len())
            .field("steps", &self.base_times.len().saturating_sub(1))
            .field("has_z", &self.z.is_some())
            .finish()
    }
}

impl BsdeSolution {
    /// `Y_0`, common to all paths when `X_0` is deterministic.
    pub fn y0(&self) -> f64 {
        self.diagnostics.first().map_or(f64::NAN, |d| d.mean_y)
    }

    /// `t,mean_Y,mean_Z,regression_residual`; `mean_Z` is empty without a
    /// Brownian driver.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("t,mean_Y,mean_Z,regression_residual\n");
        for d in &self.diagnostics {
            let z = d.mean_z.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(d.time),
                fmt_f64(d.mean_y),
                z,
                fmt_f64(d.regression_residual)
            );
        }
        out
    }

    /// `path,t,mark,U_value` for every atom of every path.
    pub fn atoms_csv(&self, ensemble: &[SimulatedScenario]) -> String {
        let mut out = String::from("path,t,mark,U_value\n");
        for (sc, us) in ensemble.iter().zip(&self.u_atoms) {
            for (a, u) in sc.measure.atoms().iter().zip(us) {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    sc.path_index,
                    fmt_f64(a.time),
                    fmt_f64(a.mark),
                    fmt_f64(*u)
                );
            }
        }
        out
    }
}

/// Base-node times shared by the ensemble.
pub(crate) fn common_base_times(ensemble: &[SimulatedScenario]) -> Result<Vec<f64>, BsdeError> {
    let first = ensemble
        .first()
        .ok_or_else(|| BsdeError::Ensemble("no paths".into()))?;
    let times: Vec<f64> = first
        .grid()
        .base_positions()
        .iter()
        .map(|&i| first.grid().time(i))
        .collect();
    for sc in &ensemble[1..] {
        let g = sc.grid();
        let same = g.base_positions().len() == times.len()
            && g
                .base_positions()
                .iter()
                .zip(&times)
                .all(|(&i, &t)| g.time(i) == t);
        if !same {
            return Err(BsdeError::Ensemble(format!(
                "path {} has a different base grid",
                sc.path_index
            )));
        }
    }
    if times.len() < 2 {
        return Err(BsdeError::Ensemble("base grid needs two nodes".into()));
    }
    Ok(times)
}

/// `(values, left limits)` of `Y` along one path from a surrogate.
pub(crate) fn y_path(
    surrogate: &dyn ValueSurrogate,
    path: &GridPath,
) -> Result<GridPath, BsdeError> {
    let grid = path.grid();
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.time(i);
        let v = surrogate.value_at_node(t, path.value(i));
        values.push(v);
        left.push(if i == 0 {
            v
        } else if path.left_limit(i) == path.value(i) {
            v
        } else {
            surrogate.value_at_node(t, path.left_limit(i))
        });
    }
    Ok(GridPath::new(grid.clone(), values, left)?)
}

/// The index of the base node at or before every node of `grid`.
pub(crate) fn base_index_below(sc: &SimulatedScenario) -> Vec<usize> {
    let grid = sc.grid();
    let pos = grid.base_positions();
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for i in 0..grid.len() {
        while k + 1 < pos.len() && pos[k + 1] <= i {
            k += 1;
        }
        out.push(k);
    }
    out
}
