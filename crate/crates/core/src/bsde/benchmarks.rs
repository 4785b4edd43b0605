//! Built-in benchmark problems.
//!
//! | id | model | g |
//! |----|-------|---|
//! | `brownian-linear` | `dX = dW` | `x` |
//! | `heat-quadratic` | `dX = dW` | `x^2` |
//! | `poisson-linear` | compensated Poisson, unit marks | `x` |
//! | `brownian-poisson` | `dW` plus compensated Poisson, marks in {0.5, 1} | `x^2` |
//! | `jd-predictable` | unit drift on a clock that jumps by 0.5 at t = 0.5, Poisson marks 0.5 | `x` |
//! | `pdmp-deterministic` | `h = 1`, `lambda = 0`, forced jump from 1 to 0.25 | `x` |
//! | `pdmp-interior` | `h = 0.5 - x`, `lambda = 2`, jumps to {0.1, ..., 0.9} | `x` |
//! | `pdmp-boundary` | `h = 1`, `lambda = 1`, every jump lands in {0.25, 0.75} | `Re(e^{kx} + D)`, see [`boundary_mode`] |
//! | `violating-h` | `pdmp-interior`, with `U` shifted by 0.1 off the realised atoms | `x` |

use std::sync::Arc;

use nalgebra::Complex;

use super::{closed_form_oracle, BsdeError, BsdeProblem, DriverClock, Oracle};
use crate::measures::{MarkKernel, MarkLaw};
use crate::processes::{
    ClockSpec, DeclaredAtom, DrivingMeasure, ForwardModel, JumpDiffusionModel, PdmpModel,
};

pub const BENCHMARK_IDS: &[&str] = &[
    "brownian-linear",
    "heat-quadratic",
    "poisson-linear",
    "brownian-poisson",
    "jd-predictable",
    "pdmp-deterministic",
    "pdmp-interior",
    "pdmp-boundary",
    "violating-h",
];

pub(crate) const BP_RATE: f64 = 1.0;
pub(crate) const BP_MARKS: [f64; 2] = [0.5, 1.0];
pub(crate) const BP_SECOND_MOMENT: f64 = 0.625;
pub(crate) const PDMP_DET_Q: f64 = 0.25;
pub(crate) const INTERIOR_THETA: f64 = 1.0;
pub(crate) const INTERIOR_LAMBDA: f64 = 2.0;
const INTERIOR_STATES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const BOUNDARY_STATES: [f64; 2] = [0.25, 0.75];
pub(crate) const BOUNDARY_LAMBDA: f64 = 1.0;
/// Shift applied to the predictable surrogate of `U` in the positive control.
pub const VIOLATION_SHIFT: f64 = 0.1;

/// Exponent `k` and offset `D` of the boundary benchmark's value function
/// `v(t, x) = Re(e^{(k - lambda)(T - t)} (e^{kx} + D))`.
///
/// `e^k` must equal the kernel average `(e^{k/4} + e^{3k/4}) / 2` so that
/// `v(t, 1)` equals the average over the landing states; with `u = e^{k/4}`
/// this is `2u^3 - u^2 - 1 = 0`, whose non-trivial roots are
/// `u = (-1 +- i sqrt 7) / 4`. `D = lambda e^k / (k - lambda)` closes the
/// generator equation.
pub(crate) fn boundary_mode() -> (Complex<f64>, Complex<f64>) {
    let u = Complex::new(-0.25, 7f64.sqrt() / 4.0);
    let k = u.ln() * 4.0;
    let d = k.exp() * BOUNDARY_LAMBDA / (k - BOUNDARY_LAMBDA);
    (k, d)
}

pub(crate) fn horizon(id: &str) -> Result<f64, BsdeError> {
    match id {
        "pdmp-deterministic" => Ok(1.5),
        _ if BENCHMARK_IDS.contains(&id) => Ok(1.0),
        _ => Err(BsdeError::UnknownBenchmark(id.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub id: &'static str,
    pub problem: BsdeProblem,
    pub horizon: f64,
    /// Shift added to the predictable surrogate of `U` (not to its values at
    /// the realised atoms), for positive controls.
    pub control_shift: Option<f64>,
}

impl Benchmark {
    pub fn oracle(&self) -> Result<Oracle, BsdeError> {
        closed_form_oracle(self.id)
    }
}

fn brownian(sigma: bool, driving: DrivingMeasure) -> ForwardModel {
    ForwardModel::JumpDiffusion(JumpDiffusionModel {
        b: Arc::new(|_, _| 0.0),
        sigma: sigma.then(|| Arc::new(|_: f64, _: f64| 1.0) as _),
        gamma: Arc::new(|_, _, e| e),
        driving,
        clock: ClockSpec::time(),
        x0: 0.0,
    })
}

fn poisson(rate: f64, marks: MarkLaw) -> DrivingMeasure {
    DrivingMeasure {
        rate: Arc::new(move |_| rate),
        rate_max: rate,
        marks: Arc::new(move |_| marks.clone()),
        atoms: Vec::new(),
    }
}

fn to_states(states: &'static [f64]) -> Arc<dyn Fn(f64) -> MarkLaw + Send + Sync> {
    Arc::new(move |y| {
        MarkLaw::uniform_discrete(states.iter().map(|s| s - y).collect())
            .expect("finite marks")
    })
}

fn pdmp(model: Result<PdmpModel, crate::processes::SimulationError>) -> ForwardModel {
    ForwardModel::Pdmp(model.expect("benchmark PDMP is valid"))
}

pub fn benchmark(id: &str) -> Result<Benchmark, BsdeError> {
    let horizon = horizon(id)?;
    let linear: crate::processes::ScalarFn = Arc::new(|x| x);
    let square: crate::processes::ScalarFn = Arc::new(|x| x * x);
    let (id, problem, control_shift) = match id {
        "brownian-linear" => (
            "brownian-linear",
            BsdeProblem::new(brownian(true, DrivingMeasure::none()), linear)
                .with_clock(DriverClock::Time),
            None,
        ),
        "heat-quadratic" => (
            "heat-quadratic",
            BsdeProblem::new(brownian(true, DrivingMeasure::none()), square)
                .with_clock(DriverClock::Time),
            None,
        ),
        "poisson-linear" => (
            "poisson-linear",
            BsdeProblem::new(brownian(false, poisson(1.0, MarkLaw::Dirac(1.0))), linear),
            None,
        ),
        "brownian-poisson" => {
            let marks = MarkLaw::uniform_discrete(BP_MARKS.to_vec()).expect("finite marks");
            (
                "brownian-poisson",
                BsdeProblem::new(brownian(true, poisson(BP_RATE, marks)), square),
                None,
            )
        }
        "jd-predictable" => {
            let model = JumpDiffusionModel {
                b: Arc::new(|_, _| 1.0),
                sigma: None,
                gamma: Arc::new(|t, _, e| if t == 0.5 { 0.0 } else { e }),
                driving: DrivingMeasure {
                    atoms: vec![DeclaredAtom {
                        time: 0.5,
                        kernel: MarkKernel::dirac(1.0, 0.0),
                    }],
                    ..poisson(1.0, MarkLaw::Dirac(0.5))
                },
                clock: ClockSpec {
                    rate: 0.0,
                    jumps: vec![(0.5, 0.5)],
                },
                x0: 0.0,
            };
            (
                "jd-predictable",
                BsdeProblem::new(ForwardModel::JumpDiffusion(model), linear),
                None,
            )
        }
        "pdmp-deterministic" => {
            let m = PdmpModel::new(
                Arc::new(|_| 1.0),
                Arc::new(|_| 0.0),
                0.0,
                Arc::new(|y| MarkLaw::Dirac(PDMP_DET_Q - y)),
                0.0,
            );
            ("pdmp-deterministic", BsdeProblem::new(pdmp(m), linear), None)
        }
        "pdmp-interior" | "violating-h" => {
            let m = PdmpModel::new(
                Arc::new(|x| INTERIOR_THETA * (0.5 - x)),
                Arc::new(|_| INTERIOR_LAMBDA),
                INTERIOR_LAMBDA,
                to_states(&INTERIOR_STATES),
                0.2,
            );
            let (id, shift) = if id == "violating-h" {
                ("violating-h", Some(VIOLATION_SHIFT))
            } else {
                ("pdmp-interior", None)
            };
            (id, BsdeProblem::new(pdmp(m), linear), shift)
        }
        "pdmp-boundary" => {
            let m = PdmpModel::new(
                Arc::new(|_| 1.0),
                Arc::new(|_| BOUNDARY_LAMBDA),
                BOUNDARY_LAMBDA,
                to_states(&BOUNDARY_STATES),
                0.5,
            );
            let (k, d) = boundary_mode();
            let g: crate::processes::ScalarFn = Arc::new(move |x| ((k * x).exp() + d).re);
            ("pdmp-boundary", BsdeProblem::new(pdmp(m), g), None)
        }
        other => return Err(BsdeError::UnknownBenchmark(other.to_string())),
    };
    Ok(Benchmark {
        id,
        problem,
        horizon,
        control_shift,
    })
}
