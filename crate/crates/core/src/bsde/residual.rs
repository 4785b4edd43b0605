use super::lsmc::u_average;
use super::{BsdeError, BsdeProblem, BsdeSolution, DriverArgs, DriverClock};
use crate::measures::{stochastic_integral, SampledField};
use crate::processes::SimulatedScenario;
use crate::stats::MeanSe;

/// Per-path `M_T - M_0` for
/// `M_t = Y_t + int_0^t f dA - int_0^t Z dN - int_0^t U d(mu - nu)`,
/// and its ensemble mean with standard error.
///
/// `Y_0` is itself an ensemble average of `Y_T + int f dA`, so the reported
/// standard error combines the one of that average with the one of the
/// stochastic integrals.
pub fn martingale_residual(
    problem: &BsdeProblem,
    solution: &BsdeSolution,
    ensemble: &[SimulatedScenario],
) -> Result<(Vec<f64>, MeanSe), BsdeError> {
    let mut drifts = Vec::with_capacity(ensemble.len());
    let mut anchors = Vec::with_capacity(ensemble.len());
    let mut integrals = Vec::with_capacity(ensemble.len());
    for (p, sc) in ensemble.iter().enumerate() {
        let y = &solution.y[p];
        let grid = sc.grid();
        let n = grid.len();
        let field = SampledField {
            atom_values: &solution.u_atoms[p],
            field: &solution.u_field,
        };
        let u_int = stochastic_integral(&field, &sc.measure, &sc.compensator, &sc.path)?;
        let z_int = match (&solution.z, &sc.brownian) {
            (Some(z), Some(w)) => {
                let z = &z[p];
                (1..n)
                    .map(|i| z.value(i - 1) * (w.value(i) - w.value(i - 1)))
                    .sum::<f64>()
            }
            _ => 0.0,
        };
        let mut f_int = 0.0;
        if !problem.driver.is_zero() {
            let z_at = |i: usize| solution.z.as_ref().map_or(0.0, |z| z[p].value(i));
            let clock = sc.compensator.clock();
            for i in 1..n {
                let (t0, x0) = (grid.time(i - 1), sc.path.value(i - 1));
                let (dac, atom) = match problem.clock {
                    DriverClock::Time => (grid.time(i) - t0, 0.0),
                    DriverClock::Compensator => (
                        clock.left_limit(i) - clock.value(i - 1),
                        clock.value(i) - clock.left_limit(i),
                    ),
                };
                let u = if problem.driver.uses_u() {
                    u_average(sc, solution.value.as_ref(), &problem.model, t0, x0)
                } else {
                    0.0
                };
                let args = DriverArgs {
                    t: t0,
                    x: x0,
                    y: y.value(i - 1),
                    z: z_at(i - 1),
                    u,
                };
                f_int += problem.driver.eval(&args) * dac;
                if atom > 0.0 {
                    let args = DriverArgs {
                        t: grid.time(i),
                        x: sc.path.left_limit(i),
                        y: y.left_limit(i),
                        z: z_at(i - 1),
                        u: 0.0,
                    };
                    f_int += problem.driver.eval(&args) * atom;
                }
            }
        }
        anchors.push(y.terminal() + f_int);
        integrals.push(z_int + u_int.terminal());
        drifts.push(y.terminal() - y.value(0) + f_int - z_int - u_int.terminal());
    }
    let (a, b) = (MeanSe::of(&anchors), MeanSe::of(&integrals));
    let stat = MeanSe {
        se: a.se.hypot(b.se),
        ..MeanSe::of(&drifts)
    };
    Ok((drifts, stat))
}
