//! Backward solver for the PDMP form.
//!
//! Regression happens at the base nodes in the single coordinate
//! `X_{t_k}`. Between base nodes the value is carried along the deterministic
//! flow to the next base node, with a first-order correction for an interior
//! jump in between; a boundary hit on the way is resolved with the known
//! mass-1 kernel `Q(boundary, .)`.

use std::sync::Arc;

use super::lsmc::{assemble, base_data, implicit_fit, u_average};
use super::regression::{Design, PolyFit};
use super::{
    base_index_below, common_base_times, BsdeError, BsdeProblem, BsdeSolution, Driver, DriverArgs,
    StepDiagnostic, ValueSurrogate, FIXED_POINT_MAX_ITER, FIXED_POINT_TOLERANCE, STEP_GUARD,
};
use crate::processes::{FlowOutcome, ForwardModel, PdmpModel, ScalarFn, SimulatedScenario};
use crate::stats::pairwise_sum;

/// Nested forced jumps followed before giving up on transport.
const MAX_DEPTH: usize = 4;

pub(crate) struct FlowFits {
    times: Vec<f64>,
    fits: Vec<PolyFit>,
    terminal: ScalarFn,
    model: PdmpModel,
    driver: Driver,
}

impl FlowFits {
    fn at_node(&self, k: usize, x: f64) -> f64 {
        match self.fits.get(k) {
            Some(f) => f.eval(x),
            None => (self.terminal)(x),
        }
    }

    /// True when the flow leaves the closed interval immediately from `x`.
    fn exits(&self, x: f64) -> bool {
        (x >= 1.0 && (self.model.h)(1.0) >= 0.0) || (x <= 0.0 && (self.model.h)(0.0) <= 0.0)
    }

    /// `Y_{s-}` at a forced jump from `b`: the kernel average of the
    /// post-jump values plus the driver's mass-1 contribution.
    fn boundary_value(&self, k: usize, t: f64, b: f64, depth: usize) -> f64 {
        let avg = self
            .model
            .kernel(b)
            .expect(|e| self.transported(k, t, b + e, depth + 1));
        boundary_fixed_point(&self.driver, t, b, avg)
    }

    fn transported(&self, k: usize, t: f64, x: f64, depth: usize) -> f64 {
        if depth > MAX_DEPTH {
            return self.at_node(k, x);
        }
        if self.exits(x) {
            return self.boundary_value(k, t, x.clamp(0.0, 1.0), depth);
        }
        let dur = self.times[k] - t;
        if dur <= 0.0 {
            return self.at_node(k, x);
        }
        let m = &self.model;
        match m.flow.advance(&*m.h, x, dur) {
            FlowOutcome::Reached(y) => {
                let base = self.at_node(k, y);
                let lam = 0.5 * (m.rate(x) + m.rate(y));
                if lam <= 0.0 {
                    return base;
                }
                let p = -(-lam * dur).exp_m1();
                let jump = m.kernel(y).expect(|e| self.at_node(k, y + e));
                (1.0 - p) * base + p * jump
            }
            FlowOutcome::Hit { after, boundary } => {
                let forced = self.boundary_value(k, t + after, boundary, depth);
                let lam = m.rate(x);
                if lam <= 0.0 {
                    return forced;
                }
                let p = -(-lam * after).exp_m1();
                let jump = m.kernel(x).expect(|e| self.at_node(k, x + e));
                (1.0 - p) * forced + p * jump
            }
            FlowOutcome::Escaped { .. } => self.at_node(k, x),
        }
    }
}

impl ValueSurrogate for FlowFits {
    fn base_times(&self) -> &[f64] {
        &self.times
    }

    fn value_from(&self, k: usize, t: f64, x: f64) -> f64 {
        self.transported(k, t, x, 0)
    }
}

/// Solves `y = avg + f(t, b, y, avg - y)`; `avg - y` is the kernel mean of
/// `U = v(post) - y` at the atom.
fn boundary_fixed_point(driver: &Driver, t: f64, b: f64, avg: f64) -> f64 {
    if driver.is_zero() {
        return avg;
    }
    let mut y = avg;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let args = DriverArgs {
            t,
            x: b,
            y,
            z: 0.0,
            u: avg - y,
        };
        let next = avg + driver.eval(&args);
        let done = (next - y).abs() <= FIXED_POINT_TOLERANCE;
        y = next;
        if done {
            break;
        }
    }
    y
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Backward induction for a PDMP ensemble. There is no `Z`.
pub fn solve_bsde_pdmp(
    problem: &BsdeProblem,
    ensemble: &[SimulatedScenario],
    degree: usize,
) -> Result<BsdeSolution, BsdeError> {
    let model = match &problem.model {
        ForwardModel::Pdmp(m) => m.clone(),
        ForwardModel::JumpDiffusion(_) => {
            return Err(BsdeError::Unsupported(
                "the PDMP solver needs a PDMP forward model".into(),
            ))
        }
    };
    let times = common_base_times(ensemble)?;
    let m = times.len() - 1;
    let n = ensemble.len();
    let data = base_data(problem, ensemble, &times)?;
    let g = problem.terminal.clone();

    // forced jumps of each path, grouped by base interval
    let mut hits: Vec<Vec<Vec<(f64, f64)>>> = vec![vec![Vec::new(); n]; m];
    for (p, sc) in ensemble.iter().enumerate() {
        let below = base_index_below(sc);
        for a in sc.compensator.atoms() {
            hits[below[a.node - 1]][p].push((a.time, sc.path.left_limit(a.node)));
        }
    }
    let any_hit = hits.iter().flatten().any(|h| !h.is_empty());
    if any_hit && !problem.driver.is_zero() && problem.driver.lipschitz() >= STEP_GUARD {
        let time = hits
            .iter()
            .flatten()
            .flatten()
            .map(|h| h.0)
            .fold(f64::INFINITY, f64::min);
        return Err(BsdeError::StepGuard {
            time,
            product: problem.driver.lipschitz(),
        });
    }

    let mut surrogate = FlowFits {
        times: times.clone(),
        fits: vec![PolyFit::constant(f64::NAN); m],
        terminal: g.clone(),
        model,
        driver: problem.driver.clone(),
    };
    let mut y_next: Vec<f64> = data.x[m].iter().map(|&x| g(x)).collect();
    if y_next.iter().any(|y| !y.is_finite()) {
        return Err(BsdeError::NonFinite { time: times[m] });
    }
    let mut diagnostics = vec![StepDiagnostic {
        time: times[m],
        mean_y: mean(&y_next),
        mean_z: None,
        regression_residual: 0.0,
        iterations: 0,
    }];
    let zeros = vec![0.0; n];

    for k in (0..m).rev() {
        let t = times[k];
        let xs = &data.x[k];
        let design = Design::new(xs, degree, t)?;
        let (fit, mse, iterations) = if problem.driver.is_zero() {
            let (fit, mse) = design.fit(&y_next);
            (fit, mse, 1)
        } else {
            // continuous part of dA, and the driver's share of each forced jump
            let dac: Vec<f64> = (0..n).map(|p| data.da[k][p] - hits[k][p].len() as f64).collect();
            let extra: Vec<f64> = (0..n)
                .map(|p| {
                    hits[k][p]
                        .iter()
                        .map(|&(s, b)| {
                            let avg = surrogate
                                .model
                                .kernel(b)
                                .expect(|e| surrogate.value(s, b + e));
                            boundary_fixed_point(&surrogate.driver, s, b, avg) - avg
                        })
                        .sum()
                })
                .collect();
            let u: Vec<f64> = if problem.driver.uses_u() {
                (0..n)
                    .map(|p| u_average(&ensemble[p], &surrogate, &problem.model, t, xs[p]))
                    .collect()
            } else {
                zeros.clone()
            };
            implicit_fit(problem, &design, t, xs, &y_next, &dac, &zeros, &u, Some(&extra))?
        };
        y_next = design.fitted(&fit);
        if y_next.iter().any(|y| !y.is_finite()) {
            return Err(BsdeError::NonFinite { time: t });
        }
        diagnostics.push(StepDiagnostic {
            time: t,
            mean_y: mean(&y_next),
            mean_z: None,
            regression_residual: mse,
            iterations,
        });
        surrogate.fits[k] = fit;
    }
    diagnostics.reverse();
    assemble(problem, ensemble, times, Arc::new(surrogate), None, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{benchmark, closed_form_oracle};
    use crate::measures::TimeGrid;
    use crate::processes::simulate_ensemble;

    fn ensemble(id: &str, n: usize, steps: usize, seed: u64) -> (BsdeProblem, Vec<SimulatedScenario>) {
        let b = benchmark(id).unwrap();
        let grid = TimeGrid::uniform(b.horizon, steps).unwrap();
        let ens = simulate_ensemble(&b.problem.model, &grid, seed, n).unwrap();
        (b.problem, ens)
    }

    #[test]
    fn constant_terminal() {
        let (mut problem, ens) = ensemble("pdmp-boundary", 300, 10, 1);
        problem.terminal = Arc::new(|_| -1.25);
        let sol = solve_bsde_pdmp(&problem, &ens, 3).unwrap();
        assert!(sol.z.is_none());
        for (p, sc) in ens.iter().enumerate() {
            assert!(sol.y[p].values().iter().all(|y| (y + 1.25).abs() < 1e-12));
            assert!(sol.y[p].left_limits().iter().all(|y| (y + 1.25).abs() < 1e-12));
            assert!(sol.u_atoms[p].iter().all(|u| u.abs() < 1e-12));
            assert_eq!(sol.u_atoms[p].len(), sc.measure.len());
        }
    }

    #[test]
    fn deterministic_flow_matches_the_forecast() {
        let (problem, ens) = ensemble("pdmp-deterministic", 3, 30, 2);
        let sol = solve_bsde_pdmp(&problem, &ens, 3).unwrap();
        let oracle = closed_form_oracle("pdmp-deterministic").unwrap();
        for (p, sc) in ens.iter().enumerate() {
            let grid = sc.grid();
            for i in 0..grid.len() {
                let t = grid.time(i);
                let want = oracle.value(t, sc.path.value(i));
                assert!((sol.y[p].value(i) - want).abs() < 1e-9, "t = {t}");
            }
            // the forced jump carries no martingale increment
            assert!(sol.u_atoms[p].iter().all(|u| u.abs() < 1e-9));
        }
    }

    #[test]
    fn rejects_jump_diffusion_models() {
        let (problem, ens) = ensemble("brownian-linear", 10, 4, 3);
        assert!(matches!(
            solve_bsde_pdmp(&problem, &ens, 2),
            Err(BsdeError::Unsupported(_))
        ));
    }

    #[test]
    fn y_is_continuous_between_jumps_and_terminal_is_exact() {
        let (problem, ens) = ensemble("pdmp-interior", 400, 10, 4);
        let sol = solve_bsde_pdmp(&problem, &ens, 3).unwrap();
        for (p, sc) in ens.iter().enumerate() {
            assert_eq!(sol.y[p].terminal(), (problem.terminal)(sc.path.terminal()));
        }
    }
}
