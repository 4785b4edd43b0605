//! Least-squares Monte Carlo on the base grid.
//!
//! At each base node `t_k`, going backwards, the targets `Y_{t_{k+1}}` are
//! regressed on a polynomial basis in `X_{t_k}`. `Z` comes from the
//! regression of `(Y_{t_{k+1}} - E_k) dN / dt`, where `E_k` is the fitted
//! conditional mean, and `U` from the jump of the value surrogate.

use std::sync::Arc;

use super::regression::{Design, PolyFit};
use super::{
    base_index_below, common_base_times, y_path, BsdeError, BsdeProblem, BsdeSolution, DriverArgs,
    DriverClock, StepDiagnostic, ValueSurrogate, FIXED_POINT_MAX_ITER, FIXED_POINT_TOLERANCE,
    STEP_GUARD,
};
use crate::measures::{GridPath, PredictableField};
use crate::processes::{ForwardModel, ScalarFn, SimulatedScenario};
use crate::stats::pairwise_sum;

/// Regression fits at the base nodes, `g` at `T`.
pub(crate) struct StepFits {
    times: Vec<f64>,
    fits: Vec<PolyFit>,
    terminal: ScalarFn,
}

impl ValueSurrogate for StepFits {
    fn base_times(&self) -> &[f64] {
        &self.times
    }

    fn value_from(&self, k: usize, _t: f64, x: f64) -> f64 {
        match self.fits.get(k) {
            Some(f) => f.eval(x),
            None => (self.terminal)(x),
        }
    }
}

/// Per-path data read off the ensemble at the base nodes, node-major.
pub(crate) struct BaseData {
    pub x: Vec<Vec<f64>>,
    pub da: Vec<Vec<f64>>,
    pub dn: Option<Vec<Vec<f64>>>,
}

pub(crate) fn base_data(
    problem: &BsdeProblem,
    ensemble: &[SimulatedScenario],
    times: &[f64],
) -> Result<BaseData, BsdeError> {
    let m = times.len() - 1;
    let n = ensemble.len();
    let mut x = vec![Vec::with_capacity(n); m + 1];
    let mut da = vec![Vec::with_capacity(n); m];
    let want_n = problem.has_brownian();
    let mut dn = want_n.then(|| vec![Vec::with_capacity(n); m]);
    for sc in ensemble {
        let pos = sc.grid().base_positions();
        for k in 0..=m {
            x[k].push(sc.path.value(pos[k]));
        }
        for k in 0..m {
            da[k].push(match problem.clock {
                DriverClock::Compensator => {
                    let c = sc.compensator.clock();
                    c.value(pos[k + 1]) - c.value(pos[k])
                }
                DriverClock::Time => times[k + 1] - times[k],
            });
        }
        if let Some(dn) = dn.as_mut() {
            let w = sc.brownian.as_ref().ok_or_else(|| {
                BsdeError::Ensemble(format!("path {} has no Brownian path", sc.path_index))
            })?;
            for k in 0..m {
                dn[k].push(w.value(pos[k + 1]) - w.value(pos[k]));
            }
        }
    }
    Ok(BaseData { x, da, dn })
}

/// Kernel average of `U(t, x, .)` under the normalised intensity of `sc` at
/// `(t, x)`.
pub(crate) fn u_average(
    sc: &SimulatedScenario,
    value: &dyn ValueSurrogate,
    model: &ForwardModel,
    t: f64,
    x: f64,
) -> f64 {
    let kernel = sc.compensator.ac_at(t, x);
    if kernel.mass() <= 0.0 {
        return 0.0;
    }
    let v0 = value.value(t, x);
    kernel.law().expect(|e| value.value(t, x + model.gamma_tilde(t, x, e)) - v0)
}

/// Implicit step: refits `y_next + f(., y, .) dA` until the fitted values
/// settle. Returns the fit, its residual and the number of iterations.
#[allow(clippy::too_many_arguments)]
pub(crate) fn implicit_fit(
    problem: &BsdeProblem,
    design: &Design,
    t: f64,
    xs: &[f64],
    y_next: &[f64],
    da: &[f64],
    z: &[f64],
    u: &[f64],
    extra: Option<&[f64]>,
) -> Result<(PolyFit, f64, usize), BsdeError> {
    let driver = &problem.driver;
    let base: Vec<f64> = match extra {
        Some(e) => y_next.iter().zip(e).map(|(y, e)| y + e).collect(),
        None => y_next.to_vec(),
    };
    let (mut fit, mut mse) = design.fit(&base);
    if driver.is_zero() {
        return Ok((fit, mse, 1));
    }
    let da_max = da.iter().copied().fold(0.0, f64::max);
    let product = da_max * driver.lipschitz();
    if product >= STEP_GUARD {
        return Err(BsdeError::StepGuard { time: t, product });
    }
    let mut current = design.fitted(&fit);
    let mut change = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let targets: Vec<f64> = (0..xs.len())
            .map(|p| {
                let args = DriverArgs {
                    t,
                    x: xs[p],
                    y: current[p],
                    z: z[p],
                    u: u[p],
                };
                base[p] + driver.eval(&args) * da[p]
            })
            .collect();
        let (next_fit, next_mse) = design.fit(&targets);
        let next = design.fitted(&next_fit);
        change = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        fit = next_fit;
        mse = next_mse;
        current = next;
        if !change.is_finite() {
            return Err(BsdeError::NonFinite { time: t });
        }
        if change <= FIXED_POINT_TOLERANCE {
            return Ok((fit, mse, it));
        }
    }
    Err(BsdeError::NoConvergence {
        time: t,
        iterations: FIXED_POINT_MAX_ITER,
        change,
    })
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Regression Monte Carlo for the jump-diffusion form (also usable on a
/// PDMP ensemble, without exploiting the flow).
pub fn solve_bsde_lsmc(
    problem: &BsdeProblem,
    ensemble: &[SimulatedScenario],
    degree: usize,
) -> Result<BsdeSolution, BsdeError> {
    let times = common_base_times(ensemble)?;
    let m = times.len() - 1;
    let n = ensemble.len();
    let data = base_data(problem, ensemble, &times)?;
    let g = problem.terminal.clone();
    let model = &problem.model;

    let mut y_next: Vec<f64> = data.x[m].iter().map(|&x| g(x)).collect();
    if y_next.iter().any(|y| !y.is_finite()) {
        return Err(BsdeError::NonFinite { time: times[m] });
    }
    // filled from the back; entries before k are never read at step k
    let mut surrogate = StepFits {
        times: times.clone(),
        fits: vec![PolyFit::constant(f64::NAN); m],
        terminal: g.clone(),
    };
    let mut z_fits = vec![PolyFit::constant(0.0); m];
    let mut diagnostics = vec![StepDiagnostic {
        time: times[m],
        mean_y: mean(&y_next),
        mean_z: None,
        regression_residual: 0.0,
        iterations: 0,
    }];

    for k in (0..m).rev() {
        let t = times[k];
        let xs = &data.x[k];
        let design = Design::new(xs, degree, t)?;
        let (cond, _) = design.fit(&y_next);
        let z: Vec<f64> = match &data.dn {
            Some(dn) => {
                let dt = times[k + 1] - t;
                let fitted = design.fitted(&cond);
                let targets: Vec<f64> = (0..n)
                    .map(|p| (y_next[p] - fitted[p]) * dn[k][p] / dt)
                    .collect();
                let (zfit, _) = design.fit(&targets);
                let z = design.fitted(&zfit);
                z_fits[k] = zfit;
                z
            }
            None => vec![0.0; n],
        };
        let u: Vec<f64> = if problem.driver.uses_u() {
            (0..n)
                .map(|p| u_average(&ensemble[p], &surrogate, model, t, xs[p]))
                .collect()
        } else {
            vec![0.0; n]
        };
        let (fit, mse, iterations) =
            implicit_fit(problem, &design, t, xs, &y_next, &data.da[k], &z, &u, None)?;
        y_next = design.fitted(&fit);
        if y_next.iter().any(|y| !y.is_finite()) {
            return Err(BsdeError::NonFinite { time: t });
        }
        diagnostics.push(StepDiagnostic {
            time: t,
            mean_y: mean(&y_next),
            mean_z: data.dn.as_ref().map(|_| mean(&z)),
            regression_residual: mse,
            iterations,
        });
        surrogate.fits[k] = fit;
    }
    diagnostics.reverse();

    assemble(
        problem,
        ensemble,
        times,
        Arc::new(surrogate),
        data.dn.map(|_| z_fits),
        diagnostics,
    )
}

/// Per-path `Y`, `Z` and `U` from the value surrogate and the `Z` fits. On
/// `(t_i, t_{i+1}]` the `Z` path uses the fit of the base interval holding
/// `t_i`, evaluated at `X_{t_i}`.
pub(crate) fn assemble(
    problem: &BsdeProblem,
    ensemble: &[SimulatedScenario],
    times: Vec<f64>,
    surrogate: Arc<dyn ValueSurrogate>,
    z_fits: Option<Vec<PolyFit>>,
    diagnostics: Vec<StepDiagnostic>,
) -> Result<BsdeSolution, BsdeError> {
    let m = times.len() - 1;
    let model = problem.model.clone();
    let mut y = Vec::with_capacity(ensemble.len());
    let mut z = z_fits.as_ref().map(|_| Vec::with_capacity(ensemble.len()));
    let mut u_atoms = Vec::with_capacity(ensemble.len());
    for sc in ensemble {
        y.push(y_path(surrogate.as_ref(), &sc.path)?);
        if let (Some(zf), Some(zs)) = (&z_fits, z.as_mut()) {
            let below = base_index_below(sc);
            let values: Vec<f64> = below
                .iter()
                .zip(sc.path.values())
                .map(|(&k, &x)| zf[k.min(m - 1)].eval(x))
                .collect();
            zs.push(GridPath::continuous(sc.grid().clone(), values)?);
        }
        let us = sc
            .measure
            .atoms()
            .iter()
            .map(|a| {
                let xm = sc.path.left_limit(a.node);
                let jump = model.gamma_tilde(a.time, xm, a.mark);
                surrogate.value(a.time, xm + jump) - surrogate.value(a.time, xm)
            })
            .collect();
        u_atoms.push(us);
    }
    let s = surrogate.clone();
    let u_field = PredictableField::new(move |t, x, e| {
        s.value(t, x + model.gamma_tilde(t, x, e)) - s.value(t, x)
    });
    Ok(BsdeSolution {
        base_times: times,
        y,
        z,
        u_atoms,
        u_field,
        value: surrogate,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{benchmark, Driver};
    use crate::measures::TimeGrid;
    use crate::processes::simulate_ensemble;

    fn run(id: &str, n: usize, steps: usize, seed: u64) -> (BsdeProblem, Vec<SimulatedScenario>) {
        let b = benchmark(id).unwrap();
        let grid = TimeGrid::uniform(b.horizon, steps).unwrap();
        let ens = simulate_ensemble(&b.problem.model, &grid, seed, n).unwrap();
        (b.problem, ens)
    }

    #[test]
    fn constant_terminal_gives_constant_solution() {
        let (mut problem, ens) = run("brownian-poisson", 500, 10, 1);
        problem.terminal = Arc::new(|_| 2.5);
        let sol = solve_bsde_lsmc(&problem, &ens, 3).unwrap();
        for (p, sc) in ens.iter().enumerate() {
            assert!(sol.y[p].values().iter().all(|y| (y - 2.5).abs() < 1e-12));
            assert!(sol.z.as_ref().unwrap()[p].values().iter().all(|z| z.abs() < 1e-12));
            assert!(sol.u_atoms[p].iter().all(|u| u.abs() < 1e-12));
            assert_eq!(sol.u_atoms[p].len(), sc.measure.len());
        }
    }

    #[test]
    fn terminal_condition_holds_pathwise() {
        let (problem, ens) = run("heat-quadratic", 400, 8, 2);
        let sol = solve_bsde_lsmc(&problem, &ens, 3).unwrap();
        for (p, sc) in ens.iter().enumerate() {
            let x = sc.path.terminal();
            assert_eq!(sol.y[p].terminal(), x * x);
        }
    }

    #[test]
    fn constant_driver_shifts_y_by_elapsed_clock() {
        // f = c on the time clock: Y_t = E g + c (T - t)
        let (problem, ens) = run("brownian-linear", 4000, 10, 3);
        let problem = problem
            .with_driver(Driver::linear(0.0, 0.0, 0.0, 0.7))
            .with_clock(DriverClock::Time);
        let sol = solve_bsde_lsmc(&problem, &ens, 1).unwrap();
        // regressions with an intercept preserve sample means exactly
        let terminal: Vec<f64> = ens.iter().map(|sc| sc.path.terminal()).collect();
        let mean_g = pairwise_sum(&terminal) / terminal.len() as f64;
        assert!((sol.y0() - (mean_g + 0.7)).abs() < 1e-12);
        for (p, sc) in ens.iter().enumerate().take(20) {
            let pos = sc.grid().base_positions();
            for (k, &i) in pos.iter().enumerate().skip(1) {
                let t = sol.base_times[k];
                let expect = sc.path.value(i) + 0.7 * (1.0 - t);
                assert!((sol.y[p].value(i) - expect).abs() < 0.1, "{t}");
            }
        }
    }

    #[test]
    fn implicit_driver_converges_and_matches_discounting() {
        // f = -r y with g = x + 1: implicit Euler gives Y_0 = (1 + r dt)^-M
        let (mut problem, ens) = run("brownian-linear", 2000, 20, 4);
        problem.terminal = Arc::new(|x| x + 1.0);
        let r = 0.5;
        let problem = problem
            .with_driver(Driver::linear(-r, 0.0, 0.0, 0.0))
            .with_clock(DriverClock::Time);
        let sol = solve_bsde_lsmc(&problem, &ens, 1).unwrap();
        let expect = (1.0 + r * 0.05f64).powi(-20);
        assert!((sol.y0() - expect).abs() < 0.02, "{}", sol.y0());
        assert!(sol.diagnostics.iter().skip(1).take(5).all(|d| d.iterations > 1));
    }

    #[test]
    fn step_guard_rejects_large_steps() {
        let (problem, ens) = run("brownian-linear", 100, 2, 5);
        let problem = problem
            .with_driver(Driver::linear(2.0, 0.0, 0.0, 0.0))
            .with_clock(DriverClock::Time);
        assert!(matches!(
            solve_bsde_lsmc(&problem, &ens, 1),
            Err(BsdeError::StepGuard { .. })
        ));
    }

    #[test]
    fn csv_dumps_have_headers_and_rows() {
        let (problem, ens) = run("poisson-linear", 200, 5, 6);
        let sol = solve_bsde_lsmc(&problem, &ens, 2).unwrap();
        let steps = sol.steps_csv();
        assert!(steps.starts_with("t,mean_Y,mean_Z,regression_residual\n"));
        assert_eq!(steps.lines().count(), 7);
        let atoms = sol.atoms_csv(&ens);
        let total: usize = ens.iter().map(|s| s.measure.len()).sum();
        assert_eq!(atoms.lines().count(), total + 1);
    }
}
