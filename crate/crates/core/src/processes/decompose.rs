use super::{
    jumpdiff::jumpdiff_x_compensator, ForwardModel, JumpDiffusionModel, PdmpModel,
    SimulatedScenario, SimulationError,
};
use crate::measures::{
    integral_against_measure, stochastic_integral, AtomKind, CompensatorSpec, GridPath,
    MarkedPointMeasure, PredictableField,
};

const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

/// `X = X^i + X^p` along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub xi: GridPath,
    pub xp: GridPath,
    /// `max |X - X^i - X^p|` over nodes and left limits.
    pub residual: f64,
}

#[inline]
fn inside(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Splits the path into its purely discontinuous part `X^i` (jumps at
/// inaccessible times only) and the predictable part `X^p`.
pub fn decompose_path(
    model: &ForwardModel,
    scenario: &SimulatedScenario,
) -> Result<Decomposition, SimulationError> {
    let d = match model {
        ForwardModel::Pdmp(m) => decompose_pdmp(m, scenario)?,
        ForwardModel::JumpDiffusion(m) => decompose_jumpdiff(m, scenario)?,
    };
    let scale = scenario
        .path
        .values()
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    if !(d.residual <= DECOMPOSITION_TOLERANCE * scale) {
        return Err(SimulationError::DecompositionResidual {
            time: worst_node(&scenario.path, &d),
            residual: d.residual,
        });
    }
    check_jump_locations(scenario, &d)?;
    Ok(d)
}

fn worst_node(x: &GridPath, d: &Decomposition) -> f64 {
    let mut worst = (0.0, 0.0);
    for i in 0..x.grid().len() {
        let r = (x.value(i) - d.xi.value(i) - d.xp.value(i)).abs();
        if !(r <= worst.1) {
            worst = (x.grid().time(i), r);
        }
    }
    worst.0
}

fn check_jump_locations(sc: &SimulatedScenario, d: &Decomposition) -> Result<(), SimulationError> {
    let grid = sc.path.grid();
    let inaccessible = |i: usize| {
        sc.measure
            .atom_at_node(i)
            .is_some_and(|(_, a)| a.kind == AtomKind::TotallyInaccessible)
    };
    let in_j = |i: usize| sc.compensator.atom_at_node(i).is_some_and(|a| a.in_j());
    for i in 1..grid.len() {
        let tol = DECOMPOSITION_TOLERANCE * (1.0 + sc.path.value(i).abs());
        if d.xi.jump(i).abs() > tol && !inaccessible(i) {
            return Err(SimulationError::ModelMismatch(format!(
                "X^i jumps at t = {} which is not an inaccessible atom",
                grid.time(i)
            )));
        }
        if d.xp.jump(i).abs() > tol && !in_j(i) {
            return Err(SimulationError::ModelMismatch(format!(
                "X^p jumps at t = {} outside J",
                grid.time(i)
            )));
        }
    }
    Ok(())
}

fn residual(x: &GridPath, xi: &GridPath, xp: &GridPath) -> f64 {
    let n = x.grid().len();
    let mut r = 0.0f64;
    for i in 0..n {
        let a = (x.value(i) - xi.value(i) - xp.value(i)).abs();
        let b = (x.left_limit(i) - xi.left_limit(i) - xp.left_limit(i)).abs();
        r = r.max(a).max(b);
        if a.is_nan() || b.is_nan() {
            return f64::NAN;
        }
    }
    r
}

fn decompose_jumpdiff(
    m: &JumpDiffusionModel,
    sc: &SimulatedScenario,
) -> Result<Decomposition, SimulationError> {
    if sc.p_star.is_some() {
        return Err(SimulationError::ModelMismatch(
            "PDMP scenario given to a jump-diffusion".into(),
        ));
    }
    let bm = match (&m.sigma, &sc.brownian) {
        (Some(_), None) => {
            return Err(SimulationError::ModelMismatch(
                "the Brownian path is missing".into(),
            ))
        }
        (_, bm) => bm.as_ref(),
    };
    let gamma = m.gamma.clone();
    let field = PredictableField::new(move |t, x, e| gamma(t, x, e));
    let xi = stochastic_integral(&field, &sc.measure, &sc.compensator, &sc.path)?;

    let x = &sc.path;
    let grid = x.grid();
    let n = grid.len();
    let mut values = vec![m.x0; n];
    let mut left = vec![m.x0; n];
    for i in 1..n {
        let (t0, t1) = (grid.time(i - 1), grid.time(i));
        let x0 = x.value(i - 1);
        let mut l = values[i - 1] + (m.b)(t0, x0) * m.clock.rate * (t1 - t0);
        if let (Some(sigma), Some(bm)) = (&m.sigma, bm) {
            l += sigma(t0, x0) * (bm.value(i) - bm.value(i - 1));
        }
        left[i] = l;
        let dc: f64 = m
            .clock
            .jumps
            .iter()
            .filter(|(s, _)| *s == t1)
            .map(|(_, d)| *d)
            .sum();
        values[i] = l + (m.b)(t1, x.left_limit(i)) * dc;
    }
    let xp = GridPath::new(grid.clone(), values, left)?;
    let residual = residual(x, &xi, &xp);
    Ok(Decomposition { xi, xp, residual })
}

/// The PDMP's own jump measure split by where the jump starts: interior
/// jumps feed `X^i`, boundary jumps belong to `X^p`.
fn interior_jump_field() -> PredictableField {
    PredictableField::new(|_, x, e| if inside(x) { e } else { 0.0 })
}

fn decompose_pdmp(m: &PdmpModel, sc: &SimulatedScenario) -> Result<Decomposition, SimulationError> {
    let _ = m;
    if sc.p_star.is_none() {
        return Err(SimulationError::ModelMismatch(
            "jump-diffusion scenario given to a PDMP".into(),
        ));
    }
    let xi = stochastic_integral(&interior_jump_field(), &sc.measure, &sc.compensator, &sc.path)?;
    let x = &sc.path;
    let values: Vec<f64> = x.values().iter().zip(xi.values()).map(|(a, b)| a - b).collect();
    let left: Vec<f64> = x
        .left_limits()
        .iter()
        .zip(xi.left_limits())
        .map(|(a, b)| a - b)
        .collect();
    let xp = GridPath::new(x.grid().clone(), values, left)?;
    let residual = residual(x, &xi, &xp);
    Ok(Decomposition { xi, xp, residual })
}

/// Sup-node discrepancies of the two sides of the measure-transfer identity
/// along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferReport {
    /// `int phi d(mu^X - nu^X)` against `int phi(gamma~) d(mu - nu)`.
    pub compensated: f64,
    /// `int phi dmu^X` against `int phi(gamma~) dmu + sum phi(dX^p)`.
    pub raw: f64,
}

impl TransferReport {
    pub fn max(&self) -> f64 {
        self.compensated.max(self.raw)
    }
}

fn sup_diff(a: &GridPath, b: &GridPath) -> f64 {
    let d = a.max_abs_diff(b);
    if a.values().iter().chain(b.values()).any(|v| v.is_nan()) {
        f64::NAN
    } else {
        d
    }
}

/// Both sides of `int phi(s, x) (mu^X - nu^X)(ds dx) =
/// int phi(s, gamma~(s, e)) (mu - nu)(ds de)` and of its uncompensated
/// pathwise version, on the scenario's grid. `phi(s, 0)` must vanish.
pub fn verify_measure_transfer(
    phi: &PredictableField,
    model: &ForwardModel,
    scenario: &SimulatedScenario,
) -> Result<TransferReport, SimulationError> {
    phi.check_vanishes_at_zero_mark()?;
    let path = &scenario.path;
    let mu_x = scenario.jump_measure()?;
    let (nu_x, gamma_field): (CompensatorSpec, PredictableField) = match model {
        ForwardModel::Pdmp(m) => {
            let nu = super::pdmp_compensator(m, scenario)?;
            let phi = phi.clone();
            (nu, PredictableField::new(move |t, x, e| phi.eval(t, x, e)))
        }
        ForwardModel::JumpDiffusion(m) => {
            let nu = jumpdiff_x_compensator(m, scenario)?;
            let phi = phi.clone();
            let gamma = m.gamma.clone();
            (
                nu,
                PredictableField::new(move |t, x, e| phi.eval(t, x, gamma(t, x, e))),
            )
        }
    };
    let lhs = stochastic_integral(phi, &mu_x, &nu_x, path)?;
    let rhs = stochastic_integral(&gamma_field, &scenario.measure, &scenario.compensator, path)?;
    let compensated = sup_diff(&lhs, &rhs);

    let lhs_raw = integral_against_measure(phi, &mu_x, path)?;
    let rhs_raw = raw_right_side(phi, model, scenario, &mu_x)?;
    let raw = sup_diff(&lhs_raw, &rhs_raw);
    Ok(TransferReport { compensated, raw })
}

/// `int phi(gamma~) dmu + sum_{s <= t} phi(s, dX^p_s)`.
fn raw_right_side(
    phi: &PredictableField,
    model: &ForwardModel,
    sc: &SimulatedScenario,
    mu_x: &MarkedPointMeasure,
) -> Result<GridPath, SimulationError> {
    let path = &sc.path;
    let grid = path.grid();
    let n = grid.len();
    let (integral, predictable_jump): (GridPath, Box<dyn Fn(usize) -> f64>) = match model {
        ForwardModel::Pdmp(_) => {
            let p = phi.clone();
            let f = PredictableField::new(move |t, x, e| {
                p.eval(t, x, if inside(x) { e } else { 0.0 })
            });
            let i = integral_against_measure(&f, mu_x, path)?;
            let Some(p_star) = sc.p_star.clone() else {
                return Err(SimulationError::ModelMismatch("missing boundary counter".into()));
            };
            let x = path.clone();
            (
                i,
                Box::new(move |k| if p_star.jump(k) != 0.0 { x.jump(k) } else { 0.0 }),
            )
        }
        ForwardModel::JumpDiffusion(m) => {
            let p = phi.clone();
            let gamma = m.gamma.clone();
            let f = PredictableField::new(move |t, x, e| p.eval(t, x, gamma(t, x, e)));
            let i = integral_against_measure(&f, &sc.measure, path)?;
            let m = m.clone();
            let x = path.clone();
            (
                i,
                Box::new(move |k| {
                    let t = x.grid().time(k);
                    let dc: f64 = m
                        .clock
                        .jumps
                        .iter()
                        .filter(|(s, _)| *s == t)
                        .map(|(_, d)| *d)
                        .sum();
                    (m.b)(t, x.left_limit(k)) * dc
                }),
            )
        }
    };
    let mut values = integral.values().to_vec();
    let mut left = integral.left_limits().to_vec();
    let mut extra = 0.0;
    for k in 1..n {
        left[k] += extra;
        let dxp = predictable_jump(k);
        if dxp != 0.0 {
            extra += phi.eval(grid.time(k), path.left_limit(k), dxp);
        }
        values[k] += extra;
    }
    Ok(GridPath::new(grid.clone(), values, left)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MarkLaw, MarkKernel, TimeGrid};
    use crate::processes::{
        simulate_jumpdiff_scripted, simulate_pdmp, ClockSpec, DeclaredAtom, DrivingMeasure,
        ScriptedJump,
    };
    use std::sync::Arc;

    fn pure_brownian() -> JumpDiffusionModel {
        JumpDiffusionModel {
            b: Arc::new(|_, _| 0.0),
            sigma: Some(Arc::new(|_, _| 1.0)),
            gamma: Arc::new(|_, _, _| 0.0),
            driving: DrivingMeasure::none(),
            clock: ClockSpec::time(),
            x0: 0.0,
        }
    }

    #[test]
    fn brownian_path_is_all_predictable() {
        let m = pure_brownian();
        let base = TimeGrid::uniform(1.0, 20).unwrap();
        let sc = crate::processes::simulate_jumpdiff(&m, &base, 3, 0).unwrap();
        let d = decompose_path(&ForwardModel::JumpDiffusion(m), &sc).unwrap();
        assert!(d.xi.values().iter().all(|v| *v == 0.0));
        assert!(d.xp.max_abs_diff(&sc.path) < 1e-12);
    }

    #[test]
    fn missing_brownian_is_rejected() {
        let m = pure_brownian();
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        let mut sc = crate::processes::simulate_jumpdiff(&m, &base, 3, 0).unwrap();
        sc.brownian = None;
        assert!(decompose_path(&ForwardModel::JumpDiffusion(m), &sc).is_err());
    }

    fn scripted_model() -> JumpDiffusionModel {
        JumpDiffusionModel {
            b: Arc::new(|_, _| 1.0),
            sigma: None,
            gamma: Arc::new(|t, _, e| if t == 0.5 { 0.0 } else { e }),
            driving: DrivingMeasure {
                rate: Arc::new(|_| 1.0),
                rate_max: 1.0,
                marks: Arc::new(|_| MarkLaw::Dirac(0.5)),
                atoms: vec![DeclaredAtom {
                    time: 0.5,
                    kernel: MarkKernel::dirac(1.0, 0.0),
                }],
            },
            clock: ClockSpec {
                rate: 0.0,
                jumps: vec![(0.5, 0.5)],
            },
            x0: 0.0,
        }
    }

    #[test]
    fn predictable_clock_jump_lands_in_xp() {
        let m = scripted_model();
        let base = TimeGrid::uniform(1.0, 10).unwrap();
        let script = [
            ScriptedJump { time: 0.2, mark: 0.5 },
            ScriptedJump { time: 0.7, mark: 0.5 },
        ];
        let sc = simulate_jumpdiff_scripted(&m, &base, &script).unwrap();
        let model = ForwardModel::JumpDiffusion(m);
        let d = decompose_path(&model, &sc).unwrap();
        let k = sc.grid().index_of(0.5).unwrap();
        assert_eq!(d.xp.jump(k), 0.5);
        assert_eq!(d.xi.jump(k), 0.0);
        let phi = PredictableField::jump_transform(|_, x| if x.abs() <= 1.0 { x * x } else { 0.0 })
            .unwrap();
        let r = verify_measure_transfer(&phi, &model, &sc).unwrap();
        assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn non_jump_transform_is_rejected() {
        let m = scripted_model();
        let base = TimeGrid::uniform(1.0, 10).unwrap();
        let sc = simulate_jumpdiff_scripted(&m, &base, &[]).unwrap();
        let phi = PredictableField::new(|_, _, x| x + 1.0);
        assert!(verify_measure_transfer(&phi, &ForwardModel::JumpDiffusion(m), &sc).is_err());
    }

    #[test]
    fn pdmp_transfer_is_exact() {
        let m = PdmpModel::new(
            Arc::new(|_| 1.0),
            Arc::new(|_| 1.0),
            1.0,
            Arc::new(|y| MarkLaw::uniform_discrete(vec![0.25 - y, 0.75 - y]).unwrap()),
            0.5,
        )
        .unwrap();
        let base = TimeGrid::uniform(2.0, 20).unwrap();
        let model = ForwardModel::Pdmp(m.clone());
        for seed in 0..20 {
            let sc = simulate_pdmp(&m, &base, seed, 0).unwrap();
            let phi = PredictableField::jump_transform(|_, x: f64| x.abs().min(1.0)).unwrap();
            let r = verify_measure_transfer(&phi, &model, &sc).unwrap();
            assert_eq!(r.compensated, 0.0);
            assert!(r.raw <= 1e-12);
            decompose_path(&model, &sc).unwrap();
        }
    }
}
