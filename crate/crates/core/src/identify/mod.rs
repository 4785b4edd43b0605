//! Checks of the identification formulas against a value-function oracle.
//!
//! With `Y_t = v(t, X_t)` the `Z` component should equal
//! `d_x v(t, X_t) d<X^c, N>/d<N>` and `U` should equal the jump increment of
//! `v` along `X`, up to a mark-constant term `l` on the predictable times in
//! `K`. The gap `H = U - (v(s, X_{s-} + gamma(s, e)) - v(s, X_{s-}))` must
//! integrate to zero against `mu - nu`.
//!
//! Every statistic is a pairwise-summed reduction of per-path values, so
//! rayon's scheduling does not change the numbers.

use rayon::prelude::*;
use thiserror::Error;

use crate::bsde::{BsdeSolution, Oracle};
use crate::measures::{
    kernel_decompose, stochastic_integral, GridPath, MeasureError, PredictableField,
    SampledField,
};
use crate::processes::{ForwardModel, SimulatedScenario};
use crate::stats::{pairwise_sum, MeanSe, Z_999};

/// Pathwise tolerance for identities that hold exactly.
pub const PATHWISE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("the model has no continuous martingale part; use the jump identification checks")]
    NoContinuousPart,
    #[error("input mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// A field on marks given by a predictable surrogate plus its values at the
/// realised atoms of every path.
#[derive(Clone)]
pub struct AtomField {
    pub field: PredictableField,
    pub atom_values: Vec<Vec<f64>>,
}

impl std::fmt::Debug for AtomField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AtomField")
            .field("paths", &self.atom_values.len())
            .finish()
    }
}

impl AtomField {
    pub fn of_solution(sol: &BsdeSolution) -> Self {
        Self {
            field: sol.u_field.clone(),
            atom_values: sol.u_atoms.clone(),
        }
    }

    /// The field evaluated at the atoms of each path.
    pub fn from_field(field: PredictableField, ensemble: &[SimulatedScenario]) -> Self {
        let atom_values = ensemble
            .iter()
            .map(|sc| {
                sc.measure
                    .atoms()
                    .iter()
                    .map(|a| field.eval(a.time, sc.path.left_limit(a.node), a.mark))
                    .collect()
            })
            .collect();
        Self { field, atom_values }
    }

    pub fn on_path(&self, p: usize) -> SampledField<'_> {
        SampledField {
            atom_values: &self.atom_values[p],
            field: &self.field,
        }
    }

    fn check(&self, ensemble: &[SimulatedScenario]) -> Result<(), IdentifyError> {
        if self.atom_values.len() != ensemble.len() {
            return Err(IdentifyError::Mismatch(format!(
                "{} atom tables for {} paths",
                self.atom_values.len(),
                ensemble.len()
            )));
        }
        for (sc, vals) in ensemble.iter().zip(&self.atom_values) {
            if vals.len() != sc.measure.len() {
                return Err(IdentifyError::Mismatch(format!(
                    "path {}: {} values for {} atoms",
                    sc.path_index,
                    vals.len(),
                    sc.measure.len()
                )));
            }
        }
        Ok(())
    }
}

/// `(t, x, e) -> v(t, x + gamma(t, x, e)) - v(t, x)`.
pub fn oracle_increment(oracle: &Oracle, model: &ForwardModel) -> PredictableField {
    let (o, m) = (oracle.clone(), model.clone());
    PredictableField::new(move |t, x, e| o.value(t, x + m.gamma_tilde(t, x, e)) - o.value(t, x))
}

/// `H = U - (v(s, X_{s-} + gamma) - v(s, X_{s-}))`, at the atoms and as a
/// field.
pub fn compute_h(
    u: &AtomField,
    oracle: &Oracle,
    model: &ForwardModel,
    ensemble: &[SimulatedScenario],
) -> Result<AtomField, IdentifyError> {
    u.check(ensemble)?;
    let inc = oracle_increment(oracle, model);
    let atom_values = ensemble
        .iter()
        .zip(&u.atom_values)
        .map(|(sc, us)| {
            sc.measure
                .atoms()
                .iter()
                .zip(us)
                .map(|(a, u)| u - inc.eval(a.time, sc.path.left_limit(a.node), a.mark))
                .collect()
        })
        .collect();
    let uf = u.field.clone();
    let field = PredictableField::new(move |t, x, e| uf.eval(t, x, e) - inc.eval(t, x, e));
    Ok(AtomField { field, atom_values })
}

/// Outcome of a mean-zero test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestStat {
    pub mean: f64,
    pub se: f64,
    pub pass: bool,
}

impl TestStat {
    fn of(values: &[f64]) -> Self {
        let s = MeanSe::of(values);
        Self {
            mean: s.mean,
            se: s.se,
            pass: s.mean.abs() <= Z_999 * s.se,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleStat {
    /// Terminal values of `H * (mu - nu)` across paths.
    pub terminal: TestStat,
    /// Largest `|H * (mu - nu)_t|` over nodes, left limits and paths.
    pub sup: f64,
}

impl MartingaleStat {
    pub fn pathwise_exact(&self) -> bool {
        self.sup <= PATHWISE_TOLERANCE
    }
}

/// Terminal mean and pathwise sup of `int H d(mu - nu)`.
pub fn martingale_null_test(
    h: &AtomField,
    ensemble: &[SimulatedScenario],
) -> Result<MartingaleStat, IdentifyError> {
    h.check(ensemble)?;
    let per_path: Vec<(f64, f64)> = ensemble
        .par_iter()
        .enumerate()
        .map(|(p, sc)| {
            let i = stochastic_integral(&h.on_path(p), &sc.measure, &sc.compensator, &sc.path)?;
            let sup = i
                .values()
                .iter()
                .chain(i.left_limits())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            Ok((i.terminal(), sup))
        })
        .collect::<Result<_, MeasureError>>()?;
    let terminal: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    Ok(MartingaleStat {
        terminal: TestStat::of(&terminal),
        sup: per_path.iter().map(|p| p.1).fold(0.0, f64::max),
    })
}

/// Relative `L^2(dP d<N>)` error of `Z` against `sigma d_x v`, with `<N>_t = t`
/// for the driving Brownian motion and the left-endpoint rule on each path's
/// grid.
pub fn identify_z(
    solution: &BsdeSolution,
    oracle: &Oracle,
    model: &ForwardModel,
    ensemble: &[SimulatedScenario],
) -> Result<f64, IdentifyError> {
    let sigma = model.sigma().ok_or(IdentifyError::NoContinuousPart)?;
    let z = solution.z.as_ref().ok_or(IdentifyError::NoContinuousPart)?;
    let per_path: Vec<(f64, f64)> = ensemble
        .par_iter()
        .zip(z)
        .map(|(sc, z)| {
            let grid = sc.grid();
            let (mut err, mut norm) = (0.0, 0.0);
            for i in 1..grid.len() {
                let t = grid.time(i - 1);
                let dt = grid.time(i) - t;
                let x = sc.path.value(i - 1);
                let want = sigma(t, x) * oracle.derivative(t, x);
                err += (z.value(i - 1) - want).powi(2) * dt;
                norm += want * want * dt;
            }
            (err, norm)
        })
        .collect();
    let err = pairwise_sum(&per_path.iter().map(|p| p.0).collect::<Vec<_>>());
    let norm = pairwise_sum(&per_path.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(relative(err.sqrt(), norm.sqrt()))
}

/// `max_k ||Y_{t_k} - v(t_k, X_{t_k})|| / max_k ||v(t_k, X_{t_k})||` over the
/// base nodes, norms in `L^2(P)` estimated across the ensemble.
pub fn y_rel_error(
    solution: &BsdeSolution,
    oracle: &Oracle,
    ensemble: &[SimulatedScenario],
) -> Result<f64, IdentifyError> {
    if solution.y.len() != ensemble.len() {
        return Err(IdentifyError::Mismatch(format!(
            "{} Y paths for {} scenarios",
            solution.y.len(),
            ensemble.len()
        )));
    }
    let steps = solution.base_times.len();
    let per_path: Vec<Vec<(f64, f64)>> = ensemble
        .par_iter()
        .zip(&solution.y)
        .map(|(sc, y)| {
            sc.grid()
                .base_positions()
                .iter()
                .map(|&i| {
                    let want = oracle.value(sc.grid().time(i), sc.path.value(i));
                    ((y.value(i) - want).powi(2), want * want)
                })
                .collect()
        })
        .collect();
    let (mut err, mut norm) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let e: Vec<f64> = per_path.iter().map(|p| p[k].0).collect();
        let v: Vec<f64> = per_path.iter().map(|p| p[k].1).collect();
        err = err.max(pairwise_sum(&e));
        norm = norm.max(pairwise_sum(&v));
    }
    Ok(relative(err.sqrt(), norm.sqrt()))
}

/// `a / b`, with `0 / 0 = 0`.
pub fn relative(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// The fitted `l` at one `K`-atom.
#[derive(Debug, Clone, PartialEq)]
pub struct LFit {
    pub path: u64,
    /// 1-based count of `K`-atoms on the path ("boundary hit #n").
    pub hit: usize,
    pub time: f64,
    pub l: f64,
}

/// Split of a field's `L^2(nu)` mass after fitting `l 1_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KSplit {
    pub l_fit: Vec<LFit>,
    /// `||H||_{L^2(nu^c)}`, ensemble root mean square.
    pub h_nuc_l2: f64,
    /// `||H - l 1_K||_{L^2(nu^d)}`.
    pub h_nud_residual: f64,
}

/// Ensemble version of the kernel decomposition; `l` is the kernel mean of
/// the surrogate at each `K`-atom, which only uses pre-jump information.
pub fn decompose_h_on_k(
    h: &AtomField,
    ensemble: &[SimulatedScenario],
) -> Result<KSplit, IdentifyError> {
    h.check(ensemble)?;
    let parts: Vec<_> = ensemble
        .par_iter()
        .enumerate()
        .map(|(p, sc)| kernel_decompose(&h.on_path(p), &sc.compensator, &sc.path))
        .collect::<Result<_, MeasureError>>()?;
    let n = ensemble.len().max(1) as f64;
    let cont: Vec<f64> = parts.iter().map(|d| d.residual_continuous).collect();
    let disc: Vec<f64> = parts
        .iter()
        .map(|d| d.residual_k + d.residual_j_not_k)
        .collect();
    let l_fit = ensemble
        .iter()
        .zip(&parts)
        .flat_map(|(sc, d)| {
            d.l.iter().enumerate().map(move |(j, &(time, l))| LFit {
                path: sc.path_index,
                hit: j + 1,
                time,
                l,
            })
        })
        .collect();
    Ok(KSplit {
        l_fit,
        h_nuc_l2: (pairwise_sum(&cont) / n).sqrt(),
        h_nud_residual: (pairwise_sum(&disc) / n).sqrt(),
    })
}

/// Ensemble `(||W||_{L^2(nu^c)}, ||W||_{L^2(nu^d)})`, root mean squares.
pub fn l2_split(w: &AtomField, ensemble: &[SimulatedScenario]) -> Result<(f64, f64), IdentifyError> {
    w.check(ensemble)?;
    let parts: Vec<(f64, f64)> = ensemble
        .par_iter()
        .enumerate()
        .map(|(p, sc)| {
            // on a mass-1 kernel int |W|^2 = int |W - l|^2 + l^2
            let d = kernel_decompose(&w.on_path(p), &sc.compensator, &sc.path)?;
            let on_k: f64 = d.l.iter().map(|(_, l)| l * l).sum();
            Ok((d.residual_continuous, d.residual_k + on_k + d.residual_j_not_k))
        })
        .collect::<Result<_, MeasureError>>()?;
    let n = ensemble.len().max(1) as f64;
    let c = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
    let d = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(((c / n).sqrt(), (d / n).sqrt()))
}

/// `A^v = v(t, X_t) - v(0, X_0) - int d_x v dX^c - int (v-increment) d(mu - nu)`
/// on one path, with the same left-endpoint sums the simulator uses.
pub fn extract_remainder(
    oracle: &Oracle,
    model: &ForwardModel,
    sc: &SimulatedScenario,
) -> Result<GridPath, IdentifyError> {
    let grid = sc.grid();
    let n = grid.len();
    let inc = oracle_increment(oracle, model);
    let jumps = stochastic_integral(&inc, &sc.measure, &sc.compensator, &sc.path)?;
    let mut cont = vec![0.0; n];
    if let (Some(sigma), Some(w)) = (model.sigma(), &sc.brownian) {
        for i in 1..n {
            let t = grid.time(i - 1);
            let x = sc.path.value(i - 1);
            cont[i] = cont[i - 1] + oracle.derivative(t, x) * sigma(t, x) * (w.value(i) - w.value(i - 1));
        }
    }
    let v0 = oracle.value(0.0, sc.path.value(0));
    let values = (0..n)
        .map(|i| oracle.value(grid.time(i), sc.path.value(i)) - v0 - cont[i] - jumps.value(i))
        .collect();
    let left = (0..n)
        .map(|i| {
            oracle.value(grid.time(i), sc.path.left_limit(i)) - v0 - cont[i] - jumps.left_limit(i)
        })
        .collect();
    Ok(GridPath::new(grid.clone(), values, left)?)
}

/// Discrete covariation `sum dA^v dN` per path, tested for mean zero. Paths
/// without a continuous martingale contribute exactly zero.
pub fn orthogonality_test(remainders: &[GridPath], brownian: &[Option<&GridPath>]) -> TestStat {
    let cov: Vec<f64> = remainders
        .par_iter()
        .zip(brownian)
        .map(|(a, w)| match w {
            Some(w) => (1..a.grid().len())
                .map(|i| (a.value(i) - a.value(i - 1)) * (w.value(i) - w.value(i - 1)))
                .sum(),
            None => 0.0,
        })
        .collect();
    TestStat::of(&cov)
}

/// Everything the harness reports for one run; `None` marks checks that were
/// not run or do not apply to the model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentificationReport {
    pub z_rel_error: Option<f64>,
    pub martingale: Option<MartingaleStat>,
    /// `||H||_{L^2(nu^c)}` and the same norm of `U`.
    pub h_nuc_l2: Option<(f64, f64)>,
    /// `||H - l 1_K||_{L^2(nu^d)}` and `||U||_{L^2(nu^d)}`.
    pub h_nud_residual: Option<(f64, f64)>,
    pub l_fit: Vec<LFit>,
    pub orthogonality: Option<TestStat>,
}
