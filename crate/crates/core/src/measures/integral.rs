//! Integrals against `mu`, `nu` and `mu - nu` on a grid, and the predictable
//! bracket `C(W)`.
//!
//! The absolutely continuous part of `nu` is integrated with the left-endpoint
//! rule in time: on `(t_{i-1}, t_i]` the integrand and the intensity are frozen
//! at `(t_{i-1}, X_{t_{i-1}})`. Atoms of `mu` and `nu` are integrated exactly,
//! with the pre-jump state `X_{t_i-}`.

use super::{CompensatorSpec, GridPath, Integrand, MarkedPointMeasure, MeasureError, PredictableAtom};

/// Outcome of `(hat W_t, tilde W_t)`. `Undefined` stands for the `+inf`
/// convention when the kernel integral diverges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HatTilde {
    Defined { hat: f64, tilde: f64 },
    Undefined,
}

fn check_measure_on_path(mu: &MarkedPointMeasure, path: &GridPath) -> Result<(), MeasureError> {
    let grid = path.grid();
    for a in mu.atoms() {
        if a.node >= grid.len() || grid.time(a.node) != a.time {
            return Err(MeasureError::NotANode { time: a.time });
        }
    }
    Ok(())
}

fn ac_increment(
    w: &dyn Integrand,
    nu: &CompensatorSpec,
    path: &GridPath,
    i: usize,
    square: bool,
) -> Result<f64, MeasureError> {
    if !nu.has_ac() {
        return Ok(0.0);
    }
    let grid = path.grid();
    let t = grid.time(i - 1);
    let x = path.value(i - 1);
    let dt = grid.time(i) - t;
    let kernel = nu.ac_at(t, x);
    let v = kernel.integrate(|e| {
        let w = w.compensator_value(t, x, e);
        if square {
            w * w
        } else {
            w
        }
    });
    if !v.is_finite() {
        return Err(if square {
            MeasureError::InfiniteBracket { time: t }
        } else {
            MeasureError::NotIntegrable { time: t }
        });
    }
    Ok(v * dt)
}

/// `int W d nu_hat_t` at a predictable atom, or `None` if it diverges.
fn atom_hat(w: &dyn Integrand, atom: &PredictableAtom, x_minus: f64) -> Option<f64> {
    let v = atom
        .kernel
        .integrate(|e| w.compensator_value(atom.time, x_minus, e));
    v.is_finite().then_some(v)
}

/// Per-atom pieces shared by the bracket and the kernel decomposition.
struct AtomTerms {
    hat: f64,
    /// `int |W - hat W|^2 d nu_hat`
    centred: f64,
    /// `int |W|^2 d nu_hat`
    raw: f64,
}

fn atom_terms(
    w: &dyn Integrand,
    atom: &PredictableAtom,
    x_minus: f64,
) -> Result<AtomTerms, MeasureError> {
    let time = atom.time;
    let hat = atom_hat(w, atom, x_minus).ok_or(MeasureError::InfiniteBracket { time })?;
    let centred = atom.kernel.integrate(|e| {
        let d = w.compensator_value(time, x_minus, e) - hat;
        d * d
    });
    let raw = atom.kernel.integrate(|e| {
        let v = w.compensator_value(time, x_minus, e);
        v * v
    });
    if !(centred.is_finite() && raw.is_finite()) {
        return Err(MeasureError::InfiniteBracket { time });
    }
    Ok(AtomTerms { hat, centred, raw })
}

/// `int_{(0, t]} W d(mu - nu)` at every node.
pub fn stochastic_integral(
    w: &dyn Integrand,
    mu: &MarkedPointMeasure,
    nu: &CompensatorSpec,
    path: &GridPath,
) -> Result<GridPath, MeasureError> {
    check_measure_on_path(mu, path)?;
    let grid = path.grid();
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut left = vec![0.0; n];
    let atoms = mu.atoms();
    let mut next = 0;
    for i in 1..n {
        left[i] = values[i - 1] - ac_increment(w, nu, path, i, false)?;
        let mut jump = 0.0;
        while next < atoms.len() && atoms[next].node == i {
            jump += w.atom_value(next, &atoms[next], path.left_limit(i));
            next += 1;
        }
        if let Some(atom) = nu.atom_at_node(i) {
            let hat = atom_hat(w, atom, path.left_limit(i))
                .ok_or(MeasureError::NotIntegrable { time: atom.time })?;
            jump -= hat;
        }
        values[i] = left[i] + jump;
    }
    GridPath::new(grid.clone(), values, left)
}

/// `int_{(0, t]} W dmu` at every node (no compensation).
pub fn integral_against_measure(
    w: &dyn Integrand,
    mu: &MarkedPointMeasure,
    path: &GridPath,
) -> Result<GridPath, MeasureError> {
    check_measure_on_path(mu, path)?;
    let grid = path.grid();
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut left = vec![0.0; n];
    let atoms = mu.atoms();
    let mut next = 0;
    for i in 1..n {
        left[i] = values[i - 1];
        values[i] = left[i];
        while next < atoms.len() && atoms[next].node == i {
            values[i] += w.atom_value(next, &atoms[next], path.left_limit(i));
            next += 1;
        }
    }
    GridPath::new(grid.clone(), values, left)
}

/// `(hat W_t, tilde W_t)` at grid node `node`.
pub fn hat_tilde(
    w: &dyn Integrand,
    mu: &MarkedPointMeasure,
    nu: &CompensatorSpec,
    path: &GridPath,
    node: usize,
) -> HatTilde {
    let x_minus = path.left_limit(node);
    let hat = match nu.atom_at_node(node) {
        Some(atom) if atom.in_j() => match atom_hat(w, atom, x_minus) {
            Some(h) => h,
            None => return HatTilde::Undefined,
        },
        _ => 0.0,
    };
    let realised: f64 = match mu.atom_at_node(node) {
        Some((idx, atom)) => w.atom_value(idx, atom, x_minus),
        None => 0.0,
    };
    HatTilde::Defined {
        hat,
        tilde: realised - hat,
    }
}

/// The predictable bracket
/// `C(W) = |W - hat W 1_J|^2 * nu + sum (1 - nu_hat(R)) |hat W|^2 1_{J \ K}`.
pub fn bracket_c(
    w: &dyn Integrand,
    nu: &CompensatorSpec,
    path: &GridPath,
) -> Result<GridPath, MeasureError> {
    let grid = path.grid();
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut left = vec![0.0; n];
    for i in 1..n {
        left[i] = values[i - 1] + ac_increment(w, nu, path, i, true)?;
        values[i] = left[i];
        if let Some(atom) = nu.atom_at_node(i) {
            if atom.in_j() {
                let terms = atom_terms(w, atom, path.left_limit(i))?;
                values[i] += terms.centred;
                if !atom.in_k() {
                    values[i] += (1.0 - atom.mass()) * terms.hat * terms.hat;
                }
            }
        }
    }
    GridPath::new(grid.clone(), values, left)
}

/// Per-path contributions to `||W||^2_{G^2}` and `||W||^2_{L^2}`:
/// `(C(W)_T, int |W|^2 dnu)`.
pub fn norms(
    w: &dyn Integrand,
    nu: &CompensatorSpec,
    path: &GridPath,
) -> Result<(f64, f64), MeasureError> {
    let g2 = bracket_c(w, nu, path)?.terminal();
    let mut l2 = 0.0;
    for i in 1..path.grid().len() {
        l2 += ac_increment(w, nu, path, i, true)?;
        if let Some(atom) = nu.atom_at_node(i) {
            l2 += atom_terms(w, atom, path.left_limit(i))?.raw;
        }
    }
    Ok((g2, l2))
}

/// Result of splitting `W` into `l 1_K` plus a remainder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelDecomposition {
    /// `(time, l_s)` at every `K`-atom, `l_s` the kernel mean of `W`.
    pub l: Vec<(f64, f64)>,
    /// `||W||^2` against the continuous part `nu^c`.
    pub residual_continuous: f64,
    /// `sum_K int |W - l|^2 d nu_hat`.
    pub residual_k: f64,
    /// `sum_{J \ K} int |W|^2 d nu_hat`.
    pub residual_j_not_k: f64,
}

impl KernelDecomposition {
    /// `||W - l 1_K||^2_{L^2(nu)}`.
    pub fn residual_l2(&self) -> f64 {
        self.residual_continuous + self.residual_k + self.residual_j_not_k
    }
}

/// Fits `l_s = hat W_s` at each `K`-atom and reports what is left.
pub fn kernel_decompose(
    w: &dyn Integrand,
    nu: &CompensatorSpec,
    path: &GridPath,
) -> Result<KernelDecomposition, MeasureError> {
    let mut out = KernelDecomposition::default();
    for i in 1..path.grid().len() {
        out.residual_continuous += ac_increment(w, nu, path, i, true)?;
        if let Some(atom) = nu.atom_at_node(i) {
            if !atom.in_j() {
                continue;
            }
            let terms = atom_terms(w, atom, path.left_limit(i))?;
            if atom.in_k() {
                out.l.push((atom.time, terms.hat));
                out.residual_k += terms.centred;
            } else {
                out.residual_j_not_k += terms.raw;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{AcDensity, AtomKind, MarkKernel, MarkLaw, PredictableField, TimeGrid};
    use std::sync::Arc;

    fn grid_with(events: &[f64]) -> Arc<TimeGrid> {
        let base = TimeGrid::uniform(1.0, 10).unwrap();
        Arc::new(TimeGrid::with_events(&base, events).unwrap())
    }

    #[test]
    fn zero_field_gives_zero_path() {
        let g = grid_with(&[0.33]);
        let p = GridPath::constant(g.clone(), 0.0);
        let mu = MarkedPointMeasure::new(&g, &[(0.33, 1.0, AtomKind::TotallyInaccessible)]).unwrap();
        let ac: AcDensity = Arc::new(|_, _| MarkKernel::dirac(2.0, 1.0));
        let nu = CompensatorSpec::realize(&p, Some(ac), vec![]).unwrap();
        let w = PredictableField::zero();
        let i = stochastic_integral(&w, &mu, &nu, &p).unwrap();
        assert!(i.values().iter().all(|v| *v == 0.0));
        assert_eq!(bracket_c(&w, &nu, &p).unwrap().terminal(), 0.0);
        assert_eq!(norms(&w, &nu, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn compensated_poisson_is_n_minus_lambda_t() {
        let g = grid_with(&[0.33, 0.71]);
        let p = GridPath::constant(g.clone(), 0.0);
        let mu = MarkedPointMeasure::new(
            &g,
            &[
                (0.33, 1.0, AtomKind::TotallyInaccessible),
                (0.71, 1.0, AtomKind::TotallyInaccessible),
            ],
        )
        .unwrap();
        let lambda = 2.0;
        let ac: AcDensity = Arc::new(move |_, _| MarkKernel::dirac(lambda, 1.0));
        let nu = CompensatorSpec::realize(&p, Some(ac), vec![]).unwrap();
        let i = stochastic_integral(&PredictableField::constant(1.0), &mu, &nu, &p).unwrap();
        for (k, &t) in g.nodes().iter().enumerate() {
            let count = mu.count_up_to(t) as f64;
            assert!((i.value(k) - (count - lambda * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn hat_tilde_cases() {
        let g = grid_with(&[0.33, 0.5]);
        let p = GridPath::constant(g.clone(), 0.0);
        let e0 = 0.7;
        let mu = MarkedPointMeasure::new(
            &g,
            &[
                (0.33, 0.4, AtomKind::TotallyInaccessible),
                (0.5, e0, AtomKind::Predictable),
            ],
        )
        .unwrap();
        let nu = CompensatorSpec::realize(&p, None, vec![(0.5, MarkKernel::dirac(1.0, e0))]).unwrap();
        let w_mark = PredictableField::new(|_, _, e| e);
        let one = PredictableField::constant(1.0);
        // no atom anywhere near
        assert_eq!(
            hat_tilde(&w_mark, &mu, &nu, &p, g.index_of(0.2).unwrap()),
            HatTilde::Defined { hat: 0.0, tilde: 0.0 }
        );
        // K-atom with Dirac kernel at the realised mark
        assert_eq!(
            hat_tilde(&w_mark, &mu, &nu, &p, g.index_of(0.5).unwrap()),
            HatTilde::Defined { hat: e0, tilde: 0.0 }
        );
        // inaccessible atom
        assert_eq!(
            hat_tilde(&one, &mu, &nu, &p, g.index_of(0.33).unwrap()),
            HatTilde::Defined { hat: 0.0, tilde: 1.0 }
        );
    }

    #[test]
    fn hat_is_undefined_when_kernel_integral_diverges() {
        let g = grid_with(&[0.5]);
        let p = GridPath::constant(g.clone(), 0.0);
        let mu = MarkedPointMeasure::empty();
        let law = MarkLaw::uniform(0.0, 1.0).unwrap();
        let nu = CompensatorSpec::realize(&p, None, vec![(0.5, MarkKernel::new(1.0, law).unwrap())])
            .unwrap();
        let w = PredictableField::new(|_, _, e| if e < 0.5 { f64::INFINITY } else { 1.0 });
        assert_eq!(
            hat_tilde(&w, &mu, &nu, &p, g.index_of(0.5).unwrap()),
            HatTilde::Undefined
        );
        assert!(matches!(
            bracket_c(&w, &nu, &p),
            Err(MeasureError::InfiniteBracket { .. })
        ));
        assert!(matches!(
            stochastic_integral(&w, &mu, &nu, &p),
            Err(MeasureError::NotIntegrable { .. })
        ));
    }

    #[test]
    fn quasi_left_continuous_bracket_is_l2() {
        let g = grid_with(&[]);
        let p = GridPath::constant(g.clone(), 0.3);
        let law = MarkLaw::discrete(vec![-1.0, 2.0], vec![0.5, 0.5]).unwrap();
        let ac: AcDensity = Arc::new(move |_, _| MarkKernel::new(1.5, law.clone()).unwrap());
        let nu = CompensatorSpec::realize(&p, Some(ac), vec![]).unwrap();
        let w = PredictableField::new(|t, x, e| t + x * e);
        let (g2, l2) = norms(&w, &nu, &p).unwrap();
        assert_eq!(g2, l2);
    }

    #[test]
    fn constant_field_at_k_atom_has_zero_bracket() {
        let g = grid_with(&[]);
        let p = GridPath::constant(g.clone(), 0.0);
        let nu = CompensatorSpec::realize(&p, None, vec![(1.0, MarkKernel::dirac(1.0, 0.3))]).unwrap();
        let c = 2.5;
        let w = PredictableField::constant(c);
        assert_eq!(bracket_c(&w, &nu, &p).unwrap().terminal(), 0.0);
        let dec = kernel_decompose(&w, &nu, &p).unwrap();
        assert_eq!(dec.l, vec![(1.0, c)]);
        assert_eq!(dec.residual_l2(), 0.0);
        let (g2, l2) = norms(&w, &nu, &p).unwrap();
        assert_eq!(g2, 0.0);
        assert_eq!(l2, c * c);
    }

    #[test]
    fn j_not_k_atom_bracket_by_hand() {
        // mass 1/2 on {1, 3} with probabilities 1/2 each -> nu_hat = 1/4 (d1 + d3)
        let g = grid_with(&[0.5]);
        let p = GridPath::constant(g.clone(), 0.0);
        let law = MarkLaw::discrete(vec![1.0, 3.0], vec![0.5, 0.5]).unwrap();
        let nu = CompensatorSpec::realize(&p, None, vec![(0.5, MarkKernel::new(0.5, law).unwrap())])
            .unwrap();
        let w = PredictableField::new(|_, _, e| e);
        // hat W = 1/4 + 3/4 = 1; centred = 1/4 (0 + 4) = 1; extra = (1 - 1/2) * 1 = 1/2
        assert_eq!(bracket_c(&w, &nu, &p).unwrap().terminal(), 1.5);
        // raw = 1/4 (1 + 9) = 2.5
        let dec = kernel_decompose(&w, &nu, &p).unwrap();
        assert!(dec.l.is_empty());
        assert_eq!(dec.residual_j_not_k, 2.5);
        assert_eq!(norms(&w, &nu, &p).unwrap(), (1.5, 2.5));
    }
}
