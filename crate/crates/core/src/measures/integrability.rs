use serde::Serialize;

use super::{GridPath, MarkedPointMeasure};
use crate::stats::pairwise_sum;

/// Per-path truncated jump sums, and their ensemble maxima and means.
///
/// These are magnitudes only: local integrability is a property of the
/// process, not of a finite sample.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IntegrabilityReport {
    pub alpha: f64,
    /// `sum (|x| ^ |x|^2)` per path.
    pub quadratic: Vec<f64>,
    /// `sum (|x| ^ |x|^{1+alpha})` per path.
    pub alpha_power: Vec<f64>,
    /// `sum |v(s, X_- + x) - v(s, X_-) - x dv(s, X_-)| 1_{|x| > 1}` per path.
    pub taylor_remainder: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Magnitude {
    pub max: f64,
    pub mean: f64,
}

impl Magnitude {
    fn of(v: &[f64]) -> Self {
        Self {
            max: v.iter().copied().fold(0.0, f64::max),
            mean: if v.is_empty() {
                0.0
            } else {
                pairwise_sum(v) / v.len() as f64
            },
        }
    }
}

impl IntegrabilityReport {
    pub fn quadratic_summary(&self) -> Magnitude {
        Magnitude::of(&self.quadratic)
    }

    pub fn alpha_power_summary(&self) -> Magnitude {
        Magnitude::of(&self.alpha_power)
    }

    pub fn taylor_summary(&self) -> Magnitude {
        Magnitude::of(&self.taylor_remainder)
    }
}

/// Evaluates the three truncated sums against the jump measure `mu^X` of
/// each path (marks are jump sizes).
pub fn check_integrability(
    ensemble: &[(&GridPath, &MarkedPointMeasure)],
    v: &dyn Fn(f64, f64) -> f64,
    dv: &dyn Fn(f64, f64) -> f64,
    alpha: f64,
) -> IntegrabilityReport {
    let alpha = alpha.clamp(0.0, 1.0);
    let mut quadratic = Vec::with_capacity(ensemble.len());
    let mut alpha_power = Vec::with_capacity(ensemble.len());
    let mut taylor_remainder = Vec::with_capacity(ensemble.len());
    for (path, mu) in ensemble {
        let (mut q, mut a, mut r) = (0.0, 0.0, 0.0);
        for atom in mu.atoms() {
            let x = atom.mark;
            let ax = x.abs();
            q += ax.min(ax * ax);
            a += ax.min(ax.powf(1.0 + alpha));
            if ax > 1.0 {
                let s = atom.time;
                let xm = path.left_limit(atom.node);
                r += (v(s, xm + x) - v(s, xm) - x * dv(s, xm)).abs();
            }
        }
        quadratic.push(q);
        alpha_power.push(a);
        taylor_remainder.push(r);
    }
    IntegrabilityReport {
        alpha,
        quadratic,
        alpha_power,
        taylor_remainder,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{AtomKind, TimeGrid};
    use std::sync::Arc;

    #[test]
    fn no_jumps_gives_zero_sums() {
        let g = Arc::new(TimeGrid::uniform(1.0, 4).unwrap());
        let p = GridPath::constant(g, 0.0);
        let mu = MarkedPointMeasure::empty();
        let r = check_integrability(&[(&p, &mu)], &|_, x| x * x, &|_, x| 2.0 * x, 0.5);
        assert_eq!(r.quadratic, vec![0.0]);
        assert_eq!(r.alpha_power, vec![0.0]);
        assert_eq!(r.taylor_remainder, vec![0.0]);
    }

    #[test]
    fn linear_v_has_no_taylor_remainder() {
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        let g = Arc::new(TimeGrid::with_events(&base, &[0.1, 0.6]).unwrap());
        let p = GridPath::constant(g.clone(), 0.0);
        let mu = MarkedPointMeasure::new(
            &g,
            &[
                (0.1, 3.0, AtomKind::TotallyInaccessible),
                (0.6, -0.5, AtomKind::TotallyInaccessible),
            ],
        )
        .unwrap();
        let r = check_integrability(&[(&p, &mu)], &|_, x| x, &|_, _| 1.0, 1.0);
        assert_eq!(r.taylor_remainder, vec![0.0]);
        // |3| ^ 9 = 3, |-0.5| ^ 0.25 = 0.25
        assert_eq!(r.quadratic, vec![3.25]);
        assert_eq!(r.alpha_power, vec![3.25]);
    }
}
