//! Least squares on a Legendre basis in one regressor.
//!
//! The regressor is mapped affinely onto `[-1, 1]` using the sample range,
//! which keeps the normal equations well conditioned up to moderate degrees.
//! A regressor with no spread (a deterministic state) falls back to the
//! constant fit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::BsdeError;

/// Largest admissible condition number of the normalised Gram matrix.
const MAX_CONDITION: f64 = 1e12;

/// A fitted polynomial `x -> sum c_j P_j(z(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    lo: f64,
    hi: f64,
    coef: Vec<f64>,
}

#[inline]
fn legendre_into(z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = z;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * z * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}

impl PolyFit {
    pub fn constant(c: f64) -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            coef: vec![c],
        }
    }

    pub fn degree(&self) -> usize {
        self.coef.len() - 1
    }

    #[inline]
    fn z(&self, x: f64) -> f64 {
        2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.coef.len() == 1 {
            return self.coef[0];
        }
        let z = self.z(x);
        // Clenshaw would do, but the degree is small
        let (mut p0, mut p1) = (1.0, z);
        let mut acc = self.coef[0] + self.coef[1] * z;
        for n in 1..self.coef.len() - 1 {
            let nf = n as f64;
            let p2 = ((2.0 * nf + 1.0) * z * p1 - nf * p0) / (nf + 1.0);
            acc += self.coef[n + 1] * p2;
            p0 = p1;
            p1 = p2;
        }
        acc
    }
}

/// Design matrix and factorised normal equations for one regressor sample,
/// reusable for several right-hand sides.
pub struct Design {
    lo: f64,
    hi: f64,
    cols: usize,
    basis: Vec<f64>,
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl std::fmt::Debug for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Design")
            .field("range", &(self.lo, self.hi))
            .field("degree", &(self.cols - 1))
            .finish()
    }
}

impl Design {
    /// `time` is only used in error messages.
    pub fn new(xs: &[f64], degree: usize, time: f64) -> Result<Self, BsdeError> {
        let n = xs.len();
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(BsdeError::NonFinite { time });
        }
        let spread = hi - lo;
        let degree = if spread <= 1e-12 * lo.abs().max(1.0) {
            0
        } else {
            degree
        };
        let cols = degree + 1;
        if n < cols {
            return Err(BsdeError::SingularDesign {
                time,
                degree,
                detail: format!("{n} samples for {cols} basis functions"),
            });
        }
        let (lo, hi) = if degree == 0 { (0.0, 1.0) } else { (lo, hi) };
        let mut basis = vec![0.0; n * cols];
        for (row, &x) in basis.chunks_exact_mut(cols).zip(xs) {
            let z = if degree == 0 {
                0.0
            } else {
                2.0 * (x - lo) / (hi - lo) - 1.0
            };
            legendre_into(z, row);
        }
        let mut g = DMatrix::<f64>::zeros(cols, cols);
        for row in basis.chunks_exact(cols) {
            for a in 0..cols {
                for b in a..cols {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..cols {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        // condition check on the unit-diagonal version of the Gram matrix
        let d: Vec<f64> = (0..cols).map(|a| g[(a, a)].sqrt()).collect();
        let normalised = DMatrix::from_fn(cols, cols, |a, b| g[(a, b)] / (d[a] * d[b]));
        let eig = SymmetricEigen::new(normalised).eigenvalues;
        let (emin, emax) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        if !(emin > 0.0 && emax / emin < MAX_CONDITION) {
            return Err(BsdeError::SingularDesign {
                time,
                degree,
                detail: format!(
                    "normal equations are rank deficient (condition {:.3e}); reduce the basis degree",
                    emax / emin.max(f64::MIN_POSITIVE)
                ),
            });
        }
        let gram = g.cholesky().ok_or_else(|| BsdeError::SingularDesign {
            time,
            degree,
            detail: "Cholesky factorisation failed; reduce the basis degree".into(),
        })?;
        Ok(Self {
            lo,
            hi,
            cols,
            basis,
            gram,
        })
    }

    pub fn degree(&self) -> usize {
        self.cols - 1
    }

    /// Least-squares fit of `ys`; returns the fit and the mean squared
    /// residual.
    pub fn fit(&self, ys: &[f64]) -> (PolyFit, f64) {
        let cols = self.cols;
        let mut rhs = DVector::<f64>::zeros(cols);
        for (row, &y) in self.basis.chunks_exact(cols).zip(ys) {
            for a in 0..cols {
                rhs[a] += row[a] * y;
            }
        }
        let c = self.gram.solve(&rhs);
        let coef: Vec<f64> = c.iter().copied().collect();
        let mut sq = Vec::with_capacity(ys.len());
        for (row, &y) in self.basis.chunks_exact(cols).zip(ys) {
            let fitted: f64 = row.iter().zip(&coef).map(|(b, c)| b * c).sum();
            sq.push((y - fitted) * (y - fitted));
        }
        let mse = crate::stats::pairwise_sum(&sq) / ys.len().max(1) as f64;
        (
            PolyFit {
                lo: self.lo,
                hi: self.hi,
                coef,
            },
            mse,
        )
    }

    /// Fitted values at the design points.
    pub fn fitted(&self, fit: &PolyFit) -> Vec<f64> {
        self.basis
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(&fit.coef).map(|(b, c)| b * c).sum())
            .collect()
    }
}
