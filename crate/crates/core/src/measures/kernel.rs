use std::fmt;
use std::sync::Arc;

use rand::Rng;

use super::MeasureError;
use crate::quadrature::GaussLegendre;

pub type MarkDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MarkMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Probability law of a mark.
///
/// Discrete laws are sampled by inverse CDF, densities by rejection against
/// `pdf_max` on their window and integrated with the shared 256-point
/// Gauss-Legendre rule. `Image` is the push-forward of another law through a
/// mark transformation.
#[derive(Clone)]
pub enum MarkLaw {
    Dirac(f64),
    Discrete {
        marks: Arc<[f64]>,
        probs: Arc<[f64]>,
    },
    Density {
        pdf: MarkDensity,
        lo: f64,
        hi: f64,
        pdf_max: f64,
    },
    Image {
        base: Arc<MarkLaw>,
        map: MarkMap,
    },
}

impl fmt::Debug for MarkLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarkLaw::Dirac(e) => write!(f, "Dirac({e})"),
            MarkLaw::Discrete { marks, probs } => f
                .debug_struct("Discrete")
                .field("marks", marks)
                .field("probs", probs)
                .finish(),
            MarkLaw::Density { lo, hi, .. } => write!(f, "Density[{lo}, {hi}]"),
            MarkLaw::Image { base, .. } => write!(f, "Image({base:?})"),
        }
    }
}

impl MarkLaw {
    pub fn discrete(marks: Vec<f64>, probs: Vec<f64>) -> Result<Self, MeasureError> {
        if marks.len() != probs.len() || marks.is_empty() {
            return Err(MeasureError::InvalidKernel(
                "discrete law needs as many probabilities as marks".into(),
            ));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(MeasureError::InvalidKernel(
                "probabilities must be non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::InvalidKernel(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(MarkLaw::Discrete {
            marks: marks.into(),
            probs: probs.into(),
        })
    }

    pub fn uniform_discrete(marks: Vec<f64>) -> Result<Self, MeasureError> {
        if marks.is_empty() {
            return Err(MeasureError::InvalidKernel("no marks".into()));
        }
        // n copies of 1/n can miss 1 by an ulp, so skip the sum check
        let probs = vec![1.0 / marks.len() as f64; marks.len()];
        Ok(MarkLaw::Discrete {
            marks: marks.into(),
            probs: probs.into(),
        })
    }

    pub fn density(pdf: MarkDensity, lo: f64, hi: f64, pdf_max: f64) -> Result<Self, MeasureError> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(MeasureError::InvalidKernel(format!(
                "density window [{lo}, {hi}] is empty or unbounded"
            )));
        }
        if !(pdf_max > 0.0 && pdf_max.is_finite()) {
            return Err(MeasureError::InvalidKernel("pdf bound must be positive".into()));
        }
        Ok(MarkLaw::Density {
            pdf,
            lo,
            hi,
            pdf_max,
        })
    }

    /// Uniform law on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, MeasureError> {
        let h = 1.0 / (hi - lo);
        Self::density(Arc::new(move |_| h), lo, hi, h)
    }

    /// Standard normal truncated to `[-8, 8]`.
    pub fn standard_normal() -> Self {
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        MarkLaw::Density {
            pdf: Arc::new(move |x: f64| c * (-0.5 * x * x).exp()),
            lo: -8.0,
            hi: 8.0,
            pdf_max: c,
        }
    }

    pub fn image(self, map: MarkMap) -> Self {
        MarkLaw::Image {
            base: Arc::new(self),
            map,
        }
    }

    /// `E[f(mark)]`. A non-finite result signals divergence.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.expect_dyn(&mut f)
    }

    fn expect_dyn(&self, f: &mut dyn FnMut(f64) -> f64) -> f64 {
        match self {
            MarkLaw::Dirac(e) => f(*e),
            MarkLaw::Discrete { marks, probs } => {
                let mut acc = 0.0;
                for (m, p) in marks.iter().zip(probs.iter()) {
                    if *p > 0.0 {
                        acc += p * f(*m);
                    }
                }
                acc
            }
            MarkLaw::Density { pdf, lo, hi, .. } => {
                let rule = GaussLegendre::density_rule();
                let mut mass = 0.0;
                let mut acc = 0.0;
                for (x, w) in rule.mapped(*lo, *hi) {
                    let d = w * pdf(x);
                    mass += d;
                    if d != 0.0 {
                        acc += d * f(x);
                    }
                }
                acc / mass
            }
            MarkLaw::Image { base, map } => base.expect_dyn(&mut |e| f(map(e))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkLaw::Dirac(e) => *e,
            MarkLaw::Discrete { marks, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (m, p) in marks.iter().zip(probs.iter()) {
                    acc += p;
                    if u < acc {
                        return *m;
                    }
                }
                // u landed in the rounding gap above the last partial sum
                marks
                    .iter()
                    .zip(probs.iter())
                    .rev()
                    .find(|(_, p)| **p > 0.0)
                    .map(|(m, _)| *m)
                    .unwrap_or(marks[marks.len() - 1])
            }
            MarkLaw::Density {
                pdf,
                lo,
                hi,
                pdf_max,
            } => loop {
                let x = lo + (hi - lo) * rng.random::<f64>();
                let u: f64 = rng.random();
                if u * pdf_max <= pdf(x) {
                    return x;
                }
            },
            MarkLaw::Image { base, map } => map(base.sample(rng)),
        }
    }

    /// Points carrying positive probability, when the law is discrete.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            MarkLaw::Dirac(e) => Some(vec![(*e, 1.0)]),
            MarkLaw::Discrete { marks, probs } => Some(
                marks
                    .iter()
                    .zip(probs.iter())
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(m, p)| (*m, *p))
                    .collect(),
            ),
            MarkLaw::Density { .. } => None,
            MarkLaw::Image { base, map } => base
                .atoms()
                .map(|v| v.into_iter().map(|(m, p)| (map(m), p)).collect()),
        }
    }
}

/// A finite measure on marks: `mass` times a probability law.
///
/// Used both for the absolutely continuous part of a compensator (mass is the
/// intensity per unit time) and for predictable atoms (mass is the atom's
/// total mass, at most one).
#[derive(Debug, Clone)]
pub struct MarkKernel {
    mass: f64,
    law: MarkLaw,
}

impl MarkKernel {
    pub fn new(mass: f64, law: MarkLaw) -> Result<Self, MeasureError> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(MeasureError::InvalidKernel(format!(
                "kernel mass must be finite and non-negative, got {mass}"
            )));
        }
        Ok(Self { mass, law })
    }

    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            law: MarkLaw::Dirac(0.0),
        }
    }

    pub fn dirac(mass: f64, mark: f64) -> Self {
        Self {
            mass,
            law: MarkLaw::Dirac(mark),
        }
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn law(&self) -> &MarkLaw {
        &self.law
    }

    /// `int f dkernel`.
    pub fn integrate(&self, f: impl FnMut(f64) -> f64) -> f64 {
        if self.mass == 0.0 {
            return 0.0;
        }
        self.mass * self.law.expect(f)
    }

    pub fn map_marks(self, map: MarkMap) -> Self {
        Self {
            mass: self.mass,
            law: self.law.image(map),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_rejects_bad_probabilities() {
        assert!(MarkLaw::discrete(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(MarkLaw::discrete(vec![1.0], vec![0.5, 0.5]).is_err());
        assert!(MarkLaw::discrete(vec![1.0, 2.0], vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn discrete_expectation() {
        let law = MarkLaw::discrete(vec![1.0, 3.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(law.expect(|e| e), 2.5);
        let k = MarkKernel::new(2.0, law).unwrap();
        assert_eq!(k.integrate(|e| e * e), 2.0 * (0.25 + 0.75 * 9.0));
    }

    #[test]
    fn uniform_density_moments() {
        let law = MarkLaw::uniform(-1.0, 3.0).unwrap();
        assert!((law.expect(|e| e) - 1.0).abs() < 1e-13);
        assert!((law.expect(|e| e * e) - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn image_law_pushes_forward() {
        let law = MarkLaw::uniform(0.0, 1.0).unwrap().image(Arc::new(|e| 2.0 * e));
        assert!((law.expect(|x| x) - 1.0).abs() < 1e-13);
        let d = MarkLaw::Dirac(0.5).image(Arc::new(|e| e - 1.0));
        assert_eq!(d.atoms().unwrap(), vec![(-0.5, 1.0)]);
    }

    #[test]
    fn density_sampling_mean() {
        let law = MarkLaw::standard_normal();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let s: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        let m = crate::stats::MeanSe::of(&s);
        assert!(m.within(0.0, 4.0), "{m:?}");
        assert!((m.variance() - 1.0).abs() < 0.05);
    }

    #[test]
    fn discrete_sampling_frequencies() {
        let law = MarkLaw::discrete(vec![-1.0, 2.0], vec![0.3, 0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let hits = (0..n).filter(|_| law.sample(&mut rng) == 2.0).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.7).abs() < 4.0 * (0.21f64 / n as f64).sqrt());
    }

    #[test]
    fn zero_kernel_integrates_to_zero_even_for_divergent_integrand() {
        assert_eq!(MarkKernel::zero().integrate(|_| f64::INFINITY), 0.0);
    }
}
