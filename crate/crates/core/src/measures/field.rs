use std::fmt;
use std::sync::Arc;

use super::{Atom, MeasureError};

pub type FieldFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A predictable random field `W(s, X_{s-}, e)`.
///
/// The state argument is always the pre-jump state; the optional support hint
/// zeroes the field outside a mark window.
#[derive(Clone)]
pub struct PredictableField {
    f: FieldFn,
    support_hint: Option<(f64, f64)>,
}

impl fmt::Debug for PredictableField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredictableField")
            .field("support_hint", &self.support_hint)
            .finish_non_exhaustive()
    }
}

const PROBE_TIMES: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 10.0];
const PROBE_STATES: [f64; 7] = [-2.0, -1.0, 0.0, 0.25, 0.5, 1.0, 3.0];

impl PredictableField {
    pub fn new(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            support_hint: None,
        }
    }

    pub fn from_arc(f: FieldFn) -> Self {
        Self {
            f,
            support_hint: None,
        }
    }

    /// A jump transform `phi(s, x)` (independent of the state argument) that
    /// must vanish at `x = 0`; checked on a probe set.
    pub fn jump_transform(
        phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, MeasureError> {
        for &t in &PROBE_TIMES {
            let v = phi(t, 0.0);
            if v != 0.0 {
                return Err(MeasureError::NotAJumpTransform { time: t, value: v });
            }
        }
        Ok(Self::new(move |t, _x, e| phi(t, e)))
    }

    /// Re-checks `W(t, x, 0) = 0` on the probe set.
    pub fn check_vanishes_at_zero_mark(&self) -> Result<(), MeasureError> {
        for &t in &PROBE_TIMES {
            for &x in &PROBE_STATES {
                let v = self.eval(t, x, 0.0);
                if v != 0.0 {
                    return Err(MeasureError::NotAJumpTransform { time: t, value: v });
                }
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _, _| c)
    }

    pub fn with_support_hint(mut self, lo: f64, hi: f64) -> Self {
        self.support_hint = Some((lo, hi));
        self
    }

    pub fn support_hint(&self) -> Option<(f64, f64)> {
        self.support_hint
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, e: f64) -> f64 {
        match self.support_hint {
            Some((lo, hi)) if e < lo || e > hi => 0.0,
            _ => (self.f)(t, x, e),
        }
    }

    pub fn raw(&self) -> &FieldFn {
        &self.f
    }
}

/// Something that can be integrated against `mu - nu`: values on the
/// compensator side and values at the realised atoms.
pub trait Integrand {
    fn compensator_value(&self, t: f64, x_minus: f64, e: f64) -> f64;
    fn atom_value(&self, index: usize, atom: &Atom, x_minus: f64) -> f64;
}

impl Integrand for PredictableField {
    #[inline]
    fn compensator_value(&self, t: f64, x_minus: f64, e: f64) -> f64 {
        self.eval(t, x_minus, e)
    }

    #[inline]
    fn atom_value(&self, _index: usize, atom: &Atom, x_minus: f64) -> f64 {
        self.eval(atom.time, x_minus, atom.mark)
    }
}

/// A field whose values at the realised atoms are stored per atom (index
/// aligned with the measure), with a predictable surrogate on the compensator
/// side. If the stored values disagree with the surrogate the integral is no
/// longer a martingale; that is exactly what the positive controls exploit.
#[derive(Debug, Clone, Copy)]
pub struct SampledField<'a> {
    pub atom_values: &'a [f64],
    pub field: &'a PredictableField,
}

impl Integrand for SampledField<'_> {
    #[inline]
    fn compensator_value(&self, t: f64, x_minus: f64, e: f64) -> f64 {
        self.field.eval(t, x_minus, e)
    }

    #[inline]
    fn atom_value(&self, index: usize, _atom: &Atom, _x_minus: f64) -> f64 {
        self.atom_values[index]
    }
}
