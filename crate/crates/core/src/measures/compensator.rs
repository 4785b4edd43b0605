use std::fmt;
use std::sync::Arc;

use super::{GridPath, MarkKernel, MeasureError};

/// Atom-mass tolerance for membership in `K`.
pub const K_TOLERANCE: f64 = 1e-12;

/// Absolutely continuous part of a compensator: `(t, state) -> ` intensity
/// measure on marks per unit time.
pub type AcDensity = Arc<dyn Fn(f64, f64) -> MarkKernel + Send + Sync>;

/// Atom of the compensator at a predictable time, with kernel `nu({t}, de)`.
#[derive(Debug, Clone)]
pub struct PredictableAtom {
    pub time: f64,
    pub node: usize,
    pub kernel: MarkKernel,
}

impl PredictableAtom {
    pub fn mass(&self) -> f64 {
        self.kernel.mass()
    }

    pub fn in_k(&self) -> bool {
        (self.kernel.mass() - 1.0).abs() <= K_TOLERANCE
    }

    pub fn in_j(&self) -> bool {
        self.kernel.mass() > 0.0
    }
}

/// Compensator realised along one path: `nu(ds de) = dA_s phi_s(de)` held as
/// an absolutely continuous density evaluated at the left endpoint of each
/// grid interval, plus predictable atoms at grid nodes.
#[derive(Clone)]
pub struct CompensatorSpec {
    ac: Option<AcDensity>,
    atoms: Vec<PredictableAtom>,
    clock: GridPath,
}

impl fmt::Debug for CompensatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompensatorSpec")
            .field("has_ac", &self.ac.is_some())
            .field("atoms", &self.atoms)
            .field("clock_T", &self.clock.terminal())
            .finish()
    }
}

impl CompensatorSpec {
    /// Realises the compensator along `path`. Atom kernels must have mass in
    /// `[0, 1]` and sit on distinct grid nodes.
    pub fn realize(
        path: &GridPath,
        ac: Option<AcDensity>,
        atoms: Vec<(f64, MarkKernel)>,
    ) -> Result<Self, MeasureError> {
        let grid = path.grid().clone();
        let mut pred = Vec::with_capacity(atoms.len());
        for (time, kernel) in atoms {
            let node = grid.index_of(time).ok_or(MeasureError::NotANode { time })?;
            if node == 0 {
                return Err(MeasureError::NonPositiveAtomTime { time });
            }
            if kernel.mass() > 1.0 + K_TOLERANCE {
                return Err(MeasureError::AtomMassAboveOne {
                    time,
                    mass: kernel.mass(),
                });
            }
            pred.push(PredictableAtom { time, node, kernel });
        }
        if let Some(w) = pred.windows(2).find(|w| w[1].node <= w[0].node) {
            return Err(MeasureError::DuplicateAtomTime { time: w[1].time });
        }

        let n = grid.len();
        let mut values = vec![0.0; n];
        let mut left = vec![0.0; n];
        let mut next_atom = 0;
        for i in 1..n {
            let dt = grid.time(i) - grid.time(i - 1);
            let rate = match &ac {
                Some(d) => d(grid.time(i - 1), path.value(i - 1)).mass(),
                None => 0.0,
            };
            left[i] = values[i - 1] + rate * dt;
            values[i] = left[i];
            if next_atom < pred.len() && pred[next_atom].node == i {
                values[i] += pred[next_atom].mass();
                next_atom += 1;
            }
        }
        let clock = GridPath::new(grid, values, left)?;
        Ok(Self {
            ac,
            atoms: pred,
            clock,
        })
    }

    /// Compensator identically zero along `path`.
    pub fn zero(path: &GridPath) -> Self {
        Self {
            ac: None,
            atoms: Vec::new(),
            clock: GridPath::constant(path.grid().clone(), 0.0),
        }
    }

    /// Intensity kernel at `(t, state)`; zero if there is no continuous part.
    pub fn ac_at(&self, t: f64, x: f64) -> MarkKernel {
        match &self.ac {
            Some(d) => d(t, x),
            None => MarkKernel::zero(),
        }
    }

    pub fn ac_density(&self) -> Option<&AcDensity> {
        self.ac.as_ref()
    }

    pub fn has_ac(&self) -> bool {
        self.ac.is_some()
    }

    pub fn atoms(&self) -> &[PredictableAtom] {
        &self.atoms
    }

    pub fn atom_at_node(&self, node: usize) -> Option<&PredictableAtom> {
        self.atoms
            .binary_search_by(|a| a.node.cmp(&node))
            .ok()
            .map(|i| &self.atoms[i])
    }

    /// The clock `A` with `A_0 = 0`; its jumps are the atom masses.
    pub fn clock(&self) -> &GridPath {
        &self.clock
    }
}

/// Atom times of the compensator split into `J` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Supports {
    pub j_atoms: Vec<f64>,
    pub k_atoms: Vec<f64>,
}

impl Supports {
    /// `J = K` on this path.
    pub fn j_equals_k(&self) -> bool {
        self.j_atoms == self.k_atoms
    }
}

/// `J` = atom times with positive mass, `K` = atom times with mass one.
pub fn classify_supports(nu: &CompensatorSpec) -> Supports {
    let j_atoms = nu
        .atoms()
        .iter()
        .filter(|a| a.in_j())
        .map(|a| a.time)
        .collect();
    let k_atoms = nu
        .atoms()
        .iter()
        .filter(|a| a.in_k())
        .map(|a| a.time)
        .collect();
    Supports { j_atoms, k_atoms }
}

/// `J = K` on every sampled path.
pub fn complies_with_j_equals_k<'a>(nus: impl IntoIterator<Item = &'a CompensatorSpec>) -> bool {
    nus.into_iter().all(|nu| classify_supports(nu).j_equals_k())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MarkLaw, TimeGrid};

    fn path() -> GridPath {
        let g = Arc::new(TimeGrid::uniform(1.0, 4).unwrap());
        GridPath::constant(g, 0.5)
    }

    #[test]
    fn quasi_left_continuous_has_empty_supports() {
        let p = path();
        let ac: AcDensity = Arc::new(|_, _| MarkKernel::dirac(2.0, 1.0));
        let nu = CompensatorSpec::realize(&p, Some(ac), vec![]).unwrap();
        let s = classify_supports(&nu);
        assert!(s.j_atoms.is_empty() && s.k_atoms.is_empty());
        assert!(s.j_equals_k());
        assert_eq!(nu.clock().terminal(), 2.0);
    }

    #[test]
    fn half_mass_atom_is_in_j_not_k() {
        let p = path();
        let nu =
            CompensatorSpec::realize(&p, None, vec![(0.5, MarkKernel::dirac(0.5, 1.0))]).unwrap();
        let s = classify_supports(&nu);
        assert_eq!(s.j_atoms, vec![0.5]);
        assert!(s.k_atoms.is_empty());
        assert!(!complies_with_j_equals_k([&nu]));
    }

    #[test]
    fn unit_mass_atom_is_in_k_and_jumps_the_clock() {
        let p = path();
        let law = MarkLaw::discrete(vec![-0.1, 0.2], vec![0.5, 0.5]).unwrap();
        let nu = CompensatorSpec::realize(&p, None, vec![(0.75, MarkKernel::new(1.0, law).unwrap())])
            .unwrap();
        let s = classify_supports(&nu);
        assert_eq!(s.k_atoms, vec![0.75]);
        assert!(s.j_equals_k());
        assert_eq!(nu.clock().jump(3), 1.0);
        assert_eq!(nu.clock().value(2), 0.0);
    }

    #[test]
    fn rejects_overweight_atom() {
        let p = path();
        let r = CompensatorSpec::realize(&p, None, vec![(0.5, MarkKernel::dirac(1.5, 1.0))]);
        assert!(matches!(r, Err(MeasureError::AtomMassAboveOne { .. })));
    }
}
