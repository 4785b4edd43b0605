use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GridPath, MeasureError, TimeGrid};

/// Classification of an atom's time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtomKind {
    TotallyInaccessible,
    Predictable,
}

impl fmt::Display for AtomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AtomKind::TotallyInaccessible => "inaccessible",
            AtomKind::Predictable => "predictable",
        })
    }
}

impl FromStr for AtomKind {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inaccessible" => Ok(AtomKind::TotallyInaccessible),
            "predictable" => Ok(AtomKind::Predictable),
            other => Err(MeasureError::Parse(format!("unknown atom kind `{other}`"))),
        }
    }
}

/// A unit point mass at `(time, mark)`; `node` is the index of `time` in the
/// path's grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub time: f64,
    pub node: usize,
    pub mark: f64,
    pub kind: AtomKind,
}

/// Integer-valued random measure realised on one path: a finite list of
/// atoms with strictly increasing, strictly positive times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkedPointMeasure {
    atoms: Vec<Atom>,
}

impl MarkedPointMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a measure from `(time, mark, kind)` triples, locating each time
    /// on `grid`.
    pub fn new(grid: &TimeGrid, atoms: &[(f64, f64, AtomKind)]) -> Result<Self, MeasureError> {
        let mut out = Vec::with_capacity(atoms.len());
        for &(time, mark, kind) in atoms {
            let node = grid
                .index_of(time)
                .ok_or(MeasureError::NotANode { time })?;
            out.push(Atom {
                time,
                node,
                mark,
                kind,
            });
        }
        Self::from_atoms(out)
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self, MeasureError> {
        for a in &atoms {
            if !(a.time > 0.0) {
                return Err(MeasureError::NonPositiveAtomTime { time: a.time });
            }
            if !a.mark.is_finite() {
                return Err(MeasureError::InvalidKernel(format!(
                    "atom at {} has non-finite mark",
                    a.time
                )));
            }
        }
        if let Some(w) = atoms.windows(2).find(|w| w[1].time <= w[0].time) {
            return Err(MeasureError::DuplicateAtomTime { time: w[1].time });
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atom times: the section of the set `D` on this path.
    pub fn support_times(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.time).collect()
    }

    pub fn atom_at_node(&self, node: usize) -> Option<(usize, &Atom)> {
        self.atoms
            .binary_search_by(|a| a.node.cmp(&node))
            .ok()
            .map(|i| (i, &self.atoms[i]))
    }

    /// Count of atoms with time `<= t`.
    pub fn count_up_to(&self, t: f64) -> usize {
        self.atoms.partition_point(|a| a.time <= t)
    }
}

/// One entry of a simulator's jump log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    pub size: f64,
    pub kind: AtomKind,
}

/// Jump measure `mu^X` of a path: one atom per logged jump, marked by the
/// jump size.
pub fn build_jump_measure(
    path: &GridPath,
    jump_log: &[JumpRecord],
) -> Result<MarkedPointMeasure, MeasureError> {
    let grid = path.grid();
    let mut atoms = Vec::with_capacity(jump_log.len());
    for rec in jump_log {
        let node = grid
            .index_of(rec.time)
            .ok_or(MeasureError::NotANode { time: rec.time })?;
        if rec.size == 0.0 {
            return Err(MeasureError::ZeroJump { time: rec.time });
        }
        let seen = path.jump(node);
        if (seen - rec.size).abs() > 1e-9 * (1.0 + rec.size.abs()) {
            return Err(MeasureError::JumpMismatch {
                time: rec.time,
                logged: rec.size,
                path: seen,
            });
        }
        atoms.push(Atom {
            time: rec.time,
            node,
            mark: rec.size,
            kind: rec.kind,
        });
    }
    MarkedPointMeasure::from_atoms(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn grid() -> Arc<TimeGrid> {
        let base = TimeGrid::uniform(1.0, 10).unwrap();
        Arc::new(TimeGrid::with_events(&base, &[0.35]).unwrap())
    }

    #[test]
    fn constant_path_empty_log() {
        let p = GridPath::constant(grid(), 1.0);
        let m = build_jump_measure(&p, &[]).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn single_jump_gives_single_atom() {
        let g = grid();
        let i = g.index_of(0.3).unwrap();
        let mut vals = vec![0.0; g.len()];
        let mut left = vec![0.0; g.len()];
        for k in i..g.len() {
            vals[k] = 0.5;
            if k > i {
                left[k] = 0.5;
            }
        }
        let p = GridPath::new(g, vals, left).unwrap();
        let m = build_jump_measure(
            &p,
            &[JumpRecord {
                time: 0.3,
                size: 0.5,
                kind: AtomKind::TotallyInaccessible,
            }],
        )
        .unwrap();
        assert_eq!(m.len(), 1);
        let a = m.atoms()[0];
        assert_eq!((a.time, a.mark, a.node), (0.3, 0.5, i));
        assert_eq!(m.count_up_to(0.29), 0);
        assert_eq!(m.count_up_to(0.3), 1);
    }

    #[test]
    fn rejects_off_grid_and_zero_jumps() {
        let p = GridPath::constant(grid(), 0.0);
        let off = JumpRecord {
            time: 0.33,
            size: 1.0,
            kind: AtomKind::Predictable,
        };
        assert!(matches!(
            build_jump_measure(&p, &[off]),
            Err(MeasureError::NotANode { .. })
        ));
        let zero = JumpRecord {
            time: 0.35,
            size: 0.0,
            kind: AtomKind::Predictable,
        };
        assert!(matches!(
            build_jump_measure(&p, &[zero]),
            Err(MeasureError::ZeroJump { .. })
        ));
    }

    #[test]
    fn rejects_two_atoms_at_one_time() {
        let g = grid();
        let r = MarkedPointMeasure::new(
            &g,
            &[
                (0.35, 1.0, AtomKind::TotallyInaccessible),
                (0.35, 2.0, AtomKind::TotallyInaccessible),
            ],
        );
        assert!(matches!(r, Err(MeasureError::DuplicateAtomTime { .. })));
    }
}
