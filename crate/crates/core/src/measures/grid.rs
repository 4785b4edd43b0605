use std::sync::Arc;

use super::MeasureError;

/// Discretisation of `[0, T]`.
///
/// A grid is built from a uniform base grid plus event times inserted by a
/// simulator (jump times, boundary hits). The positions of the base nodes are
/// kept so that ensemble-level code can line paths up on the common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    extra_nodes: Vec<f64>,
    base: Vec<usize>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self, MeasureError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MeasureError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(MeasureError::InvalidGrid("need at least one step".into()));
        }
        let nodes: Vec<f64> = (0..=steps)
            .map(|k| {
                if k == steps {
                    horizon
                } else {
                    horizon * k as f64 / steps as f64
                }
            })
            .collect();
        let base = (0..=steps).collect();
        Ok(Self {
            horizon,
            nodes,
            extra_nodes: Vec::new(),
            base,
        })
    }

    /// Base grid with event times merged in. Event times must lie in `(0, T]`;
    /// an event equal to an existing node is not duplicated.
    pub fn with_events(base: &TimeGrid, events: &[f64]) -> Result<Self, MeasureError> {
        let mut sorted: Vec<f64> = events.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        for &t in &sorted {
            if !(t > 0.0 && t <= base.horizon) {
                return Err(MeasureError::InvalidGrid(format!(
                    "event time {t} outside (0, {}]",
                    base.horizon
                )));
            }
        }
        let mut nodes = Vec::with_capacity(base.nodes.len() + sorted.len());
        let mut base_pos = Vec::with_capacity(base.base.len());
        let mut extra = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < base.nodes.len() || j < sorted.len() {
            let take_base = j >= sorted.len()
                || (i < base.nodes.len() && base.nodes[i] <= sorted[j]);
            if take_base {
                if j < sorted.len() && base.nodes[i] == sorted[j] {
                    j += 1;
                }
                base_pos.push(nodes.len());
                nodes.push(base.nodes[i]);
                i += 1;
            } else {
                extra.push(sorted[j]);
                nodes.push(sorted[j]);
                j += 1;
            }
        }
        Ok(Self {
            horizon: base.horizon,
            nodes,
            extra_nodes: extra,
            base: base_pos,
        })
    }

    /// Arbitrary node set; every node is treated as a base node.
    pub fn from_nodes(horizon: f64, nodes: Vec<f64>) -> Result<Self, MeasureError> {
        if nodes.first() != Some(&0.0) || nodes.last() != Some(&horizon) {
            return Err(MeasureError::InvalidGrid(
                "nodes must start at 0 and end at the horizon".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MeasureError::InvalidGrid(
                "nodes must be strictly increasing".into(),
            ));
        }
        let base = (0..nodes.len()).collect();
        Ok(Self {
            horizon,
            nodes,
            extra_nodes: Vec::new(),
            base,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn extra_nodes(&self) -> &[f64] {
        &self.extra_nodes
    }

    /// Positions of the base nodes within [`Self::nodes`].
    pub fn base_positions(&self) -> &[usize] {
        &self.base
    }

    /// Exact node lookup.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes
            .binary_search_by(|probe| probe.total_cmp(&t))
            .ok()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i]
    }
}

/// Values of a cadlag process on the nodes of a [`TimeGrid`].
///
/// `left_limits[i]` is the state just before any jump at node `i`; it equals
/// `values[i]` at nodes where the path does not jump.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: Arc<TimeGrid>,
    values: Vec<f64>,
    left_limits: Vec<f64>,
}

impl GridPath {
    pub fn new(
        grid: Arc<TimeGrid>,
        values: Vec<f64>,
        left_limits: Vec<f64>,
    ) -> Result<Self, MeasureError> {
        if values.len() != grid.len() || left_limits.len() != grid.len() {
            return Err(MeasureError::LengthMismatch {
                expected: grid.len(),
                got: values.len().max(left_limits.len()),
            });
        }
        if !values.is_empty() && left_limits[0] != values[0] {
            return Err(MeasureError::InvalidGrid(
                "left limit at 0 must equal the initial value".into(),
            ));
        }
        Ok(Self {
            grid,
            values,
            left_limits,
        })
    }

    /// Path without jumps at any node.
    pub fn continuous(grid: Arc<TimeGrid>, values: Vec<f64>) -> Result<Self, MeasureError> {
        let left = values.clone();
        Self::new(grid, values, left)
    }

    pub fn constant(grid: Arc<TimeGrid>, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
            left_limits: vec![value; n],
        }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_limits(&self) -> &[f64] {
        &self.left_limits
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn left_limit(&self, i: usize) -> f64 {
        self.left_limits[i]
    }

    pub fn jump(&self, i: usize) -> f64 {
        self.values[i] - self.left_limits[i]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("grid is never empty")
    }

    /// Values at the base nodes of the grid.
    pub fn base_values(&self) -> Vec<f64> {
        self.grid
            .base_positions()
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }

    /// Largest absolute nodewise difference, left limits included.
    pub fn max_abs_diff(&self, other: &GridPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .chain(self.left_limits.iter().zip(&other.left_limits))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints_are_exact() {
        let g = TimeGrid::uniform(1.5, 7).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), 1.5);
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn events_are_merged_and_base_positions_tracked() {
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        let g = TimeGrid::with_events(&base, &[0.3, 0.5, 0.9]).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.3, 0.5, 0.75, 0.9, 1.0]);
        assert_eq!(g.base_positions(), &[0, 1, 3, 4, 6]);
        assert_eq!(g.extra_nodes(), &[0.3, 0.9]);
        assert_eq!(g.index_of(0.9), Some(5));
        assert_eq!(g.index_of(0.91), None);
    }

    #[test]
    fn rejects_event_at_zero() {
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(TimeGrid::with_events(&base, &[0.0]).is_err());
        assert!(TimeGrid::with_events(&base, &[1.2]).is_err());
    }

    #[test]
    fn path_left_limit_at_zero() {
        let g = Arc::new(TimeGrid::uniform(1.0, 2).unwrap());
        assert!(GridPath::new(g.clone(), vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 2.0]).is_err());
        let p = GridPath::new(g, vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(p.jump(1), 0.5);
        assert_eq!(p.jump(2), 0.0);
    }
}
