use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{
    ensemble::path_rng, FlowOutcome, FlowSolver, JumpKernelFn, ScalarFn, SimulatedScenario,
    SimulationError,
};
use crate::measures::{
    build_jump_measure, AcDensity, AtomKind, CompensatorSpec, GridPath, JumpRecord, MarkKernel,
    MarkLaw, TimeGrid,
};

const STATE_TOLERANCE: f64 = 1e-12;
const PROBES: usize = 64;

/// PDMP on `[0, 1]` with local characteristics `(h, lambda, Q)`.
///
/// `q(y)` is the law of the jump size out of state `y` (so `y + size` is the
/// post-jump state). `lambda` is only used on the open interval; on the
/// boundary the rate is zero and the jump is forced.
#[derive(Clone)]
pub struct PdmpModel {
    pub h: ScalarFn,
    pub lambda: ScalarFn,
    pub lambda_max: f64,
    pub q: JumpKernelFn,
    pub x0: f64,
    pub max_jumps: usize,
    pub flow: FlowSolver,
}

#[inline]
fn inside(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl PdmpModel {
    pub fn new(
        h: ScalarFn,
        lambda: ScalarFn,
        lambda_max: f64,
        q: JumpKernelFn,
        x0: f64,
    ) -> Result<Self, SimulationError> {
        let m = Self {
            h,
            lambda,
            lambda_max,
            q,
            x0,
            max_jumps: 10_000,
            flow: FlowSolver::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_max_jumps(mut self, max_jumps: usize) -> Self {
        self.max_jumps = max_jumps;
        self
    }

    pub fn with_flow(mut self, flow: FlowSolver) -> Self {
        self.flow = flow;
        self
    }

    /// Jump rate with the zero extension to the boundary.
    #[inline]
    pub fn rate(&self, x: f64) -> f64 {
        if inside(x) {
            (self.lambda)(x)
        } else {
            0.0
        }
    }

    pub fn kernel(&self, y: f64) -> MarkLaw {
        (self.q)(y)
    }

    /// Probe-based check of the model invariants.
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidModel(msg));
        if !(0.0..=1.0).contains(&self.x0) {
            return bad(format!("x0 = {} is outside [0, 1]", self.x0));
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return bad(format!("lambda_max = {} must be finite", self.lambda_max));
        }
        if self.x0 == 0.0 && (self.h)(0.0) <= 0.0 || self.x0 == 1.0 && (self.h)(1.0) >= 0.0 {
            return bad("x0 on the boundary needs h pointing inwards".into());
        }
        let probes = (0..=PROBES).map(|k| k as f64 / PROBES as f64);
        for y in probes {
            if inside(y) {
                let l = (self.lambda)(y);
                if !(l >= 0.0 && l <= self.lambda_max) {
                    return bad(format!(
                        "lambda({y}) = {l} is outside [0, lambda_max = {}]",
                        self.lambda_max
                    ));
                }
                if !(self.h)(y).is_finite() {
                    return bad(format!("h({y}) is not finite"));
                }
            }
            let law = (self.q)(y);
            let keeps_inside = |size: f64| {
                let post = y + size;
                (-STATE_TOLERANCE..=1.0 + STATE_TOLERANCE).contains(&post)
            };
            let ok = match (&law, law.atoms()) {
                (_, Some(atoms)) => atoms.iter().all(|(s, _)| keeps_inside(*s)),
                (MarkLaw::Density { lo, hi, .. }, None) => keeps_inside(*lo) && keeps_inside(*hi),
                _ => true,
            };
            if !ok {
                return bad(format!("Q({y}, .) can move the state outside [0, 1]"));
            }
        }
        if self.max_jumps == 0 {
            return bad("max_jumps must be positive".into());
        }
        Ok(())
    }
}

/// Simulates one path with RNG substream `path_index` of `seed`.
pub fn simulate_pdmp(
    model: &PdmpModel,
    base: &TimeGrid,
    seed: u64,
    path_index: u64,
) -> Result<SimulatedScenario, SimulationError> {
    model.validate()?;
    let mut rng = path_rng(seed, path_index);
    let mut sc = simulate_with(model, base, &mut rng)?;
    sc.seed = seed;
    sc.path_index = path_index;
    Ok(sc)
}

struct Builder {
    nodes: Vec<f64>,
    left: Vec<f64>,
    values: Vec<f64>,
    events: Vec<f64>,
}

impl Builder {
    /// Appends a node; a node at the time of the previous one (an event
    /// landing on a base node) is merged into it.
    fn push(&mut self, t: f64, pre: f64, post: f64, event: bool) {
        if self.nodes.last() == Some(&t) {
            *self.values.last_mut().unwrap() = post;
        } else {
            self.nodes.push(t);
            self.left.push(pre);
            self.values.push(post);
        }
        if event {
            self.events.push(t);
        }
    }
}

fn post_state(t: f64, pre: f64, size: f64) -> Result<f64, SimulationError> {
    let post = pre + size;
    if !(-STATE_TOLERANCE..=1.0 + STATE_TOLERANCE).contains(&post) {
        return Err(SimulationError::InvalidModel(format!(
            "Q({pre}, .) produced post-jump state {post} at t = {t}"
        )));
    }
    Ok(post.clamp(0.0, 1.0))
}

pub(super) fn simulate_with<R: Rng + ?Sized>(
    model: &PdmpModel,
    base: &TimeGrid,
    rng: &mut R,
) -> Result<SimulatedScenario, SimulationError> {
    let base_nodes = base.nodes();
    let mut b = Builder {
        nodes: vec![0.0],
        left: vec![model.x0],
        values: vec![model.x0],
        events: Vec::new(),
    };
    let mut log = Vec::new();
    let mut hits = Vec::new();
    let exp = (model.lambda_max > 0.0)
        .then(|| Exp::new(model.lambda_max).expect("positive finite rate"));
    let next_candidate = |t: f64, rng: &mut R| match &exp {
        Some(e) => t + e.sample(rng),
        None => f64::INFINITY,
    };

    let (mut t, mut x) = (0.0, model.x0);
    let mut candidate = next_candidate(0.0, rng);
    let mut k = 1;
    let mut n_events = 0usize;
    while k < base_nodes.len() {
        let base_t = base_nodes[k];
        let target = base_t.min(candidate);
        match model.flow.advance(&*model.h, x, target - t) {
            FlowOutcome::Hit { after, boundary } => {
                let th = (t + after).min(target);
                if b.events.last() == Some(&th) {
                    return Err(SimulationError::InvalidModel(format!(
                        "state stuck on the boundary at t = {th}"
                    )));
                }
                let size = model.kernel(boundary).sample(rng);
                let post = post_state(th, boundary, size)?;
                b.push(th, boundary, post, true);
                if th == base_t {
                    k += 1;
                }
                hits.push(th);
                if post != boundary {
                    log.push(JumpRecord {
                        time: th,
                        size: post - boundary,
                        kind: AtomKind::Predictable,
                    });
                }
                t = th;
                x = post;
                n_events += 1;
            }
            FlowOutcome::Reached(xe) => {
                t = target;
                x = xe;
                if candidate < base_t {
                    let u: f64 = rng.random();
                    if u * model.lambda_max < model.rate(x) {
                        let size = model.kernel(x).sample(rng);
                        let post = post_state(t, x, size)?;
                        if post != x {
                            b.push(t, x, post, true);
                            log.push(JumpRecord {
                                time: t,
                                size: post - x,
                                kind: AtomKind::TotallyInaccessible,
                            });
                            x = post;
                        }
                        n_events += 1;
                    }
                    candidate = next_candidate(t, rng);
                } else {
                    b.push(t, x, x, false);
                    k += 1;
                }
            }
            FlowOutcome::Escaped { after, state } => {
                return Err(SimulationError::FlowEscaped {
                    time: t + after,
                    state,
                });
            }
        }
        if n_events > model.max_jumps {
            return Err(SimulationError::TooManyJumps {
                max: model.max_jumps,
            });
        }
    }

    let grid = Arc::new(TimeGrid::with_events(base, &b.events)?);
    debug_assert_eq!(grid.nodes(), &b.nodes[..]);
    if grid.len() != b.nodes.len() {
        return Err(SimulationError::InvalidModel(
            "event times collide with grid nodes".into(),
        ));
    }
    let path = GridPath::new(grid.clone(), b.values, b.left)?;
    let p_star = counter(&grid, &hits)?;
    let compensator = realize_compensator(model, &path, &hits)?;
    let measure = build_jump_measure(&path, &log)?;
    Ok(SimulatedScenario {
        path,
        measure,
        compensator,
        p_star: Some(p_star),
        brownian: None,
        jump_log: log,
        seed: 0,
        path_index: 0,
    })
}

/// `p*_t`, the number of boundary hits up to `t`.
fn counter(grid: &Arc<TimeGrid>, hits: &[f64]) -> Result<GridPath, SimulationError> {
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut left = vec![0.0; n];
    let mut next = 0;
    for i in 1..n {
        left[i] = values[i - 1];
        values[i] = left[i];
        while next < hits.len() && hits[next] == grid.time(i) {
            values[i] += 1.0;
            next += 1;
        }
    }
    Ok(GridPath::new(grid.clone(), values, left)?)
}

fn ac_density(model: &PdmpModel) -> AcDensity {
    let lambda = model.lambda.clone();
    let q = model.q.clone();
    Arc::new(move |_t, x| {
        if !inside(x) {
            return MarkKernel::zero();
        }
        let rate = lambda(x);
        if rate > 0.0 {
            MarkKernel::new(rate, q(x)).unwrap_or_else(|_| MarkKernel::zero())
        } else {
            MarkKernel::zero()
        }
    })
}

fn realize_compensator(
    model: &PdmpModel,
    path: &GridPath,
    hits: &[f64],
) -> Result<CompensatorSpec, SimulationError> {
    let mut atoms = Vec::with_capacity(hits.len());
    for &t in hits {
        let node = path
            .grid()
            .index_of(t)
            .ok_or(SimulationError::ModelMismatch(format!("hit at {t} is not a node")))?;
        let b = path.left_limit(node);
        atoms.push((t, MarkKernel::new(1.0, model.kernel(b))?));
    }
    let ac = (model.lambda_max > 0.0).then(|| ac_density(model));
    Ok(CompensatorSpec::realize(path, ac, atoms)?)
}

/// `nu^X(ds dx) = (lambda(X_{s-}) ds + dp*_s) Q(X_{s-}, dx)` along the
/// scenario's path.
pub fn pdmp_compensator(
    model: &PdmpModel,
    scenario: &SimulatedScenario,
) -> Result<CompensatorSpec, SimulationError> {
    let mismatch = |msg: String| Err(SimulationError::ModelMismatch(msg));
    let Some(p_star) = &scenario.p_star else {
        return mismatch("scenario has no boundary counter (not a PDMP path)".into());
    };
    let path = &scenario.path;
    if p_star.grid() != path.grid() {
        return mismatch("boundary counter lives on another grid".into());
    }
    if path.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return mismatch("path leaves [0, 1]".into());
    }
    let grid = path.grid();
    let mut hits = Vec::new();
    for i in 1..grid.len() {
        let dp = p_star.jump(i);
        if dp == 0.0 {
            continue;
        }
        if dp != 1.0 {
            return mismatch(format!("{dp} boundary hits at one time"));
        }
        let b = path.left_limit(i);
        if b != 0.0 && b != 1.0 {
            return mismatch(format!("boundary hit at t = {} from state {b}", grid.time(i)));
        }
        hits.push(grid.time(i));
    }
    for a in scenario.measure.atoms() {
        let pre = path.left_limit(a.node);
        match a.kind {
            AtomKind::Predictable => {
                if hits.binary_search_by(|h| h.total_cmp(&a.time)).is_err() {
                    return mismatch(format!("predictable jump at t = {} is not a hit", a.time));
                }
            }
            AtomKind::TotallyInaccessible => {
                if !(model.rate(pre) > 0.0) {
                    return mismatch(format!(
                        "jump at t = {} from a state with zero rate",
                        a.time
                    ));
                }
            }
        }
    }
    realize_compensator(model, path, &hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::classify_supports;

    fn constant(c: f64) -> ScalarFn {
        Arc::new(move |_| c)
    }

    fn deterministic_hit(q: f64) -> PdmpModel {
        PdmpModel::new(
            constant(1.0),
            constant(0.0),
            0.0,
            Arc::new(move |y| MarkLaw::Dirac(if y == 1.0 { q - 1.0 } else { 0.0 })),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn frozen_pdmp_is_constant() {
        let m = PdmpModel::new(
            constant(0.0),
            constant(0.0),
            0.0,
            Arc::new(|_| MarkLaw::Dirac(0.0)),
            0.5,
        )
        .unwrap();
        let base = TimeGrid::uniform(1.0, 10).unwrap();
        let sc = simulate_pdmp(&m, &base, 1, 0).unwrap();
        assert!(sc.path.values().iter().all(|v| *v == 0.5));
        assert!(sc.measure.is_empty());
        assert_eq!(sc.p_star.unwrap().terminal(), 0.0);
        assert!(sc.compensator.atoms().is_empty());
        assert_eq!(sc.compensator.clock().terminal(), 0.0);
    }

    #[test]
    fn unit_drift_hits_once_at_one() {
        let m = deterministic_hit(0.25);
        let base = TimeGrid::uniform(1.5, 30).unwrap();
        let sc = simulate_pdmp(&m, &base, 7, 0).unwrap();
        assert_eq!(sc.measure.len(), 1);
        let a = sc.measure.atoms()[0];
        assert!((a.time - 1.0).abs() <= 1e-12);
        assert_eq!(a.kind, AtomKind::Predictable);
        assert_eq!(sc.compensator.atoms().len(), 1);
        assert_eq!(sc.compensator.atoms()[0].mass(), 1.0);
        let s = classify_supports(&sc.compensator);
        assert!(s.j_equals_k());
        assert_eq!(s.k_atoms, vec![a.time]);
        let p = sc.p_star.as_ref().unwrap();
        assert_eq!(p.terminal(), 1.0);
        assert!((sc.path.terminal() - 0.75).abs() < 1e-9);
        let again = pdmp_compensator(&m, &sc).unwrap();
        assert_eq!(again.clock(), sc.compensator.clock());
    }

    #[test]
    fn rejects_bad_models() {
        let q: JumpKernelFn = Arc::new(|_| MarkLaw::Dirac(0.5));
        assert!(PdmpModel::new(constant(0.0), constant(1.0), 1.0, q, 0.5).is_err());
        let q: JumpKernelFn = Arc::new(|_| MarkLaw::Dirac(0.0));
        assert!(PdmpModel::new(constant(0.0), constant(2.0), 1.0, q.clone(), 0.5).is_err());
        assert!(PdmpModel::new(constant(0.0), constant(0.0), 0.0, q.clone(), 1.5).is_err());
        assert!(PdmpModel::new(constant(-1.0), constant(0.0), 0.0, q, 0.0).is_err());
    }

    #[test]
    fn mismatched_scenario_is_rejected() {
        let det = deterministic_hit(0.25);
        let base = TimeGrid::uniform(1.5, 30).unwrap();
        let sc = simulate_pdmp(&det, &base, 7, 0).unwrap();
        let mut no_counter = sc.clone();
        no_counter.p_star = None;
        assert!(pdmp_compensator(&det, &no_counter).is_err());

        let jumpy = PdmpModel::new(
            constant(0.0),
            constant(5.0),
            5.0,
            Arc::new(|y| MarkLaw::Dirac(0.5 - y)),
            0.2,
        )
        .unwrap();
        let sc = simulate_pdmp(&jumpy, &TimeGrid::uniform(1.0, 10).unwrap(), 3, 0).unwrap();
        assert!(!sc.measure.is_empty());
        let frozen = PdmpModel::new(
            constant(0.0),
            constant(0.0),
            0.0,
            Arc::new(|_| MarkLaw::Dirac(0.0)),
            0.2,
        )
        .unwrap();
        assert!(pdmp_compensator(&frozen, &sc).is_err());
    }

    #[test]
    fn seed_determinism() {
        let m = PdmpModel::new(
            constant(0.7),
            Arc::new(|x| 2.0 * x),
            2.0,
            Arc::new(|y| MarkLaw::uniform_discrete(vec![0.2 - y, 0.6 - y]).unwrap()),
            0.1,
        )
        .unwrap();
        let base = TimeGrid::uniform(2.0, 20).unwrap();
        let a = simulate_pdmp(&m, &base, 11, 4).unwrap();
        let b = simulate_pdmp(&m, &base, 11, 4).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(a.measure, b.measure);
        let c = simulate_pdmp(&m, &base, 11, 5).unwrap();
        assert_ne!(a.path, c.path);
    }
}
