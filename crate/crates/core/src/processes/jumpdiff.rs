use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use super::{
    ensemble::path_rng, JumpFn, JumpKernelFn, ScalarFn, SimulatedScenario, SimulationError,
    TimeStateFn,
};
use crate::measures::{
    build_jump_measure, AcDensity, AtomKind, CompensatorSpec, GridPath, JumpRecord, MarkKernel,
    MarkMap, MarkedPointMeasure, TimeGrid, K_TOLERANCE,
};

const EXPLOSION: f64 = 1e8;
const GAMMA_TOLERANCE: f64 = 1e-12;

/// A predictable atom of the driving measure at a time fixed in advance.
#[derive(Debug, Clone)]
pub struct DeclaredAtom {
    pub time: f64,
    pub kernel: MarkKernel,
}

/// Driving measure `mu`: a time-inhomogeneous marked Poisson part with
/// intensity `rate(t)` and mark law `marks(t)`, plus declared atoms.
#[derive(Clone)]
pub struct DrivingMeasure {
    pub rate: ScalarFn,
    pub rate_max: f64,
    pub marks: JumpKernelFn,
    pub atoms: Vec<DeclaredAtom>,
}

impl DrivingMeasure {
    pub fn none() -> Self {
        Self {
            rate: Arc::new(|_| 0.0),
            rate_max: 0.0,
            marks: Arc::new(|_| crate::measures::MarkLaw::Dirac(0.0)),
            atoms: Vec::new(),
        }
    }

    fn ac(&self) -> Option<AcDensity> {
        if self.rate_max == 0.0 {
            return None;
        }
        let rate = self.rate.clone();
        let marks = self.marks.clone();
        Some(Arc::new(move |t, _x| {
            MarkKernel::new(rate(t).max(0.0), marks(t)).unwrap_or_else(|_| MarkKernel::zero())
        }))
    }
}

/// `C_t = rate * t + sum of jumps up to t`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClockSpec {
    pub rate: f64,
    pub jumps: Vec<(f64, f64)>,
}

impl ClockSpec {
    pub fn time() -> Self {
        Self {
            rate: 1.0,
            jumps: Vec::new(),
        }
    }

    fn jump_at(&self, t: f64) -> f64 {
        self.jumps
            .iter()
            .filter(|(s, _)| *s == t)
            .map(|(_, d)| *d)
            .sum()
    }
}

/// `dX = b dC + sigma dN + int gamma d(mu - nu)` with `N` a Brownian motion.
/// `sigma = None` means there is no continuous martingale part.
#[derive(Clone)]
pub struct JumpDiffusionModel {
    pub b: TimeStateFn,
    pub sigma: Option<TimeStateFn>,
    pub gamma: JumpFn,
    pub driving: DrivingMeasure,
    pub clock: ClockSpec,
    pub x0: f64,
}

/// A hand-placed atom of the driving measure for scripted scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedJump {
    pub time: f64,
    pub mark: f64,
}

const STATE_PROBES: [f64; 9] = [-10.0, -3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0, 10.0];

fn probe_marks(kernel: &MarkKernel) -> Vec<f64> {
    use crate::measures::MarkLaw;
    match kernel.law().atoms() {
        Some(a) => a.into_iter().map(|(m, _)| m).collect(),
        None => match kernel.law() {
            MarkLaw::Density { lo, hi, .. } => (0..=16).map(|k| lo + (hi - lo) * k as f64 / 16.0).collect(),
            _ => {
                let mut rng = path_rng(0, 0);
                (0..16).map(|_| kernel.law().sample(&mut rng)).collect()
            }
        },
    }
}

impl JumpDiffusionModel {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidModel(msg));
        if !self.x0.is_finite() {
            return bad("x0 must be finite".into());
        }
        let d = &self.driving;
        if !(d.rate_max >= 0.0 && d.rate_max.is_finite()) {
            return bad(format!("rate_max = {} must be finite", d.rate_max));
        }
        if !(self.clock.rate >= 0.0) {
            return bad("clock rate must be non-negative".into());
        }
        for w in d.atoms.windows(2) {
            if w[1].time <= w[0].time {
                return bad("declared atoms must have increasing times".into());
            }
        }
        for a in &d.atoms {
            if !(a.time > 0.0) {
                return bad(format!("declared atom at t = {} must be positive", a.time));
            }
            if a.kernel.mass() > 1.0 + K_TOLERANCE {
                return bad(format!("declared atom at t = {} has mass > 1", a.time));
            }
            if (a.kernel.mass() - 1.0).abs() <= K_TOLERANCE {
                for &x in &STATE_PROBES {
                    for e in probe_marks(&a.kernel) {
                        let g = (self.gamma)(a.time, x, e);
                        if g.abs() > GAMMA_TOLERANCE {
                            return bad(format!(
                                "gamma(t = {}, x = {x}, e = {e}) = {g} on a K-atom; gamma must vanish on K",
                                a.time
                            ));
                        }
                    }
                }
            }
        }
        for &(t, dc) in &self.clock.jumps {
            if !(dc >= 0.0) {
                return bad(format!("clock jump at t = {t} is negative"));
            }
            let in_j = d.atoms.iter().any(|a| a.time == t && a.kernel.mass() > 0.0);
            if !in_j {
                return bad(format!(
                    "clock jump at t = {t} is not at a declared atom of the driving measure"
                ));
            }
        }
        Ok(())
    }
}

/// Simulates one path with RNG substream `path_index` of `seed`.
pub fn simulate_jumpdiff(
    model: &JumpDiffusionModel,
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

/// Deterministic scenario: inaccessible atoms at the scripted times and
/// marks, declared atoms realised when a scripted jump sits on their time
/// (mass-one atoms always, at their kernel mean unless scripted), and a
/// Brownian path that stays at zero.
pub fn simulate_jumpdiff_scripted(
    model: &JumpDiffusionModel,
    base: &TimeGrid,
    script: &[ScriptedJump],
) -> Result<SimulatedScenario, SimulationError> {
    model.validate()?;
    let mut inaccessible = Vec::new();
    let mut declared = vec![None; model.driving.atoms.len()];
    for s in script {
        match model.driving.atoms.iter().position(|a| a.time == s.time) {
            Some(k) => declared[k] = Some(s.mark),
            None => inaccessible.push((s.time, s.mark)),
        }
    }
    for (slot, a) in declared.iter_mut().zip(&model.driving.atoms) {
        if slot.is_none() && (a.kernel.mass() - 1.0).abs() <= K_TOLERANCE {
            *slot = Some(a.kernel.law().expect(|e| e));
        }
    }
    inaccessible.sort_by(|a, b| a.0.total_cmp(&b.0));
    euler(model, base, inaccessible, declared, || 0.0)
}

pub(super) fn simulate_with<R: Rng + ?Sized>(
    model: &JumpDiffusionModel,
    base: &TimeGrid,
    rng: &mut R,
) -> Result<SimulatedScenario, SimulationError> {
    let horizon = base.horizon();
    let d = &model.driving;
    let mut inaccessible = Vec::new();
    if d.rate_max > 0.0 {
        let exp = Exp::new(d.rate_max).expect("positive finite rate");
        let mut t = exp.sample(rng);
        while t <= horizon {
            let rate = (d.rate)(t);
            if rate > d.rate_max * (1.0 + 1e-12) {
                return Err(SimulationError::InvalidModel(format!(
                    "rate({t}) = {rate} exceeds rate_max = {}",
                    d.rate_max
                )));
            }
            let u: f64 = rng.random();
            if u * d.rate_max < rate {
                let mark = (d.marks)(t).sample(rng);
                if !d.atoms.iter().any(|a| a.time == t) {
                    inaccessible.push((t, mark));
                }
            }
            t += exp.sample(rng);
        }
    }
    let mut declared = Vec::with_capacity(d.atoms.len());
    for a in &d.atoms {
        let u: f64 = rng.random();
        declared.push((u < a.kernel.mass()).then(|| a.kernel.law().sample(rng)));
    }
    euler(model, base, inaccessible, declared, || {
        StandardNormal.sample(rng)
    })
}

fn euler(
    model: &JumpDiffusionModel,
    base: &TimeGrid,
    inaccessible: Vec<(f64, f64)>,
    declared: Vec<Option<f64>>,
    mut normal: impl FnMut() -> f64,
) -> Result<SimulatedScenario, SimulationError> {
    let horizon = base.horizon();
    let d = &model.driving;
    let mut events: Vec<f64> = inaccessible.iter().map(|(t, _)| *t).collect();
    events.extend(d.atoms.iter().map(|a| a.time).filter(|t| *t <= horizon));
    events.extend(clock_times(model, horizon));
    let grid = Arc::new(TimeGrid::with_events(base, &events)?);
    let n = grid.len();

    // driving measure on the grid
    let mut triples: Vec<(f64, f64, AtomKind)> = inaccessible
        .iter()
        .map(|&(t, e)| (t, e, AtomKind::TotallyInaccessible))
        .collect();
    for (a, real) in d.atoms.iter().zip(&declared) {
        if let (Some(e), true) = (real, a.time <= horizon) {
            triples.push((a.time, *e, AtomKind::Predictable));
        }
    }
    triples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let measure = MarkedPointMeasure::new(&grid, &triples)?;
    let ac = d.ac();

    let mut values = vec![model.x0; n];
    let mut left = vec![model.x0; n];
    let mut bm = model.sigma.as_ref().map(|_| vec![0.0; n]);
    let mut log = Vec::new();
    let mut next_atom = 0;
    let atoms = measure.atoms();
    let mut next_declared = 0;
    for i in 1..n {
        let (t0, t1) = (grid.time(i - 1), grid.time(i));
        let dt = t1 - t0;
        let x = values[i - 1];
        let mut xl = x + (model.b)(t0, x) * model.clock.rate * dt;
        if let (Some(sigma), Some(bm)) = (&model.sigma, bm.as_mut()) {
            let dn = dt.sqrt() * normal();
            bm[i] = bm[i - 1] + dn;
            xl += sigma(t0, x) * dn;
        }
        if let Some(ac) = &ac {
            let k = ac(t0, x);
            xl -= dt * k.integrate(|e| (model.gamma)(t0, x, e));
        }
        left[i] = xl;

        let mut jump = 0.0;
        let mut predictable = false;
        let dc = model.clock.jump_at(t1);
        if dc != 0.0 {
            jump += (model.b)(t1, xl) * dc;
            predictable = true;
        }
        while next_declared < d.atoms.len() && d.atoms[next_declared].time < t1 {
            next_declared += 1;
        }
        if next_declared < d.atoms.len() && d.atoms[next_declared].time == t1 {
            let a = &d.atoms[next_declared];
            if a.kernel.mass() > 0.0 {
                jump -= a.kernel.integrate(|e| (model.gamma)(t1, xl, e));
                predictable = true;
            }
        }
        while next_atom < atoms.len() && atoms[next_atom].node == i {
            jump += (model.gamma)(t1, xl, atoms[next_atom].mark);
            next_atom += 1;
        }
        let xi = xl + jump;
        if !(xi.abs() <= EXPLOSION) {
            return Err(SimulationError::Explosion {
                time: t1,
                value: xi,
            });
        }
        values[i] = xi;
        // log the jump itself, not xi - xl, so marks keep their exact values
        if jump != 0.0 {
            log.push(JumpRecord {
                time: t1,
                size: jump,
                kind: if predictable {
                    AtomKind::Predictable
                } else {
                    AtomKind::TotallyInaccessible
                },
            });
        }
    }

    let path = GridPath::new(grid.clone(), values, left)?;
    let atoms_nu: Vec<(f64, MarkKernel)> = d
        .atoms
        .iter()
        .filter(|a| a.time <= horizon && a.kernel.mass() > 0.0)
        .map(|a| (a.time, a.kernel.clone()))
        .collect();
    let compensator = CompensatorSpec::realize(&path, ac, atoms_nu)?;
    let brownian = match bm {
        Some(v) => Some(GridPath::continuous(grid.clone(), v)?),
        None => None,
    };
    // the log must agree with the path; fail early if it does not
    build_jump_measure(&path, &log)?;
    Ok(SimulatedScenario {
        path,
        measure,
        compensator,
        p_star: None,
        brownian,
        jump_log: log,
        seed: 0,
        path_index: 0,
    })
}

fn clock_times(model: &JumpDiffusionModel, horizon: f64) -> Vec<f64> {
    model
        .clock
        .jumps
        .iter()
        .map(|(t, _)| *t)
        .filter(|t| *t <= horizon)
        .collect()
}

/// `nu^X` for a jump-diffusion: the image of the driving intensity under
/// `e -> gamma(s, X_{s-}, e)`, plus mass-one atoms at the jumps
/// `b(s, X_{s-}) dC_s` of the predictable part.
///
/// Declared atoms outside `K` must carry `gamma = 0`, otherwise the law of
/// the predictable jump is not a single kernel and is rejected.
pub fn jumpdiff_x_compensator(
    model: &JumpDiffusionModel,
    scenario: &SimulatedScenario,
) -> Result<CompensatorSpec, SimulationError> {
    if scenario.p_star.is_some() {
        return Err(SimulationError::ModelMismatch(
            "PDMP scenario given to a jump-diffusion".into(),
        ));
    }
    let path = &scenario.path;
    let grid = path.grid();
    let horizon = grid.horizon();
    let mut atoms = Vec::new();
    let mut times: Vec<f64> = clock_times(model, horizon);
    times.extend(
        model
            .driving
            .atoms
            .iter()
            .filter(|a| a.time <= horizon && a.kernel.mass() > 0.0)
            .map(|a| a.time),
    );
    times.sort_by(f64::total_cmp);
    times.dedup();
    for t in times {
        let node = grid
            .index_of(t)
            .ok_or_else(|| SimulationError::ModelMismatch(format!("t = {t} is not a node")))?;
        let xl = path.left_limit(node);
        if let Some(a) = model.driving.atoms.iter().find(|a| a.time == t) {
            if probe_marks(&a.kernel)
                .iter()
                .any(|&e| (model.gamma)(t, xl, e).abs() > GAMMA_TOLERANCE)
            {
                return Err(SimulationError::ModelMismatch(format!(
                    "gamma does not vanish at the predictable time {t}"
                )));
            }
        }
        let size = (model.b)(t, xl) * model.clock.jump_at(t);
        if size != 0.0 {
            atoms.push((t, MarkKernel::dirac(1.0, size)));
        }
    }
    let ac: Option<AcDensity> = model.driving.ac().map(|base| {
        let gamma = model.gamma.clone();
        let f: AcDensity = Arc::new(move |t, x| {
            let g = gamma.clone();
            let map: MarkMap = Arc::new(move |e| g(t, x, e));
            base(t, x).map_marks(map)
        });
        f
    });
    Ok(CompensatorSpec::realize(path, ac, atoms)?)
}
