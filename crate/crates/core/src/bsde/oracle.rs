//! Value functions `v(t, x)` with `Y_t = v(t, X_t)` for the benchmarks,
//! computed independently of the regression solvers.

use std::sync::Arc;

use super::benchmarks::{self, PDMP_DET_Q};
use super::BsdeError;
use crate::processes::{FlowOutcome, PdmpModel, ScalarFn};

pub type ValueFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `v` and `d/dx v`.
#[derive(Clone)]
pub struct Oracle {
    v: ValueFn,
    dv: ValueFn,
    pub provenance: String,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl Oracle {
    pub fn new(
        v: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dv: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        provenance: impl Into<String>,
    ) -> Self {
        Self {
            v: Arc::new(v),
            dv: Arc::new(dv),
            provenance: provenance.into(),
        }
    }

    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        (self.v)(t, x)
    }

    #[inline]
    pub fn derivative(&self, t: f64, x: f64) -> f64 {
        (self.dv)(t, x)
    }

    /// Largest `|dv - central difference|` over the probe points.
    pub fn fd_check(&self, probes: &[(f64, f64)]) -> f64 {
        const H: f64 = 1e-6;
        probes
            .iter()
            .map(|&(t, x)| {
                let fd = (self.value(t, x + H) - self.value(t, x - H)) / (2.0 * H);
                (fd - self.derivative(t, x)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Closed-form value functions of the benchmarks that have one.
pub fn closed_form_oracle(id: &str) -> Result<Oracle, BsdeError> {
    let horizon = benchmarks::horizon(id)?;
    let o = match id {
        "brownian-linear" | "poisson-linear" => Oracle::new(|_, x| x, |_, _| 1.0, id),
        "heat-quadratic" => Oracle::new(
            move |t, x| x * x + (horizon - t),
            |_, x| 2.0 * x,
            id,
        ),
        "brownian-poisson" => {
            let c = 1.0 + benchmarks::BP_RATE * benchmarks::BP_SECOND_MOMENT;
            Oracle::new(
                move |t, x| x * x + c * (horizon - t),
                |_, x| 2.0 * x,
                id,
            )
        }
        "jd-predictable" => Oracle::new(
            |t, x| if t < 0.5 { x + 0.5 } else { x },
            |_, _| 1.0,
            id,
        ),
        "pdmp-deterministic" => Oracle::new(
            move |t, x| deterministic_forecast(t, x, horizon, PDMP_DET_Q),
            |_, _| 1.0,
            id,
        ),
        "pdmp-interior" | "violating-h" => {
            let rate = benchmarks::INTERIOR_THETA + benchmarks::INTERIOR_LAMBDA;
            Oracle::new(
                move |t, x| 0.5 + (x - 0.5) * (-rate * (horizon - t)).exp(),
                move |t, _| (-rate * (horizon - t)).exp(),
                id,
            )
        }
        "pdmp-boundary" => {
            let (k, d) = benchmarks::boundary_mode();
            let beta = k - benchmarks::BOUNDARY_LAMBDA;
            Oracle::new(
                move |t, x| ((beta * (horizon - t)).exp() * ((k * x).exp() + d)).re,
                move |t, x| ((beta * (horizon - t)).exp() * k * (k * x).exp()).re,
                id,
            )
        }
        _ => return Err(BsdeError::UnknownBenchmark(id.to_string())),
    };
    Ok(o)
}

/// Unit-speed flow to 1, forced jump to `q`, repeated until `T`; the
/// terminal state is `g(X_T) = X_T`. A hit exactly at `T` jumps.
fn deterministic_forecast(mut t: f64, mut x: f64, horizon: f64, q: f64) -> f64 {
    loop {
        let hit = t + (1.0 - x);
        if hit <= horizon {
            t = hit;
            x = q;
        } else {
            return x + (horizon - t);
        }
    }
}

/// Resolution of [`integro_ode_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeGrid {
    pub cells: usize,
    pub steps: usize,
    pub stored: usize,
}

impl Default for OdeGrid {
    fn default() -> Self {
        Self {
            cells: 1000,
            steps: 6000,
            stored: 300,
        }
    }
}

/// Catmull-Rom interpolation of node values on the uniform grid of `[0, 1]`.
fn cubic(values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let s = x.clamp(0.0, 1.0) * n as f64;
    let i = (s.floor() as usize).min(n - 1);
    let u = s - i as f64;
    let p1 = values[i];
    let p2 = values[i + 1];
    let p0 = if i > 0 { values[i - 1] } else { 2.0 * p1 - p2 };
    let p3 = if i + 2 <= n { values[i + 2] } else { 2.0 * p2 - p1 };
    0.5 * (2.0 * p1
        + (-p0 + p2) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
}

/// Post-jump states and probabilities of `Q(y, .)`.
fn post_states(model: &PdmpModel, y: f64) -> Result<Vec<(f64, f64)>, BsdeError> {
    model
        .kernel(y)
        .atoms()
        .map(|a| a.into_iter().map(|(e, p)| (y + e, p)).collect())
        .ok_or_else(|| {
            BsdeError::Unsupported("the integro-ODE oracle needs discrete jump kernels".into())
        })
}

fn kernel_mean(states: &[(f64, f64)], values: &[f64]) -> f64 {
    states.iter().map(|&(y, p)| p * cubic(values, y)).sum()
}

/// Semi-Lagrangian solution of the backward equation of a PDMP with `f = 0`:
///
/// ```text
/// d_t v + h d_x v + lambda (int v(t, x + e) Q(x, de) - v) = 0,   v(T, .) = g,
/// v(t, b) = int v(t, b + e) Q(b, de) on the exit boundary.
/// ```
///
/// Each step carries values along the flow over `dt` and mixes in the jump
/// term with probability `1 - exp(-lambda dt)`. The result is piecewise
/// linear in `x` between grid nodes and linear in `t` between stored slices.
pub fn integro_ode_oracle(
    model: &PdmpModel,
    terminal: ScalarFn,
    horizon: f64,
    res: OdeGrid,
    provenance: &str,
) -> Result<Oracle, BsdeError> {
    let nx = res.cells;
    let dt = horizon / res.steps as f64;
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 / nx as f64).collect();
    let exits =
        |x: f64| (x >= 1.0 && (model.h)(1.0) >= 0.0) || (x <= 0.0 && (model.h)(0.0) <= 0.0);

    enum Move {
        Flow { to: f64, p: f64 },
        Hit { boundary: f64, p: f64 },
        Exit,
    }
    let mut moves = Vec::with_capacity(nx + 1);
    let mut interior_posts = Vec::with_capacity(nx + 1);
    for &x in &xs {
        if exits(x) {
            moves.push(Move::Exit);
            interior_posts.push(Vec::new());
            continue;
        }
        let lam = model.rate(x);
        let mv = match model.flow.advance(&*model.h, x, dt) {
            FlowOutcome::Reached(y) => Move::Flow {
                to: y,
                p: -(-0.5 * (lam + model.rate(y)) * dt).exp_m1(),
            },
            FlowOutcome::Hit { after, boundary } => Move::Hit {
                boundary,
                p: -(-lam * after).exp_m1(),
            },
            FlowOutcome::Escaped { after, .. } => {
                return Err(BsdeError::Unsupported(format!(
                    "flow escaped from x = {x} after {after}"
                )))
            }
        };
        moves.push(mv);
        interior_posts.push(if lam > 0.0 { post_states(model, x)? } else { Vec::new() });
    }
    let boundary_posts = [post_states(model, 0.0)?, post_states(model, 1.0)?];
    let bpost = |b: f64| &boundary_posts[usize::from(b >= 1.0)];

    let mut v: Vec<f64> = xs.iter().map(|&x| terminal(x)).collect();
    let fill_exits = |v: &mut Vec<f64>| {
        for (i, &x) in xs.iter().enumerate() {
            if exits(x) {
                v[i] = kernel_mean(bpost(x), v);
            }
        }
    };
    fill_exits(&mut v);

    let every = (res.steps / res.stored.max(1)).max(1);
    let mut slices = vec![(horizon, v.clone())];
    for step in (0..res.steps).rev() {
        let prev = &v;
        let mut next = vec![0.0; nx + 1];
        for (i, mv) in moves.iter().enumerate() {
            next[i] = match *mv {
                Move::Exit => 0.0,
                Move::Flow { to, p } => {
                    let stay = cubic(prev, to);
                    if p > 0.0 {
                        // jump at mid-step, from the mid-step state
                        let mid = 0.5 * (xs[i] + to);
                        let jump = post_states(model, mid)
                            .map(|s| kernel_mean(&s, prev))
                            .unwrap_or_else(|_| kernel_mean(&interior_posts[i], prev));
                        (1.0 - p) * stay + p * jump
                    } else {
                        stay
                    }
                }
                Move::Hit { boundary, p } => {
                    let forced = kernel_mean(bpost(boundary), prev);
                    if p > 0.0 {
                        (1.0 - p) * forced + p * kernel_mean(&interior_posts[i], prev)
                    } else {
                        forced
                    }
                }
            };
        }
        fill_exits(&mut next);
        v = next;
        if step % every == 0 {
            slices.push((step as f64 * dt, v.clone()));
        }
    }
    slices.reverse();
    if slices[0].0 != 0.0 {
        slices.insert(0, (0.0, v));
    }

    let table = Arc::new(Table { slices, nx });
    let tv = table.clone();
    Ok(Oracle {
        v: Arc::new(move |t, x| tv.value(t, x)),
        dv: Arc::new(move |t, x| table.slope(t, x)),
        provenance: format!("{provenance} (integro-ODE, {nx} cells, {} steps)", res.steps),
    })
}

struct Table {
    slices: Vec<(f64, Vec<f64>)>,
    nx: usize,
}

impl Table {
    fn bracket(&self, t: f64) -> (usize, f64) {
        let j = self
            .slices
            .partition_point(|(s, _)| *s <= t)
            .clamp(1, self.slices.len() - 1);
        let (t0, t1) = (self.slices[j - 1].0, self.slices[j].0);
        (j, ((t - t0) / (t1 - t0)).clamp(0.0, 1.0))
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let s = x.clamp(0.0, 1.0) * self.nx as f64;
        let i = (s.floor() as usize).min(self.nx - 1);
        (i, s - i as f64)
    }

    fn value(&self, t: f64, x: f64) -> f64 {
        let (j, w) = self.bracket(t);
        let (i, u) = self.cell(x);
        let at = |v: &[f64]| v[i] + u * (v[i + 1] - v[i]);
        (1.0 - w) * at(&self.slices[j - 1].1) + w * at(&self.slices[j].1)
    }

    fn slope(&self, t: f64, x: f64) -> f64 {
        let (j, w) = self.bracket(t);
        let (i, _) = self.cell(x);
        let d = |v: &[f64]| (v[i + 1] - v[i]) * self.nx as f64;
        (1.0 - w) * d(&self.slices[j - 1].1) + w * d(&self.slices[j].1)
    }
}
