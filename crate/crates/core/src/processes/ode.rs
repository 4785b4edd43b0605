//! Autonomous scalar flow `x' = h(x)` on `[0, 1]` with boundary-hit detection.
//!
//! Runge-Kutta-Fehlberg 4(5): the fourth-order solution is propagated and the
//! fifth-order one only drives the step size. A step that ends outside the
//! open interval `(0, 1)` is bisected on its length until the hit time is
//! bracketed to `HIT_TOLERANCE`.

const HIT_TOLERANCE: f64 = 1e-12;
/// Largest admissible distance between the bisected state and the boundary.
const OVERSHOOT_LIMIT: f64 = 1e-6;
const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowOutcome {
    /// The flow stayed inside for the whole duration.
    Reached(f64),
    /// The flow hit `boundary` (0 or 1) after `after` time units.
    Hit { after: f64, boundary: f64 },
    /// The state left `[0, 1]` in a way the bisection could not resolve.
    Escaped { after: f64, state: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSolver {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowSolver {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

/// One RKF45 step: `(fourth-order state, error estimate)`.
fn rkf45(h: &dyn Fn(f64) -> f64, x: f64, dt: f64) -> (f64, f64) {
    let k1 = h(x);
    let k2 = h(x + dt * (k1 / 4.0));
    let k3 = h(x + dt * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2));
    let k4 = h(x + dt * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3));
    let k5 = h(x + dt
        * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4));
    let k6 = h(x + dt
        * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3 + 1859.0 / 4104.0 * k4
            - 11.0 / 40.0 * k5));
    let y4 = x + dt * (25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4 - k5 / 5.0);
    let y5 = x + dt
        * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4 - 9.0 / 50.0 * k5
            + 2.0 / 55.0 * k6);
    (y4, (y5 - y4).abs())
}

#[inline]
fn inside(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl FlowSolver {
    /// Follows the flow from `x0` for `duration`, stopping at the first
    /// boundary hit. `x0` may sit on the boundary if `h` points inwards.
    pub fn advance(&self, h: &dyn Fn(f64) -> f64, x0: f64, duration: f64) -> FlowOutcome {
        if !(0.0..=1.0).contains(&x0) {
            return FlowOutcome::Escaped {
                after: 0.0,
                state: x0,
            };
        }
        let mut x = x0;
        let mut elapsed = 0.0;
        let mut dt = duration;
        for _ in 0..MAX_STEPS {
            let remaining = duration - elapsed;
            if remaining <= 0.0 {
                return FlowOutcome::Reached(x);
            }
            let last = dt >= remaining;
            let step = if last { remaining } else { dt };
            let (y, err) = rkf45(h, x, step);
            let tol = self.atol + self.rtol * x.abs().max(y.abs());
            if err > tol && step > HIT_TOLERANCE {
                dt = step * (0.9 * (tol / err).powf(0.2)).max(0.1);
                continue;
            }
            if !inside(y) {
                return self.locate_hit(h, x, elapsed, step);
            }
            x = y;
            elapsed = if last { duration } else { elapsed + step };
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
            };
            dt = step * grow;
        }
        FlowOutcome::Escaped {
            after: elapsed,
            state: x,
        }
    }

    /// Bisection on the length of the step from `x` that ended outside.
    fn locate_hit(
        &self,
        h: &dyn Fn(f64) -> f64,
        x: f64,
        elapsed: f64,
        step: f64,
    ) -> FlowOutcome {
        let (mut lo, mut hi) = (0.0, step);
        let mut y_hi = rkf45(h, x, hi).0;
        while hi - lo > HIT_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let y = rkf45(h, x, mid).0;
            if inside(y) {
                lo = mid;
            } else {
                hi = mid;
                y_hi = y;
            }
        }
        let boundary = if y_hi <= 0.0 { 0.0 } else { 1.0 };
        if (y_hi - boundary).abs() > OVERSHOOT_LIMIT {
            return FlowOutcome::Escaped {
                after: elapsed + hi,
                state: y_hi,
            };
        }
        // a step landing exactly on the boundary pins the hit to its end
        let after = if y_hi == boundary && hi == step {
            elapsed + step
        } else {
            elapsed + 0.5 * (lo + hi)
        };
        FlowOutcome::Hit { after, boundary }
    }
}
