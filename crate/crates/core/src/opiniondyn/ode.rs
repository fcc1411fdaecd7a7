//! Fixed-step RK4 integration of the opinion model, with optional forward
//! sensitivities.

use alloc::vec::Vec;

use super::{ImpulseSchedule, OdeError, OdeParams, Trajectory};

/// Right-hand side with the impulse value supplied explicitly.
#[inline]
fn derivs(x: f64, e: f64, p: &OdeParams, impulse: f64) -> (f64, f64) {
    (
        p.a * x * (1.0 - x * x) - p.b * x + p.c * e,
        -p.d * e + impulse,
    )
}

/// Evaluates the model equations at `(state, t)`.
pub fn rhs(
    state: (f64, f64),
    t: f64,
    params: &OdeParams,
    schedule: &ImpulseSchedule,
) -> Result<(f64, f64), OdeError> {
    let (x, e) = state;
    if !x.is_finite() || !e.is_finite() {
        return Err(OdeError::NonFinite(t));
    }
    let out = derivs(x, e, params, schedule.value_at(t));
    if !out.0.is_finite() || !out.1.is_finite() {
        return Err(OdeError::NonFinite(t));
    }
    Ok(out)
}

/// One classical RK4 step of an autonomous system.
#[inline]
fn rk4_step<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], y: &[f64; N], h: f64) -> [f64; N] {
    let k1 = f(y);
    let mut tmp = [0.0; N];
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    let k2 = f(&tmp);
    for i in 0..N {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = f(&tmp);
    for i in 0..N {
        tmp[i] = y[i] + h * k3[i];
    }
    let k4 = f(&tmp);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

struct Grid {
    t0: f64,
    t1: f64,
    dt: f64,
    n_full: usize,
    remainder: f64,
}

impl Grid {
    fn new(t0: f64, t1: f64, dt: f64) -> Result<Grid, OdeError> {
        let grid_ok = dt.is_finite() && dt > 0.0 && t0.is_finite() && t1.is_finite() && t1 > t0;
        if !grid_ok {
            return Err(OdeError::InvalidGrid);
        }
        let span = t1 - t0;
        let n_full = libm::floor(span / dt + 1e-9) as usize;
        let mut remainder = t1 - (t0 + n_full as f64 * dt);
        // Swallow a sliver left by floating-point division.
        if remainder < 1e-9 * dt && n_full > 0 {
            remainder = 0.0;
        }
        Ok(Grid {
            t0,
            t1,
            dt,
            n_full,
            remainder,
        })
    }

    fn steps(&self) -> usize {
        self.n_full + usize::from(self.remainder > 0.0)
    }

    fn step_size(&self, k: usize) -> f64 {
        if k < self.n_full {
            self.dt
        } else {
            self.remainder
        }
    }

    fn time(&self, k: usize) -> f64 {
        if k >= self.steps() {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt
        }
    }
}

fn integrate_state<const N: usize>(
    grid: &Grid,
    schedule: &ImpulseSchedule,
    init: [f64; N],
    deriv: impl Fn(&[f64; N], f64) -> [f64; N],
) -> Result<(Vec<f64>, Vec<[f64; N]>), OdeError> {
    // Pulse edges are snapped to the grid so I(t) is constant within each
    // step; it is then sampled once per step, at the midpoint.
    let snapped = schedule.snapped(grid.t0, grid.dt);

    let mut times = Vec::with_capacity(grid.steps() + 1);
    let mut states = Vec::with_capacity(grid.steps() + 1);
    times.push(grid.t0);
    states.push(init);
    if init.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite(grid.t0));
    }

    let mut y = init;
    for k in 0..grid.steps() {
        let t_a = grid.time(k);
        let h = grid.step_size(k);
        let impulse = snapped.value_at(t_a + 0.5 * h);
        y = rk4_step(|s| deriv(s, impulse), &y, h);
        let t_b = grid.time(k + 1);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite(t_b));
        }
        times.push(t_b);
        states.push(y);
    }
    Ok((times, states))
}

/// Integrates the model from `(x0, e0)` over `[t0, t1]` on a fixed grid of
/// step `dt`; the final step is shortened to land exactly on `t1`.
///
/// ```
/// use opinion_pulse_core::opiniondyn::{integrate, ImpulseSchedule, OdeParams};
///
/// // Unforced, the opinion settles at sqrt(1 - b/a).
/// let traj = integrate(
///     &OdeParams::REFERENCE,
///     &ImpulseSchedule::empty(),
///     0.5, 0.0, 0.0, 20.0, 0.01,
/// )
/// .unwrap();
/// let (x_final, _) = traj.final_state();
/// assert!((x_final - 0.921954).abs() < 1e-3);
/// ```
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    params: &OdeParams,
    schedule: &ImpulseSchedule,
    x0: f64,
    e0: f64,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Trajectory, OdeError> {
    params.validate()?;
    schedule.validate()?;
    let grid = Grid::new(t0, t1, dt)?;
    let (times, states) = integrate_state(&grid, schedule, [x0, e0], |y, impulse| {
        let (dx, de) = derivs(y[0], y[1], params, impulse);
        [dx, de]
    })?;
    Ok(Trajectory {
        times,
        x: states.iter().map(|s| s[0]).collect(),
        e: states.iter().map(|s| s[1]).collect(),
    })
}

/// A trajectory augmented with the eight forward sensitivities
/// `d(x, E) / d(a, b, c, d)`, all starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    pub trajectory: Trajectory,
    /// `dx/da, dx/db, dx/dc, dx/dd` per grid point.
    pub dx: [Vec<f64>; 4],
    /// `dE/da, dE/db, dE/dc, dE/dd` per grid point.
    pub de: [Vec<f64>; 4],
}

/// Integrates state and sensitivity equations on the same RK4 grid.
///
/// The sensitivities obey the variational system obtained by
/// differentiating the model: `d/dt (dx/dp) = J_xx dx/dp + c dE/dp + f_p`
/// with `J_xx = a (1 - 3 x^2) - b` and direct terms `f_a = x (1 - x^2)`,
/// `f_b = -x`, `f_c = E`; `d/dt (dE/dp) = -d dE/dp`, minus `E` for `p = d`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with_sensitivities(
    params: &OdeParams,
    schedule: &ImpulseSchedule,
    x0: f64,
    e0: f64,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<SensitivityTrajectory, OdeError> {
    params.validate()?;
    schedule.validate()?;
    let grid = Grid::new(t0, t1, dt)?;
    let mut init = [0.0; 10];
    init[0] = x0;
    init[1] = e0;

    let (times, states) = integrate_state(&grid, schedule, init, |y, impulse| {
        let (x, e) = (y[0], y[1]);
        let (dx, de) = derivs(x, e, params, impulse);
        let jxx = params.a * (1.0 - 3.0 * x * x) - params.b;
        let direct = [x * (1.0 - x * x), -x, e, 0.0];
        let mut out = [0.0; 10];
        out[0] = dx;
        out[1] = de;
        for p in 0..4 {
            let sx = y[2 + p];
            let se = y[6 + p];
            out[2 + p] = jxx * sx + params.c * se + direct[p];
            out[6 + p] = -params.d * se + if p == 3 { -e } else { 0.0 };
        }
        out
    })?;

    let column = |idx: usize| -> Vec<f64> { states.iter().map(|s| s[idx]).collect() };
    Ok(SensitivityTrajectory {
        trajectory: Trajectory {
            times,
            x: column(0),
            e: column(1),
        },
        dx: [column(2), column(3), column(4), column(5)],
        de: [column(6), column(7), column(8), column(9)],
    })
}
