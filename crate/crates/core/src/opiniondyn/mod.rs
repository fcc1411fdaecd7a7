//! Bistable opinion dynamics under exogenous impulses.
//!
//! The state is `(x, E)`: an opinion that self-reinforces but saturates,
//! `dx/dt = a x (1 - x^2) - b x + c E`, coupled to a decaying influence
//! `dE/dt = -d E + I(t)` driven by a piecewise-constant impulse signal.
//! With `a > b > 0` and no forcing, the opinion settles at one of the two
//! entrenched states `±sqrt(1 - b/a)`; sufficiently large impulses switch
//! its sign, small ones only perturb it.
//!
//! Forward integration is classical fixed-step RK4; parameter gradients use
//! the forward sensitivity equations integrated alongside the state, which
//! makes the inverse problem (recovering `(a, b, c, d)` from an observed
//! opinion path) a deterministic first-order descent.

mod fit;
mod ode;
mod threshold;

pub use fit::{fit, loss, FitConfig, FitResult};
pub use ode::{integrate, integrate_with_sensitivities, rhs, SensitivityTrajectory};
pub use threshold::{switch_threshold, ThresholdError, MAX_PULSE_AMPLITUDE};

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// The four model parameters: nonlinear feedback strength `a`, internal
/// damping `b`, influence coupling `c`, and influence decay rate `d`.
///
/// `d` must be non-negative (the influence decays); `a`, `b`, `c` carry no
/// sign constraint so a fitter may explore freely. The reference regime has
/// `a > b > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl OdeParams {
    /// The parameter set used throughout the reference scenarios.
    pub const REFERENCE: OdeParams = OdeParams {
        a: 2.0,
        b: 0.3,
        c: 1.0,
        d: 0.3,
    };

    pub fn validate(&self) -> Result<(), OdeError> {
        let vals = [self.a, self.b, self.c, self.d];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::InvalidParams("parameters must be finite"));
        }
        if self.d < 0.0 {
            return Err(OdeError::InvalidParams("d must be >= 0"));
        }
        Ok(())
    }

    /// Positive stable fixed point `sqrt(1 - b/a)` of the unforced opinion,
    /// when it exists (`a > b > 0`).
    pub fn stable_fixed_point(&self) -> Option<f64> {
        if self.a > self.b && self.b > 0.0 {
            Some(libm::sqrt(1.0 - self.b / self.a))
        } else {
            None
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        OdeParams {
            a: v[0],
            b: v[1],
            c: v[2],
            d: v[3],
        }
    }
}

/// One rectangular impulse: amplitude over `[t_start, t_start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub t_start: f64,
    pub duration: f64,
    pub amplitude: f64,
}

/// Piecewise-constant exogenous impulse signal; overlapping pulses sum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImpulseSchedule {
    pub pulses: Vec<Pulse>,
}

impl ImpulseSchedule {
    pub fn empty() -> Self {
        ImpulseSchedule { pulses: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        for p in &self.pulses {
            let pulse_ok = p.duration.is_finite()
                && p.duration > 0.0
                && p.t_start.is_finite()
                && p.amplitude.is_finite();
            if !pulse_ok {
                return Err(OdeError::InvalidParams(
                    "pulses need finite values and duration > 0",
                ));
            }
        }
        Ok(())
    }

    /// `I(t)`: sum of active pulse amplitudes; intervals are right-open.
    pub fn value_at(&self, t: f64) -> f64 {
        self.pulses
            .iter()
            .filter(|p| t >= p.t_start && t < p.t_start + p.duration)
            .map(|p| p.amplitude)
            .sum()
    }

    /// Copy with pulse edges snapped to the integration grid `t0 + k dt`,
    /// each pulse kept at least one cell wide. Snapping keeps every RK4
    /// step inside a region where I is constant, preserving fourth order.
    pub(crate) fn snapped(&self, t0: f64, dt: f64) -> ImpulseSchedule {
        let snap = |t: f64| t0 + libm::round((t - t0) / dt) * dt;
        ImpulseSchedule {
            pulses: self
                .pulses
                .iter()
                .map(|p| {
                    let start = snap(p.t_start);
                    let end = snap(p.t_start + p.duration).max(start + dt);
                    Pulse {
                        t_start: start,
                        duration: end - start,
                        amplitude: p.amplitude,
                    }
                })
                .collect(),
        }
    }
}

/// Evaluates the impulse signal of `schedule` at time `t`.
pub fn impulse_value(schedule: &ImpulseSchedule, t: f64) -> f64 {
    schedule.value_at(t)
}

/// State paths on the integration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub e: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Final `(x, E)` state.
    pub fn final_state(&self) -> (f64, f64) {
        let n = self.times.len() - 1;
        (self.x[n], self.e[n])
    }

    /// Number of strict sign changes of the opinion path, ignoring the
    /// neutral band `|x| < eps`.
    pub fn sign_changes(&self, eps: f64) -> usize {
        let mut count = 0;
        let mut last_sign = 0i8;
        for &x in &self.x {
            if x.abs() < eps {
                continue;
            }
            let sign = if x > 0.0 { 1 } else { -1 };
            if last_sign != 0 && sign != last_sign {
                count += 1;
            }
            last_sign = sign;
        }
        count
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid time grid: need dt > 0 and t1 > t0")]
    InvalidGrid,
    /// State or derivative stopped being finite; carries the blow-up time.
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    /// The descent lost a finite loss.
    #[error("fit diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("observed trajectory is unusable: {0}")]
    BadObservation(&'static str),
}
