//! Minimal pulse amplitude that flips the long-run opinion sign.

use super::ode::integrate;
use super::{ImpulseSchedule, OdeError, OdeParams, Pulse};

/// Upper end of the amplitude bracket searched by [`switch_threshold`].
pub const MAX_PULSE_AMPLITUDE: f64 = 100.0;

/// Bisection tolerance on the returned amplitude.
const AMPLITUDE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThresholdError {
    /// No amplitude in `[0, a_max]` flips the sign. Also returned in the
    /// degenerate regime `a <= b` (only the neutral state is stable, so
    /// there is no opposite sign to settle into) and for `x0 = 0`.
    #[error("no switching amplitude found in [0, {a_max}]")]
    NotFound { a_max: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// Searches for the minimal amplitude of a single rectangular pulse at
/// `pulse_start` (width `pulse_duration`) that leaves the opinion with the
/// opposite sign of `x0` at `t_end`.
///
/// Monotone bisection over `[0, MAX_PULSE_AMPLITUDE]`, bracketed to 1e-3.
/// `x0` must sit on a nonzero stable branch; pulses push against its sign
/// (the amplitude applied is `-sign(x0) * a`).
#[allow(clippy::too_many_arguments)]
pub fn switch_threshold(
    params: &OdeParams,
    pulse_start: f64,
    pulse_duration: f64,
    x0: f64,
    e0: f64,
    t_end: f64,
    dt: f64,
) -> Result<f64, ThresholdError> {
    if params.stable_fixed_point().is_none() || x0 == 0.0 {
        return Err(ThresholdError::NotFound {
            a_max: MAX_PULSE_AMPLITUDE,
        });
    }
    let push_sign = if x0 > 0.0 { -1.0 } else { 1.0 };
    let switched = |amplitude: f64| -> Result<bool, OdeError> {
        let schedule = ImpulseSchedule {
            pulses: alloc::vec![Pulse {
                t_start: pulse_start,
                duration: pulse_duration,
                amplitude: push_sign * amplitude,
            }],
        };
        let traj = integrate(params, &schedule, x0, e0, 0.0, t_end, dt)?;
        let (x_final, _) = traj.final_state();
        Ok(x_final * x0 < 0.0)
    };

    if switched(0.0)? {
        // Zero influence cannot flip a stable branch; x0 was not on one.
        return Err(ThresholdError::NotFound {
            a_max: MAX_PULSE_AMPLITUDE,
        });
    }
    if !switched(MAX_PULSE_AMPLITUDE)? {
        return Err(ThresholdError::NotFound {
            a_max: MAX_PULSE_AMPLITUDE,
        });
    }

    let (mut lo, mut hi) = (0.0, MAX_PULSE_AMPLITUDE);
    while hi - lo > AMPLITUDE_TOL {
        let mid = 0.5 * (lo + hi);
        if switched(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
