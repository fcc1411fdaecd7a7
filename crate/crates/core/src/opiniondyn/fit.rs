//! The inverse problem: recover model parameters from an observed opinion
//! path by first-order descent on an MSE loss, with exact gradients from
//! the forward sensitivities.

use alloc::vec::Vec;

use super::ode::integrate_with_sensitivities;
use super::{ImpulseSchedule, OdeError, OdeParams, Trajectory};

/// Settings for one descent run. The loss observes the opinion `x` only
/// unless `include_influence` also matches the `E` path.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub init_params: OdeParams,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub loss_tol: f64,
    pub observed: Trajectory,
    pub include_influence: bool,
    /// Recorded for provenance; the descent itself is deterministic.
    pub seed: u64,
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), OdeError> {
        self.init_params.validate()?;
        let lr_ok = self.learning_rate.is_finite() && self.learning_rate > 0.0;
        let tol_ok = self.loss_tol.is_finite() && self.loss_tol >= 0.0;
        if !lr_ok || self.max_iters == 0 || !tol_ok {
            return Err(OdeError::InvalidParams(
                "need learning_rate > 0, max_iters > 0, loss_tol >= 0",
            ));
        }
        if self.observed.len() < 2 || self.observed.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OdeError::BadObservation(
                "observed trajectory needs at least 2 strictly increasing times",
            ));
        }
        Ok(())
    }
}

/// Descent output. `loss_history` has one entry per iteration and its last
/// entry is exactly `loss(params)` for the returned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: OdeParams,
    pub loss_history: Vec<f64>,
    pub param_history: Vec<OdeParams>,
    pub converged: bool,
    pub iterations: usize,
}

/// Linear interpolation of `(times, values)` onto `t`, clamped to the ends.
fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(i) => values[i],
        Err(0) => values[0],
        Err(i) if i >= times.len() => values[times.len() - 1],
        Err(i) => {
            let (t0, t1) = (times[i - 1], times[i]);
            let w = (t - t0) / (t1 - t0);
            values[i - 1] + (values[i] - values[i - 1]) * w
        }
    }
}

struct LossEval {
    loss: f64,
    grad: [f64; 4],
}

#[allow(clippy::needless_range_loop)]
fn eval_loss(
    params: &OdeParams,
    observed: &Trajectory,
    schedule: &ImpulseSchedule,
    x0: f64,
    e0: f64,
    dt: f64,
    include_influence: bool,
) -> Result<LossEval, OdeError> {
    let t0 = observed.times[0];
    let t1 = observed.times[observed.times.len() - 1];
    let sim = integrate_with_sensitivities(params, schedule, x0, e0, t0, t1, dt)?;
    let times = &sim.trajectory.times;

    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    let mut terms = 0usize;
    for (i, &t) in observed.times.iter().enumerate() {
        let r = interp(times, &sim.trajectory.x, t) - observed.x[i];
        loss += r * r;
        for p in 0..4 {
            grad[p] += 2.0 * r * interp(times, &sim.dx[p], t);
        }
        terms += 1;
        if include_influence {
            let re = interp(times, &sim.trajectory.e, t) - observed.e[i];
            loss += re * re;
            for p in 0..4 {
                grad[p] += 2.0 * re * interp(times, &sim.de[p], t);
            }
            terms += 1;
        }
    }
    let scale = 1.0 / terms as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok(LossEval {
        loss: loss * scale,
        grad,
    })
}

/// Mean squared error between the simulated opinion path (interpolated onto
/// the observed grid) and the observation; `E` residuals are included when
/// `include_influence` is set.
#[allow(clippy::too_many_arguments)]
pub fn loss(
    params: &OdeParams,
    observed: &Trajectory,
    schedule: &ImpulseSchedule,
    x0: f64,
    e0: f64,
    dt: f64,
    include_influence: bool,
) -> Result<f64, OdeError> {
    if observed.is_empty() {
        return Err(OdeError::BadObservation("observed trajectory is empty"));
    }
    Ok(eval_loss(params, observed, schedule, x0, e0, dt, include_influence)?.loss)
}

const MOMENT_DECAY_1: f64 = 0.9;
const MOMENT_DECAY_2: f64 = 0.999;
const MOMENT_EPS: f64 = 1e-8;
/// Relative improvement window for the stall condition.
const STALL_WINDOW: usize = 50;
const STALL_REL_IMPROVEMENT: f64 = 1e-10;

/// Gradient descent with per-parameter adaptive moments.
///
/// Stops at `max_iters`, when the loss drops below `loss_tol`, or when the
/// relative improvement over the last 50 iterations falls under 1e-10.
/// The returned parameters are the last evaluated point, so the final
/// recorded loss belongs to them. `d` is projected onto `[0, inf)` after
/// each update to keep the influence decaying.
#[allow(clippy::needless_range_loop)]
pub fn fit(
    cfg: &FitConfig,
    schedule: &ImpulseSchedule,
    x0: f64,
    e0: f64,
    dt: f64,
) -> Result<FitResult, OdeError> {
    cfg.validate()?;
    schedule.validate()?;

    let mut params = cfg.init_params.as_array();
    let mut m = [0.0; 4];
    let mut v = [0.0; 4];
    let mut loss_history: Vec<f64> = Vec::new();
    let mut param_history: Vec<OdeParams> = Vec::new();
    let mut converged = false;

    for iter in 0..cfg.max_iters {
        let current = OdeParams::from_array(params);
        let eval = eval_loss(
            &current,
            &cfg.observed,
            schedule,
            x0,
            e0,
            dt,
            cfg.include_influence,
        )?;
        if !eval.loss.is_finite() {
            return Err(OdeError::Diverged { iteration: iter });
        }
        loss_history.push(eval.loss);
        param_history.push(current);

        if eval.loss < cfg.loss_tol {
            converged = true;
            break;
        }
        if loss_history.len() > STALL_WINDOW {
            let before = loss_history[loss_history.len() - 1 - STALL_WINDOW];
            let now = eval.loss;
            if (before - now).abs() <= STALL_REL_IMPROVEMENT * before.abs().max(1e-300) {
                converged = true;
                break;
            }
        }

        let t = (iter + 1) as f64;
        let bias1 = 1.0 - libm::pow(MOMENT_DECAY_1, t);
        let bias2 = 1.0 - libm::pow(MOMENT_DECAY_2, t);
        for p in 0..4 {
            m[p] = MOMENT_DECAY_1 * m[p] + (1.0 - MOMENT_DECAY_1) * eval.grad[p];
            v[p] = MOMENT_DECAY_2 * v[p] + (1.0 - MOMENT_DECAY_2) * eval.grad[p] * eval.grad[p];
            let m_hat = m[p] / bias1;
            let v_hat = v[p] / bias2;
            params[p] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + MOMENT_EPS);
        }
        // Keep the influence decay physical.
        params[3] = params[3].max(0.0);
    }

    let iterations = loss_history.len();
    Ok(FitResult {
        params: param_history[iterations - 1],
        loss_history,
        param_history,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opiniondyn::{integrate, Pulse};
    use alloc::vec;

    const REF: OdeParams = OdeParams::REFERENCE;

    fn one_pulse() -> ImpulseSchedule {
        ImpulseSchedule {
            pulses: vec![Pulse {
                t_start: 5.0,
                duration: 1.0,
                amplitude: 4.0,
            }],
        }
    }

    fn truth_trajectory() -> Trajectory {
        integrate(&REF, &one_pulse(), 0.5, 0.0, 0.0, 20.0, 0.01).unwrap()
    }

    #[test]
    fn self_consistent_loss_is_zero() {
        let observed = truth_trajectory();
        let l = loss(&REF, &observed, &one_pulse(), 0.5, 0.0, 0.01, false).unwrap();
        assert!(l < 1e-20, "loss {l}");
    }

    #[test]
    fn constant_offset_gives_squared_loss() {
        let mut observed = truth_trajectory();
        let delta = 0.37;
        for x in observed.x.iter_mut() {
            *x += delta;
        }
        let l = loss(&REF, &observed, &one_pulse(), 0.5, 0.0, 0.01, false).unwrap();
        assert!((l - delta * delta).abs() < 1e-12, "loss {l}");
    }

    #[test]
    fn loss_matches_direct_mse() {
        // Oracle: direct MSE over the two x arrays, computed separately.
        let observed = truth_trajectory();
        let other = OdeParams {
            a: 1.5,
            b: 0.5,
            c: 0.8,
            d: 0.4,
        };
        let l = loss(&other, &observed, &one_pulse(), 0.5, 0.0, 0.01, false).unwrap();

        let sim = integrate(&other, &one_pulse(), 0.5, 0.0, 0.0, 20.0, 0.01).unwrap();
        let direct = sim
            .x
            .iter()
            .zip(&observed.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / sim.x.len() as f64;
        assert!((l - direct).abs() < 1e-15, "{l} vs {direct}");
    }

    #[test]
    fn init_at_truth_converges_immediately() {
        let cfg = FitConfig {
            init_params: REF,
            learning_rate: 0.05,
            max_iters: 100,
            loss_tol: 1e-12,
            observed: truth_trajectory(),
            include_influence: false,
            seed: 0,
        };
        let result = fit(&cfg, &one_pulse(), 0.5, 0.0, 0.01).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 1);
        assert!(result.loss_history[0] < 1e-12);
    }

    #[test]
    fn recovers_reference_parameters() {
        let cfg = FitConfig {
            init_params: OdeParams {
                a: 1.0,
                b: 0.5,
                c: 0.5,
                d: 0.5,
            },
            learning_rate: 0.05,
            max_iters: 5000,
            loss_tol: 1e-12,
            observed: truth_trajectory(),
            include_influence: false,
            seed: 0,
        };
        let result = fit(&cfg, &one_pulse(), 0.5, 0.0, 0.01).unwrap();
        let got = result.params.as_array();
        let want = REF.as_array();
        for i in 0..4 {
            let rel = (got[i] - want[i]).abs() / want[i];
            assert!(
                rel < 0.05,
                "param {i}: {} vs {} ({result:?})",
                got[i],
                want[i]
            );
        }
        // Invariants: history lengths match the iteration count and the
        // last recorded loss is the loss of the returned parameters.
        assert_eq!(result.loss_history.len(), result.iterations);
        assert_eq!(result.param_history.len(), result.iterations);
        let final_loss = loss(
            &result.params,
            &cfg.observed,
            &one_pulse(),
            0.5,
            0.0,
            0.01,
            false,
        )
        .unwrap();
        assert!((final_loss - result.loss_history[result.iterations - 1]).abs() < 1e-18);
    }

    #[test]
    fn smoothed_loss_decays_after_burn_in() {
        let cfg = FitConfig {
            init_params: OdeParams {
                a: 1.0,
                b: 0.5,
                c: 0.5,
                d: 0.5,
            },
            learning_rate: 0.05,
            max_iters: 5000,
            loss_tol: 1e-12,
            observed: truth_trajectory(),
            include_influence: false,
            seed: 0,
        };
        let result = fit(&cfg, &one_pulse(), 0.5, 0.0, 0.01).unwrap();
        let h = &result.loss_history;
        let window = 20usize;
        let smoothed: Vec<f64> = (0..h.len().saturating_sub(window))
            .map(|i| h[i..i + window].iter().sum::<f64>() / window as f64)
            .collect();
        let start = h.len() / 10;
        for i in start..smoothed.len() - 1 {
            assert!(
                smoothed[i + 1] <= smoothed[i] * (1.0 + 1e-6),
                "smoothed loss rose at {i}: {} -> {}",
                smoothed[i],
                smoothed[i + 1]
            );
        }
    }

    #[test]
    fn identical_config_identical_result() {
        let cfg = FitConfig {
            init_params: OdeParams {
                a: 1.2,
                b: 0.4,
                c: 0.7,
                d: 0.4,
            },
            learning_rate: 0.05,
            max_iters: 200,
            loss_tol: 1e-12,
            observed: truth_trajectory(),
            include_influence: false,
            seed: 7,
        };
        let a = fit(&cfg, &one_pulse(), 0.5, 0.0, 0.01).unwrap();
        let b = fit(&cfg, &one_pulse(), 0.5, 0.0, 0.01).unwrap();
        assert_eq!(a, b);
    }
}
