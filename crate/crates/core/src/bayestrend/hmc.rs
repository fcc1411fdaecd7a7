//! Leapfrog HMC with Metropolis correction and dual-averaging step-size
//! adaptation.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};

use crate::rng::SeededRng;
use crate::types::TrendSeries;
use crate::util::{mean, quantile_sorted, sorted_copy, variance};

use super::diagnostics::split_rhat;
use super::posterior::PosteriorDensity;
use super::{
    ParamDraws, ParamSummary, PosteriorSummary, SamplerConfig, SigmaSpec, TrendError,
    TrendModelSpec,
};

/// Energy error beyond which a transition is recorded as divergent.
const DIVERGENCE_ENERGY: f64 = 1000.0;
/// Dual-averaging target acceptance probability. Held above the 0.6-0.9
/// working band on purpose: integer score series are often near-collinear,
/// which funnels the sigma posterior, and a high target drives the adapted
/// step size toward stability in the funnel neck.
const TARGET_ACCEPT: f64 = 0.95;
/// R-hat threshold for the convergence warning.
const RHAT_WARN: f64 = 1.05;
/// Shrink applied to the adapted step size when warmup freezes.
const STEP_SAFETY: f64 = 0.8;
/// Numerical floor on log sigma, enforced as a reflective barrier.
///
/// Data with zero residual variance (all scores on an exact line) make the
/// sigma posterior improper: log sigma would drift to minus infinity and
/// the curvature would outrun any fixed step size. Truncating the support
/// at sigma = 0.05 keeps such inputs legal (sigma draws pile up at the
/// floor) while sitting an order of magnitude below the quantization
/// noise of integer scores, so it is invisible for data with any variance.
const LOG_SIGMA_FLOOR: f64 = -2.995732273553991; // ln(0.05)

/// One leapfrog trajectory of `steps` steps at step size `eps`, in place.
///
/// `inv_mass` is the diagonal inverse mass (per-coordinate posterior
/// variance estimate); position updates scale by it so one step size can
/// serve coordinates on very different scales. Positions beyond the
/// log-sigma floor are reflected back with the momentum component negated,
/// which targets the truncated posterior.
#[allow(clippy::needless_range_loop)]
fn leapfrog(
    density: &PosteriorDensity,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    inv_mass: &[f64],
    eps: f64,
    steps: usize,
) {
    let reflect = q.len() == 3;
    density.grad(q, grad);
    for _ in 0..steps {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
        for i in 0..q.len() {
            q[i] += eps * inv_mass[i] * p[i];
        }
        if reflect {
            while q[2] < LOG_SIGMA_FLOOR {
                q[2] = 2.0 * LOG_SIGMA_FLOOR - q[2];
                p[2] = -p[2];
            }
        }
        density.grad(q, grad);
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
    }
}

fn hamiltonian(logp: f64, p: &[f64], inv_mass: &[f64]) -> f64 {
    -logp + 0.5 * p.iter().zip(inv_mass).map(|(v, m)| m * v * v).sum::<f64>()
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64) -> Self {
        DualAveraging {
            mu: log(10.0 * eps0),
            log_eps: log(eps0),
            log_eps_bar: log(eps0),
            h_bar: 0.0,
            m: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        self.m += 1.0;
        let frac = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (TARGET_ACCEPT - accept_prob);
        self.log_eps = self.mu - sqrt(self.m) / Self::GAMMA * self.h_bar;
        let eta = libm::pow(self.m, -Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        exp(self.log_eps)
    }

    fn adapted(&self) -> f64 {
        exp(self.log_eps_bar)
    }
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    divergences: usize,
    accept_sum: f64,
    adapted_step: f64,
}

/// Running mean/variance accumulator for the mass-matrix window.
struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, q: &[f64]) {
        self.count += 1;
        for ((value, mean), m2) in q.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = value - *mean;
            *mean += delta / self.count as f64;
            *m2 += delta * (value - *mean);
        }
    }

    fn variances(&self) -> Option<Vec<f64>> {
        if self.count < 10 {
            return None;
        }
        Some(
            self.m2
                .iter()
                .map(|m2| (m2 / (self.count - 1) as f64).max(1e-8))
                .collect(),
        )
    }
}

fn run_chain(
    density: &PosteriorDensity,
    init: &[f64],
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> ChainOutput {
    let dim = density.dim();
    let mut q = init.to_vec();
    let mut logp = density.log_density(&q);
    let mut grad = vec![0.0; dim];
    let mut q_prop = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    let mut inv_mass = vec![1.0; dim];

    // Warmup phases: step size only while the chain finds the typical set,
    // then a variance window over the second half that sets the diagonal
    // mass, then step size again against the new metric.
    let window_start = cfg.warmup / 2;
    let mass_update_at = cfg.warmup * 85 / 100;
    let mut window = Welford::new(dim);

    let mut adapt = DualAveraging::new(cfg.step_size);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(cfg.samples);
    let mut divergences = 0usize;
    let mut accept_sum = 0.0;
    let mut eps = cfg.step_size;

    for iter in 0..cfg.warmup + cfg.samples {
        let warming = iter < cfg.warmup;
        for (slot, m) in p.iter_mut().zip(&inv_mass) {
            *slot = rng.standard_normal() / sqrt(*m);
        }
        let h0 = hamiltonian(logp, &p, &inv_mass);
        q_prop.copy_from_slice(&q);
        leapfrog(
            density,
            &mut q_prop,
            &mut p,
            &mut grad,
            &inv_mass,
            eps,
            cfg.leapfrog_steps,
        );
        let logp_prop = density.log_density(&q_prop);
        let h1 = hamiltonian(logp_prop, &p, &inv_mass);
        let energy_error = h1 - h0;

        let divergent = !energy_error.is_finite() || energy_error > DIVERGENCE_ENERGY;
        let accept_prob = if divergent {
            0.0
        } else {
            exp((-energy_error).min(0.0))
        };
        if !divergent && rng.uniform() < accept_prob {
            q.copy_from_slice(&q_prop);
            logp = logp_prop;
        }

        if warming {
            adapt.update(accept_prob);
            eps = adapt.current();
            if iter >= window_start && iter < mass_update_at {
                window.push(&q);
            }
            if iter + 1 == mass_update_at {
                if let Some(vars) = window.variances() {
                    inv_mass = vars;
                    // Coordinates are near unit scale under the new metric,
                    // so restart step-size adaptation from an O(1) step.
                    eps = 0.5;
                    adapt = DualAveraging::new(eps);
                }
            }
        } else {
            if divergent {
                divergences += 1;
            }
            accept_sum += accept_prob;
            draws.push(q.clone());
        }
        if iter + 1 == cfg.warmup {
            // Freeze with a safety margin: near-degenerate series put the
            // chain against the sigma floor, where curvature is at its
            // worst and the dual-averaging estimate has little headroom.
            eps = STEP_SAFETY * adapt.adapted();
        }
    }

    ChainOutput {
        draws,
        divergences,
        accept_sum,
        adapted_step: eps,
    }
}

fn param_names(spec: &TrendModelSpec) -> Vec<&'static str> {
    match spec.sigma {
        SigmaSpec::HalfNormal { .. } => vec!["alpha", "beta", "sigma"],
        SigmaSpec::Fixed(_) => vec!["alpha", "beta"],
    }
}

fn summarize_param(name: &'static str, chains: &[Vec<f64>]) -> Result<ParamSummary, TrendError> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let sorted = sorted_copy(&pooled);
    Ok(ParamSummary {
        name,
        mean: mean(&pooled),
        sd: sqrt(variance(&pooled)),
        q2_5: quantile_sorted(&sorted, 0.025),
        q25: quantile_sorted(&sorted, 0.25),
        q50: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        q97_5: quantile_sorted(&sorted, 0.975),
        rhat: split_rhat(chains)?,
    })
}

/// Draws from the trend posterior with leapfrog HMC.
///
/// Chains use independent streams derived from `cfg.seed`, so output is a
/// pure function of `(series, spec, cfg)`. Fails with `DivergentChains`
/// when more than 10% of post-warmup transitions diverge; a high R-hat only
/// clears the `converged` flag.
pub fn hmc_sample(
    series: &TrendSeries,
    spec: &TrendModelSpec,
    cfg: &SamplerConfig,
) -> Result<PosteriorSummary, TrendError> {
    spec.validate()?;
    cfg.validate()?;
    series.validate()?;

    let density = PosteriorDensity::new(series, spec);
    let dim = density.dim();

    // Deterministic init at the least-squares solution, jittered per
    // chain; starting in the typical set matters for short series, whose
    // posteriors are narrow valleys.
    let n = series.points.len() as f64;
    let t_mean = series
        .points
        .iter()
        .map(|&(t, _)| f64::from(t))
        .sum::<f64>()
        / n;
    let y_mean = series.points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut ss) = (0.0, 0.0, 0.0);
    for &(t, y) in &series.points {
        let td = f64::from(t) - t_mean;
        sxy += td * (y - y_mean);
        sxx += td * td;
    }
    let beta0 = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let alpha0 = y_mean - beta0 * t_mean;
    for &(t, y) in &series.points {
        let r = y - alpha0 - beta0 * f64::from(t);
        ss += r * r;
    }
    let resid_sd = sqrt(ss / (n - 2.0).max(1.0)).max(0.1);
    let mut center = vec![alpha0, beta0];
    if dim == 3 {
        center.push(log(resid_sd));
    }

    let mut chain_outputs = Vec::with_capacity(cfg.chains);
    for chain in 0..cfg.chains {
        let mut rng = SeededRng::with_stream(cfg.seed, chain as u64);
        let init: Vec<f64> = center
            .iter()
            .map(|c| c + 0.1 * rng.standard_normal())
            .collect();
        chain_outputs.push(run_chain(&density, &init, cfg, &mut rng));
    }

    let total = cfg.chains * cfg.samples;
    let divergences: usize = chain_outputs.iter().map(|c| c.divergences).sum();
    if divergences * 10 > total {
        return Err(TrendError::DivergentChains {
            divergent: divergences,
            total,
        });
    }

    let names = param_names(spec);
    let mut draws = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let chains: Vec<Vec<f64>> = chain_outputs
            .iter()
            .map(|c| {
                c.draws
                    .iter()
                    .map(|q| {
                        if *name == "sigma" {
                            exp(q[idx])
                        } else {
                            q[idx]
                        }
                    })
                    .collect()
            })
            .collect();
        draws.push(ParamDraws { name, chains });
    }

    let params: Vec<ParamSummary> = draws
        .iter()
        .map(|d| summarize_param(d.name, &d.chains))
        .collect::<Result<_, _>>()?;
    let converged = params.iter().all(|p| p.rhat <= RHAT_WARN);

    Ok(PosteriorSummary {
        chains: cfg.chains,
        samples_per_chain: cfg.samples,
        draws,
        params,
        divergences,
        accept_rate: chain_outputs.iter().map(|c| c.accept_sum).sum::<f64>() / total as f64,
        adapted_step_size: chain_outputs
            .last()
            .map_or(cfg.step_size, |c| c.adapted_step),
        converged,
    })
}

/// Validates a series and samples its trend posterior.
///
/// ```
/// use opinion_pulse_core::bayestrend::{fit_trend, SamplerConfig, TrendModelSpec};
/// use opinion_pulse_core::types::{ScoreKind, TrendSeries};
///
/// let series = TrendSeries {
///     label: "example.test".into(),
///     score_kind: ScoreKind::Unity,
///     points: vec![(1, 3.1), (2, 2.2), (3, 1.4), (4, 0.3), (5, -0.4)],
/// };
/// let cfg = SamplerConfig { warmup: 300, samples: 300, seed: 1, ..Default::default() };
/// let posterior = fit_trend(&series, &TrendModelSpec::default(), &cfg).unwrap();
/// let beta = posterior.param("beta").unwrap();
/// assert!(beta.mean < 0.0, "downward trend expected");
/// ```
pub fn fit_trend(
    series: &TrendSeries,
    spec: &TrendModelSpec,
    cfg: &SamplerConfig,
) -> Result<PosteriorSummary, TrendError> {
    series.validate()?;
    hmc_sample(series, spec, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayestrend::NormalPrior;
    use crate::types::ScoreKind;
    use alloc::string::ToString;

    fn series(points: Vec<(u32, f64)>) -> TrendSeries {
        TrendSeries {
            label: "test".to_string(),
            score_kind: ScoreKind::Unity,
            points,
        }
    }

    fn quick_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: 4,
            warmup: 400,
            samples: 400,
            step_size: 0.2,
            leapfrog_steps: 16,
            seed,
        }
    }

    #[test]
    fn leapfrog_is_reversible() {
        let s = series(vec![(1, 0.5), (2, 1.0), (3, 2.2), (4, 2.9), (5, 4.1)]);
        let density = PosteriorDensity::new(&s, &TrendModelSpec::default());
        let q0 = [0.4, 0.6, -0.2];
        let p0 = [0.3, -0.8, 0.5];

        let unit_mass = vec![1.0; 3];
        let mut q = q0.to_vec();
        let mut p = p0.to_vec();
        let mut grad = vec![0.0; 3];
        leapfrog(&density, &mut q, &mut p, &mut grad, &unit_mass, 0.05, 20);
        // Negate momentum and integrate back.
        for v in p.iter_mut() {
            *v = -*v;
        }
        leapfrog(&density, &mut q, &mut p, &mut grad, &unit_mass, 0.05, 20);
        for i in 0..3 {
            assert!((q[i] - q0[i]).abs() < 1e-10, "q[{i}] drifted: {}", q[i]);
            assert!((-p[i] - p0[i]).abs() < 1e-10, "p[{i}] drifted: {}", p[i]);
        }
    }

    #[test]
    fn energy_drift_shrinks_with_step_size() {
        let s = series(vec![(1, 0.5), (2, 1.0), (3, 2.2), (4, 2.9), (5, 4.1)]);
        let density = PosteriorDensity::new(&s, &TrendModelSpec::default());
        let q0 = [0.4, 0.6, -0.2];
        let p0 = [0.3, -0.8, 0.5];

        // Fixed trajectory length t = eps * steps; drift must fall
        // monotonically as eps shrinks (roughly eps^2 per halving).
        let unit_mass = vec![1.0; 3];
        let mut drifts = Vec::new();
        for &(eps, steps) in &[(0.02, 100usize), (0.01, 200), (0.005, 400), (0.0025, 800)] {
            let mut q = q0.to_vec();
            let mut p = p0.to_vec();
            let mut grad = vec![0.0; 3];
            let h0 = hamiltonian(density.log_density(&q), &p, &unit_mass);
            leapfrog(&density, &mut q, &mut p, &mut grad, &unit_mass, eps, steps);
            let h1 = hamiltonian(density.log_density(&q), &p, &unit_mass);
            drifts.push((h1 - h0).abs());
        }
        for pair in drifts.windows(2) {
            assert!(pair[1] < pair[0], "drift not decreasing: {drifts:?}");
        }
    }

    #[test]
    fn same_seed_identical_draws() {
        let s = series(vec![(1, 1.2), (2, 1.9), (3, 2.7), (4, 3.8), (5, 4.4)]);
        let spec = TrendModelSpec::default();
        let cfg = quick_cfg(99);
        let a = hmc_sample(&s, &spec, &cfg).unwrap();
        let b = hmc_sample(&s, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_draws(), cfg.chains * cfg.samples);
        for d in &a.draws {
            let count: usize = d.chains.iter().map(Vec::len).sum();
            assert_eq!(count, a.total_draws());
        }
    }

    #[test]
    fn conjugate_posterior_recovered_with_fixed_sigma() {
        // Known-posterior oracle: sigma fixed at 1 and near-flat priors make
        // the (alpha, beta) posterior an exact bivariate normal.
        let mut rng = SeededRng::new(5);
        let pts: Vec<(u32, f64)> = (1..=5u32)
            .flat_map(|t| {
                let mut rows = Vec::new();
                for _ in 0..3 {
                    rows.push((t, 1.0 + 0.5 * f64::from(t)));
                }
                rows
            })
            .map(|(t, m)| (t, m + rng.standard_normal()))
            .collect();
        let s = series(pts.clone());

        let prior_sd = 1e6;
        let spec = TrendModelSpec {
            prior_alpha: NormalPrior {
                mean: 0.0,
                sd: prior_sd,
            },
            prior_beta: NormalPrior {
                mean: 0.0,
                sd: prior_sd,
            },
            sigma: SigmaSpec::Fixed(1.0),
        };
        let cfg = SamplerConfig {
            chains: 4,
            warmup: 500,
            samples: 1000,
            ..quick_cfg(7)
        };
        let summary = hmc_sample(&s, &spec, &cfg).unwrap();

        // Closed form: precision = X'X/sigma^2 + I/prior_sd^2.
        let ridge = 1.0 / (prior_sd * prior_sd);
        let (mut s_tt, mut s_t, mut s_ty, mut s_y, n) = (0.0, 0.0, 0.0, 0.0, pts.len() as f64);
        for &(t, y) in &pts {
            let t = f64::from(t);
            s_tt += t * t;
            s_t += t;
            s_ty += t * y;
            s_y += y;
        }
        let a11 = n + ridge;
        let a12 = s_t;
        let a22 = s_tt + ridge;
        let det = a11 * a22 - a12 * a12;
        let mean_alpha = (a22 * s_y - a12 * s_ty) / det;
        let mean_beta = (a11 * s_ty - a12 * s_y) / det;

        for (name, truth) in [("alpha", mean_alpha), ("beta", mean_beta)] {
            let p = summary.param(name).unwrap();
            let draws = &summary
                .draws
                .iter()
                .find(|d| d.name == name)
                .unwrap()
                .chains;
            let mcse = p.sd / sqrt(crate::bayestrend::ess(draws));
            assert!(
                (p.mean - truth).abs() < 3.0 * mcse,
                "{name}: mean {} vs oracle {truth} (mcse {mcse})",
                p.mean
            );
            assert!(p.rhat < 1.05, "{name} rhat {}", p.rhat);
        }
    }

    #[test]
    fn noiseless_line_recovers_slope_and_intercept() {
        let pts: Vec<(u32, f64)> = (1..=5u32).map(|t| (t, 1.0 + 0.5 * f64::from(t))).collect();
        let s = series(pts);
        let summary = hmc_sample(&s, &TrendModelSpec::default(), &quick_cfg(3)).unwrap();
        let alpha = summary.param("alpha").unwrap();
        let beta = summary.param("beta").unwrap();
        assert!((alpha.mean - 1.0).abs() < 0.1, "alpha {}", alpha.mean);
        assert!((beta.mean - 0.5).abs() < 0.1, "beta {}", beta.mean);
    }

    #[test]
    fn flat_data_concentrates_beta_at_zero() {
        let pts: Vec<(u32, f64)> = (1..=5u32).map(|t| (t, 2.0)).collect();
        let s = series(pts);
        let summary = hmc_sample(&s, &TrendModelSpec::default(), &quick_cfg(21)).unwrap();
        let alpha = summary.param("alpha").unwrap();
        let beta = summary.param("beta").unwrap();
        assert!((alpha.mean - 2.0).abs() < 0.15, "alpha {}", alpha.mean);
        assert!(beta.mean.abs() < 0.1, "beta {}", beta.mean);
        assert!(summary.param("sigma").unwrap().q50 < 1.0);
    }

    #[test]
    fn single_point_is_a_precondition_failure() {
        let s = series(vec![(1, 2.0)]);
        assert!(matches!(
            fit_trend(&s, &TrendModelSpec::default(), &quick_cfg(0)),
            Err(TrendError::Precondition(_))
        ));
    }

    #[test]
    fn sigma_draws_positive_and_quantiles_monotone() {
        let mut rng = SeededRng::new(41);
        let pts: Vec<(u32, f64)> = (1..=5u32)
            .flat_map(|t| [(t, 0.0), (t, 0.0)])
            .map(|(t, _)| (t, 3.0 - 0.8 * f64::from(t) + 0.7 * rng.standard_normal()))
            .collect();
        let s = series(pts);
        let summary = hmc_sample(&s, &TrendModelSpec::default(), &quick_cfg(8)).unwrap();
        let sigma = summary.draws.iter().find(|d| d.name == "sigma").unwrap();
        assert!(sigma.chains.iter().flatten().all(|&v| v > 0.0));
        for p in &summary.params {
            assert!(p.q2_5 <= p.q25 && p.q25 <= p.q50 && p.q50 <= p.q75 && p.q75 <= p.q97_5);
        }
    }
}
