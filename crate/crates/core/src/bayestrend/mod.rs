//! Bayesian linear trend regression for opinion scores.
//!
//! The model is `score ~ Normal(alpha + beta * t, sigma)` over a period
//! index `t = 1, 2, ...`. Posteriors are drawn with a from-scratch
//! Hamiltonian Monte Carlo sampler (leapfrog integration, Metropolis
//! correction, dual-averaging step-size adaptation) and summarised with
//! split-R-hat convergence diagnostics. `sigma` is sampled on the log scale
//! so the position space is unconstrained.

mod diagnostics;
mod hmc;
mod posterior;

pub use diagnostics::{ess, split_rhat};
pub use hmc::{fit_trend, hmc_sample};
pub use posterior::{grad_log_posterior, log_posterior, PosteriorDensity};

use alloc::vec::Vec;

use crate::types::SeriesError;

/// A normal prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

/// How the observation noise scale enters the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    /// `sigma ~ HalfNormal(scale)`, sampled as `log sigma` with the
    /// corresponding Jacobian term.
    HalfNormal { scale: f64 },
    /// Known noise scale; only `(alpha, beta)` are sampled. With wide
    /// normal priors this makes the posterior exactly conjugate, which the
    /// oracle tests exploit.
    Fixed(f64),
}

/// Priors and parameterization of the trend model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendModelSpec {
    pub prior_alpha: NormalPrior,
    pub prior_beta: NormalPrior,
    pub sigma: SigmaSpec,
}

impl Default for TrendModelSpec {
    /// Weakly-informative defaults: scores live in [-5, 5], so Normal(0, 10)
    /// intercept/slope priors and a HalfNormal(5) noise prior are near-flat.
    fn default() -> Self {
        TrendModelSpec {
            prior_alpha: NormalPrior {
                mean: 0.0,
                sd: 10.0,
            },
            prior_beta: NormalPrior {
                mean: 0.0,
                sd: 10.0,
            },
            sigma: SigmaSpec::HalfNormal { scale: 5.0 },
        }
    }
}

impl TrendModelSpec {
    pub fn validate(&self) -> Result<(), TrendError> {
        let sigma_ok = match self.sigma {
            SigmaSpec::HalfNormal { scale } => scale > 0.0,
            SigmaSpec::Fixed(v) => v > 0.0,
        };
        if self.prior_alpha.sd > 0.0 && self.prior_beta.sd > 0.0 && sigma_ok {
            Ok(())
        } else {
            Err(TrendError::InvalidSpec)
        }
    }
}

/// Sampler settings. Chains are independent given per-chain seeds derived
/// from `seed`, so the full output is a pure function of the inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Initial leapfrog step size; adapted during warmup.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            step_size: 0.2,
            leapfrog_steps: 16,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), TrendError> {
        if self.chains < 2 {
            return Err(TrendError::InvalidConfig("chains must be >= 2 for R-hat"));
        }
        if self.warmup < 1 || self.samples < 1 {
            return Err(TrendError::InvalidConfig("warmup and samples must be >= 1"));
        }
        if !self.step_size.is_finite() || self.step_size <= 0.0 || self.leapfrog_steps < 1 {
            return Err(TrendError::InvalidConfig(
                "step_size must be positive and leapfrog_steps >= 1",
            ));
        }
        Ok(())
    }
}

/// Post-warmup draws of one parameter, kept per chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraws {
    pub name: &'static str,
    pub chains: Vec<Vec<f64>>,
}

/// Moments, quantiles and convergence diagnostic of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q97_5: f64,
    pub rhat: f64,
}

impl ParamSummary {
    /// Central 95% credible interval.
    pub fn interval95(&self) -> (f64, f64) {
        (self.q2_5, self.q97_5)
    }
}

/// Full sampling output. `sigma` draws are reported on the natural scale,
/// so they are positive by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub chains: usize,
    pub samples_per_chain: usize,
    pub draws: Vec<ParamDraws>,
    pub params: Vec<ParamSummary>,
    /// Post-warmup divergent transitions across all chains.
    pub divergences: usize,
    /// Post-warmup mean Metropolis acceptance probability.
    pub accept_rate: f64,
    /// Step size after dual-averaging adaptation (last chain).
    pub adapted_step_size: f64,
    /// False when any R-hat exceeds 1.05; attached as a warning rather than
    /// an error so callers can still inspect the draws.
    pub converged: bool,
}

impl PosteriorSummary {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn total_draws(&self) -> usize {
        self.chains * self.samples_per_chain
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrendError {
    #[error("invalid model spec: prior scales must be positive")]
    InvalidSpec,
    #[error("invalid sampler config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Precondition(#[from] SeriesError),
    #[error("{divergent} of {total} post-warmup transitions diverged")]
    DivergentChains { divergent: usize, total: usize },
    #[error("need at least 2 chains of 4 draws each")]
    InsufficientDraws,
}
