//! Scenario files for simulation and parameter-recovery runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use opinion_pulse_core::opiniondyn::{ImpulseSchedule, OdeParams, Pulse};

/// A simulation scenario: model parameters, initial state, time grid and
/// the impulse schedule. The optional `fit` block turns it into a
/// parameter-recovery scenario: the trajectory simulated from `params`
/// becomes the observation and the fitter starts from `fit.init_params`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub params: OdeParams,
    pub x0: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    #[serde(default)]
    pub pulses: Vec<Pulse>,
    #[serde(default)]
    pub fit: Option<FitSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSection {
    pub init_params: OdeParams,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_loss_tol")]
    pub loss_tol: f64,
    /// Fit against x and E instead of x only.
    #[serde(default)]
    pub include_influence: bool,
    /// Observations from this CSV (`t,x,E`) instead of self-simulation.
    #[serde(default)]
    pub observed_csv: Option<String>,
}

fn default_learning_rate() -> f64 {
    0.05
}
fn default_max_iters() -> usize {
    5000
}
fn default_loss_tol() -> f64 {
    1e-10
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario {path} is not valid JSON: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let scenario: Scenario = serde_json::from_str(&raw).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            source: e,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.params
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let grid_ok = self.dt.is_finite() && self.dt > 0.0 && self.t1 > self.t0;
        if !grid_ok {
            return Err(ScenarioError::Invalid(
                "need dt > 0 and t1 > t0".to_string(),
            ));
        }
        self.schedule()
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> ImpulseSchedule {
        ImpulseSchedule {
            pulses: self.pulses.clone(),
        }
    }
}
