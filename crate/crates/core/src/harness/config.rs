//! Experiment configuration: a TOML document with `[system]`, `[alt]` and
//! `[rounding]` tables plus the sweep parameters at top level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::alternating::AltConfig;
use crate::rounding::RoundingConfig;
use crate::sysmodel::{db_to_linear, SystemConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub root_seed: u64,
    pub trials: usize,
    /// Δ draws per trial for the eavesdropper-SNR distribution.
    pub eve_samples: usize,
    pub eps_values: Vec<f64>,
    pub r_b_db_values: Vec<f64>,
    pub r_e_db_values: Vec<f64>,
    /// Carry `r_e σ_e²` in the worst-case eavesdropper constraint; overrides
    /// `system.eve_constraint_includes_sigma_e`.
    pub sigma_e_flag: bool,
    /// Warm-started re-solves allowed when rounding undercuts the relaxed value.
    pub refine_rounds: usize,
    /// Extra alternating runs from random rank-one `Q^(0)` per solve.
    pub restarts: usize,
    pub output_dir: PathBuf,
    pub system: SystemConfig,
    pub alt: AltConfig,
    pub rounding: RoundingConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            root_seed: 2024,
            trials: 100,
            eve_samples: 500,
            eps_values: vec![0.01],
            r_b_db_values: vec![3.0, 6.0, 9.0],
            r_e_db_values: vec![-3.0, 0.0, 3.0],
            sigma_e_flag: false,
            refine_rounds: 20,
            restarts: 2,
            output_dir: PathBuf::from("out"),
            system: SystemConfig::default(),
            alt: AltConfig::default(),
            rounding: RoundingConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.eve_samples == 0 {
            return bad("eve_samples must be >= 1".into());
        }
        for (name, list) in [
            ("eps_values", &self.eps_values),
            ("r_b_db_values", &self.r_b_db_values),
            ("r_e_db_values", &self.r_e_db_values),
        ] {
            if list.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
            if let Some(v) = list.iter().find(|v| !v.is_finite()) {
                return bad(format!("{name} contains non-finite value {v}"));
            }
        }
        if let Some(e) = self.eps_values.iter().find(|&&e| e < 0.0) {
            return bad(format!("eps_values must be >= 0, got {e}"));
        }
        self.base_system()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.alt
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.rounding
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// `[system]` with the σ_e² reading applied.
    pub fn base_system(&self) -> SystemConfig {
        SystemConfig {
            eve_constraint_includes_sigma_e: self.sigma_e_flag,
            ..self.system.clone()
        }
    }

    /// System at one sweep point.
    pub fn system_at(&self, eps: f64, r_b_db: f64, r_e_db: f64) -> SystemConfig {
        SystemConfig {
            eps,
            r_b: db_to_linear(r_b_db),
            r_e: db_to_linear(r_e_db),
            ..self.base_system()
        }
    }
}
