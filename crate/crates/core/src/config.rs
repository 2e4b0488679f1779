//! Run configuration file: one TOML table per stage. Command-line flags
//! override values read here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::exec::Execution;
use crate::hydraulics::SolverConfig;
use crate::report::EnergyConfig;
use crate::scada::{OffsetRules, ResampleMethod};
use crate::setpoint::SetpointConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Output grid step, s.
    pub step: f64,
    pub pressure_method: ResampleMethod,
    pub flow_method: ResampleMethod,
    /// L/s
    pub static_threshold: f64,
    /// s
    pub static_min_duration: f64,
    pub reference: Option<String>,
    /// Longest interior gap (in output steps) filled by interpolation.
    pub max_fill_gap: usize,
    pub min_windows: usize,
    /// m
    pub max_window_stddev: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let rules = OffsetRules::default();
        PreprocessConfig {
            step: 60.0,
            pressure_method: ResampleMethod::InterpolateLinear,
            flow_method: ResampleMethod::HoldLast,
            static_threshold: 10.0,
            static_min_duration: 900.0,
            reference: None,
            max_fill_gap: 4,
            min_windows: rules.min_windows,
            max_window_stddev: rules.max_stddev,
        }
    }
}

impl PreprocessConfig {
    pub fn offset_rules(&self) -> OffsetRules {
        OffsetRules { min_windows: self.min_windows, max_stddev: self.max_window_stddev }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub execution: Execution,
    pub solver: SolverConfig,
    pub preprocess: PreprocessConfig,
    pub calibration: CalibrationConfig,
    pub setpoint: SetpointConfig,
    pub energy: EnergyConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config `{path}`: {message}")]
    Parse { path: String, message: String },
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: p.clone(), source })?;
        Self::from_toml(&text).map_err(|message| ConfigError::Parse { path: p, message })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn sections_override() {
        let c = Config::from_toml(
            "execution = \"sequential\"\n[solver]\nmax_iterations = 7\n[calibration]\nmultistart = 3\nfd_relative_step = 0.002\n[setpoint]\nrelaxation = 0.5\n[energy]\ntariff = 0.2\n[preprocess]\nreference = \"SYS\"\n",
        )
        .unwrap();
        assert_eq!(c.execution, Execution::Sequential);
        assert_eq!(c.solver.max_iterations, 7);
        assert_eq!(c.calibration.multistart, 3);
        assert_eq!(c.calibration.optimizer.fd_relative_step, 0.002);
        assert_eq!(c.setpoint.relaxation, 0.5);
        assert_eq!(c.energy.tariff, 0.2);
        assert_eq!(c.preprocess.reference.as_deref(), Some("SYS"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("[solver]\nmax_iter = 3\n").is_err());
        assert!(Config::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }
}
