//! Declarative run configuration: one flat JSON file drives every CLI
//! subcommand; command-line flags override individual fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::claims::{ClaimsError, MarketParams, SeverityKind, SeverityModel};
use crate::hjb::{GridSpec, SolverConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub x0: f64,
    pub n_paths: u64,
    /// Defaults to ceil(9.3 / beta) when absent.
    pub horizon: Option<f64>,
    pub seed: u64,
    /// Fixed integration step for surplus-dependent tabulated rules.
    pub time_step: Option<f64>,
    /// Initial surpluses for the cross-validation table.
    pub x_points: Vec<f64>,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            x0: 0.0,
            n_paths: 100_000,
            horizon: None,
            seed: 42,
            time_step: None,
            x_points: vec![0.0, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub market: MarketParams,
    pub severity: SeverityKind,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub simulation: SimulationSettings,
    /// Directory all artifacts are written to.
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            market: MarketParams {
                lambda: 1.0,
                c: 1.2,
                theta: 0.5,
                eta: 0.1,
                rho: 1.0,
                beta: 0.1,
            },
            severity: SeverityKind::Exponential { rate: 1.0 },
            grid: GridSpec::default(),
            solver: SolverConfig::default(),
            simulation: SimulationSettings::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn severity_model(&self) -> Result<SeverityModel, ConfigError> {
        Ok(SeverityModel::from_kind(self.severity.clone())?)
    }

    /// SHA-256 of the canonical JSON serialization; recorded in run metadata
    /// so artifacts are traceable to the exact configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"market": {"lambda": 2.0, "c": 3.0, "theta": 0.5, "eta": 0.1, "rho": 1.0, "beta": 0.1}}"#)
                .unwrap();
        assert_eq!(cfg.market.lambda, 2.0);
        assert_eq!(cfg.simulation.seed, 42);
        assert_eq!(cfg.grid.n_x, GridSpec::default().n_x);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.market.rho = 2.0;
        assert_ne!(a.hash(), b.hash());
    }
}
