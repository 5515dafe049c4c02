//! Run configuration: one JSON document drives the whole pipeline.
//!
//! Every field is optional with a documented default; unknown keys are
//! rejected so typos fail loudly. CLI flags override loaded values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline_vf::VfConfig;
use crate::denoiser::DenoiserConfig;
use crate::error::{GeodistError, Result};
use crate::sampler::{InitKind, Solver};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Input OBJ path.
    pub path: Option<PathBuf>,
    /// Surface samples used to estimate the normalization transform.
    pub n_norm_samples: usize,
    pub seed: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            path: None,
            n_norm_samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Heun,
}

impl From<SolverKind> for Solver {
    fn from(k: SolverKind) -> Solver {
        match k {
            SolverKind::Euler => Solver::Euler,
            SolverKind::Heun => Solver::Heun,
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = GeodistError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverKind::Euler),
            "heun" => Ok(SolverKind::Heun),
            other => Err(GeodistError::Config(format!(
                "unknown solver `{other}` (expected euler or heun)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum InitKindCfg {
    Gaussian,
    Uniform,
}

impl From<InitKindCfg> for InitKind {
    fn from(k: InitKindCfg) -> InitKind {
        match k {
            InitKindCfg::Gaussian => InitKind::Gaussian,
            InitKindCfg::Uniform => InitKind::Uniform,
        }
    }
}

impl std::str::FromStr for InitKindCfg {
    type Err = GeodistError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitKindCfg::Gaussian),
            "uniform" => Ok(InitKindCfg::Uniform),
            other => Err(GeodistError::Config(format!(
                "unknown init `{other}` (expected gaussian or uniform)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub solver: SolverKind,
    pub init: InitKindCfg,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 64,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            solver: SolverKind::Heun,
            init: InitKindCfg::Gaussian,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(GeodistError::Config("sampler.n_steps must be >= 1".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(GeodistError::Config(
                "sampler needs 0 < sigma_min < sigma_max".into(),
            ));
        }
        if !(self.rho > 0.0) {
            return Err(GeodistError::Config("sampler.rho must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule_params(&self) -> (f64, f64, f64) {
        (self.sigma_min, self.sigma_max, self.rho)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_points: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_points: 1_000_000,
            n_steps: 64,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.n_steps == 0 {
            return Err(GeodistError::Config(
                "eval.n_points and eval.n_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub denoiser: DenoiserConfig,
    pub training: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub baseline: VfConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GeodistError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| GeodistError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.n_norm_samples < 1000 {
            return Err(GeodistError::Config(
                "mesh.n_norm_samples must be at least 1000".into(),
            ));
        }
        self.denoiser.validate()?;
        self.training.validate()?;
        self.sampler.validate()?;
        self.eval.validate()?;
        self.baseline.validate()?;
        Ok(())
    }

    /// Stable short hash of the resolved configuration, for provenance lines.
    pub fn hash(&self) -> String {
        hash_of(self)
    }
}

/// CRC32 of a value's canonical JSON, as 8 hex chars.
pub fn hash_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    format!("{:08x}", crc32fast::hash(json.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"traning": {}}"#).unwrap_err();
        assert!(err.to_string().contains("traning"));
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"denoiser": {"channels": 64}}"#).unwrap();
        assert_eq!(cfg.denoiser.channels, 64);
        assert_eq!(cfg.denoiser.n_blocks, 6);
        assert_eq!(cfg.sampler.n_steps, 64);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"denoiser": {"channels": 4}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: RunConfig =
            serde_json::from_str(r#"{"sampler": {"sigma_min": 100.0}}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg: RunConfig =
            serde_json::from_str(r#"{"training": {"p_std": 0.0}}"#).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.sampler.n_steps = 32;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn solver_and_init_parse_from_str() {
        assert_eq!("heun".parse::<SolverKind>().unwrap(), SolverKind::Heun);
        assert!("rk4".parse::<SolverKind>().is_err());
        assert_eq!(
            "uniform".parse::<InitKindCfg>().unwrap(),
            InitKindCfg::Uniform
        );
    }
}
