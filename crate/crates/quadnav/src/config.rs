//! Run configuration: one TOML document covering env, PPO and evaluation
//! settings, plus run-level fields (seed, output directory, checkpoint
//! cadence). Every field has a default, so a partial file or no file at all
//! is valid.

use crate::env::EnvConfig;
use crate::eval::PerturbationConfig;
use crate::ppo::PpoConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; `normalize` copies it into `env.seed` so env streams and
    /// net/rollout streams derive from the same root.
    pub seed: u64,
    pub output_dir: String,
    /// Checkpoint every this many iterations (a final one is always written).
    pub checkpoint_interval: u64,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: PerturbationConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 0,
            output_dir: "runs/default".into(),
            checkpoint_interval: 50,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            eval: PerturbationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.normalize();
        Ok(cfg)
    }

    /// Pushes run-level fields down to the sections that consume them.
    pub fn normalize(&mut self) {
        self.env.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be at least 1".into()));
        }
        self.env.validate()?;
        self.ppo.validate(self.env.num_envs)?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 identifying the experiment; stored in checkpoints so a resume
    /// or evaluation with a different config is rejected instead of silently
    /// diverging. Fields that cannot change any computed value of a training
    /// iteration are canonicalized away first: extending total_env_steps,
    /// moving the output directory, re-spacing checkpoints, or changing
    /// evaluation perturbations all keep the checkpoint valid.
    pub fn hash(&self) -> String {
        let mut id = self.clone();
        id.output_dir = String::new();
        id.checkpoint_interval = 0;
        id.ppo.total_env_steps = 0;
        id.eval = crate::eval::PerturbationConfig::default();
        let mut h = Sha256::new();
        h.update(id.to_toml().as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_toml().as_bytes())
    }
}
