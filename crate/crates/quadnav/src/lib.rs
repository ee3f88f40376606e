//! Vectorized 6-DOF quadrotor simulation with an on-policy training stack.
//!
//! The crate is organized bottom-up:
//!
//! - [`geom`]: quaternion / vector math, all `f64`, scalar-first Hamilton quaternions
//! - [`dynamics`]: rigid body state and the semi-implicit Euler step
//! - [`env`]: the vectorized navigation task (observations, rewards, resets)
//! - [`net`]: MLPs with hand-derived backprop, Gaussian policy head, Adam
//! - [`ppo`]: rollout buffer, GAE, clipped-surrogate updates, the training loop
//! - [`eval`]: deterministic evaluation, trajectory recording, robustness sweeps
//!
//! Persistence (TOML config, binary checkpoints, CSV metrics, SVG plots) lives in
//! [`config`], [`checkpoint`], [`metrics`] and [`plot`].
//!
//! Determinism contract: for a fixed seed and config, results are bit-identical
//! across runs and across worker thread counts (`QUADNAV_THREADS`). All
//! randomness is derived from counters (env index, episode counter, iteration),
//! never from shared mutable RNG state; see [`seeding`].

pub mod checkpoint;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod geom;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod plot;
pub mod ppo;
pub mod seeding;

pub use config::RunConfig;
pub use env::{EnvConfig, VecEnv};
pub use eval::{EvalReport, PerturbationConfig};
pub use ppo::PpoConfig;

/// Crate-wide error type. Variants carry enough context to diagnose a failed
/// run from the message alone; the CLI maps them onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("simulation diverged (non-finite state) in env {env} at env-step {step}: {detail}")]
    Divergence { env: usize, step: u64, detail: String },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plot input error: {0}")]
    PlotInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
