//! PPO on the vectorized navigation env: synchronous rollouts, generalized
//! advantage estimation, clipped-surrogate updates with Adam, and the outer
//! training loop with metrics and checkpoints.
//!
//! The update treats timeouts and crashes differently: a terminated step
//! bootstraps with value 0, a truncated step bootstraps with the critic's
//! value of the true final state (captured at collection time), and both cut
//! the advantage recursion so no signal leaks across the auto-reset boundary.

use crate::checkpoint::{self, AdamSnapshot, CheckpointData};
use crate::config::RunConfig;
use crate::env::{Action, Observation, VecEnv, ACTION_DIM, OBS_DIM};
use crate::metrics::MetricsWriter;
use crate::net::{
    gaussian_entropy, gaussian_log_prob, gaussian_log_prob_backward, sample_gaussian, value_net,
    Adam, GaussianPolicy, Mlp,
};
use crate::seeding::{domain, stream_rng};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Control steps collected per env per iteration.
    pub rollout_length: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub total_env_steps: u64,
    pub advantage_normalization: bool,
}

impl Default for PpoConfig {
    fn default() -> PpoConfig {
        PpoConfig {
            rollout_length: 32,
            epochs: 5,
            minibatches: 4,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            learning_rate: 3e-4,
            total_env_steps: 10_000_000,
            advantage_normalization: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, num_envs: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.rollout_length == 0 || self.epochs == 0 || self.minibatches == 0 {
            return fail("rollout_length, epochs and minibatches must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_epsilon > 0.0) {
            return fail("clip_epsilon must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return fail("max_grad_norm must be positive".into());
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return fail("entropy_coef and value_coef must be >= 0".into());
        }
        let batch = self.rollout_length * num_envs;
        if batch % self.minibatches != 0 {
            return fail(format!(
                "rollout size {batch} (T={} x N={num_envs}) must divide evenly into {} minibatches",
                self.rollout_length, self.minibatches
            ));
        }
        Ok(())
    }

    pub fn iterations(&self, num_envs: usize) -> u64 {
        let per_iter = (self.rollout_length * num_envs) as u64;
        self.total_env_steps.div_ceil(per_iter)
    }
}

/// T x N transition store, time-major. `advantages`/`returns` are empty
/// until [`compute_gae`] runs.
pub struct RolloutBuffer {
    pub t: usize,
    pub n: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Critic value of the true final state, populated only where `truncated`.
    pub bootstrap_values: Vec<f64>,
    /// Critic value of the observation after the last step, one per env.
    pub tail_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    fn with_capacity(t: usize, n: usize) -> RolloutBuffer {
        RolloutBuffer {
            t,
            n,
            observations: Vec::with_capacity(t * n * OBS_DIM),
            actions: Vec::with_capacity(t * n * ACTION_DIM),
            log_probs: Vec::with_capacity(t * n),
            rewards: Vec::with_capacity(t * n),
            values: Vec::with_capacity(t * n),
            terminated: Vec::with_capacity(t * n),
            truncated: Vec::with_capacity(t * n),
            bootstrap_values: vec![0.0; t * n],
            tail_values: Vec::with_capacity(n),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-env episode accumulators; they survive across rollout boundaries and
/// are checkpointed so a resumed run reports identical metrics.
#[derive(Clone, Debug)]
pub struct EpisodeTracker {
    pub return_accum: Vec<f64>,
    pub length_accum: Vec<u64>,
    pub any_goal: Vec<bool>,
    completed_returns: Vec<f64>,
    completed_lengths: Vec<u64>,
    completed_goals: usize,
}

impl EpisodeTracker {
    pub fn new(num_envs: usize) -> EpisodeTracker {
        EpisodeTracker {
            return_accum: vec![0.0; num_envs],
            length_accum: vec![0; num_envs],
            any_goal: vec![false; num_envs],
            completed_returns: Vec::new(),
            completed_lengths: Vec::new(),
            completed_goals: 0,
        }
    }

    fn on_step(&mut self, i: usize, reward: f64, goal_reached: bool, done: bool) {
        self.return_accum[i] += reward;
        self.length_accum[i] += 1;
        self.any_goal[i] |= goal_reached;
        if done {
            self.completed_returns.push(self.return_accum[i]);
            self.completed_lengths.push(self.length_accum[i]);
            if self.any_goal[i] {
                self.completed_goals += 1;
            }
            self.return_accum[i] = 0.0;
            self.length_accum[i] = 0;
            self.any_goal[i] = false;
        }
    }

    /// Stats over episodes completed since the last drain; `None` if none.
    fn drain(&mut self) -> Option<(f64, f64, f64)> {
        let k = self.completed_returns.len();
        if k == 0 {
            return None;
        }
        let mean_ret = self.completed_returns.iter().sum::<f64>() / k as f64;
        let mean_len =
            self.completed_lengths.iter().map(|&l| l as f64).sum::<f64>() / k as f64;
        let goal_rate = self.completed_goals as f64 / k as f64;
        self.completed_returns.clear();
        self.completed_lengths.clear();
        self.completed_goals = 0;
        Some((mean_ret, mean_len, goal_rate))
    }
}

/// Runs T synchronous steps of every env, sampling from the policy and
/// recording values, including bootstrap values for truncated episodes.
pub fn collect_rollout(
    env: &mut VecEnv,
    policy: &GaussianPolicy,
    value: &Mlp,
    t_steps: usize,
    rng: &mut impl rand::Rng,
    tracker: &mut EpisodeTracker,
) -> Result<RolloutBuffer> {
    let n = env.num_envs();
    let mut buf = RolloutBuffer::with_capacity(t_steps, n);
    let mut obs_flat: Vec<f64> = flatten_observations(&env.observations());

    for t in 0..t_steps {
        let means = policy.mlp.forward(&obs_flat, n);
        let values = value.forward(&obs_flat, n);
        let actions = sample_gaussian(means.output(), n, &policy.log_std, rng);
        let log_probs = gaussian_log_prob(means.output(), n, &policy.log_std, &actions);

        let action_structs: Vec<Action> = (0..n)
            .map(|i| {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(&actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
                Action(a)
            })
            .collect();
        let results = env.step_all(&action_structs)?;

        buf.observations.extend_from_slice(&obs_flat);
        buf.actions.extend_from_slice(&actions);
        buf.log_probs.extend_from_slice(&log_probs);
        buf.values.extend_from_slice(&values.output());

        // Value the true final state of truncated envs in one batch.
        let mut trunc_rows: Vec<usize> = Vec::new();
        let mut trunc_obs: Vec<f64> = Vec::new();
        for (i, r) in results.iter().enumerate() {
            buf.rewards.push(r.reward);
            buf.terminated.push(r.terminated);
            buf.truncated.push(r.truncated);
            tracker.on_step(i, r.reward, r.info.goal_reached, r.terminated || r.truncated);
            if r.truncated && !r.terminated {
                let fo = r.info.final_observation.as_ref().expect("truncation stores final obs");
                trunc_rows.push(i);
                trunc_obs.extend_from_slice(fo.as_slice());
            }
        }
        if !trunc_rows.is_empty() {
            let v = value.forward(&trunc_obs, trunc_rows.len());
            for (k, &i) in trunc_rows.iter().enumerate() {
                buf.bootstrap_values[t * n + i] = v.output()[k];
            }
        }

        obs_flat.clear();
        for r in &results {
            obs_flat.extend_from_slice(r.observation.as_slice());
        }
    }
    buf.tail_values = value.forward(&obs_flat, n).output().to_vec();
    Ok(buf)
}

fn flatten_observations(obs: &[Observation]) -> Vec<f64> {
    let mut flat = Vec::with_capacity(obs.len() * OBS_DIM);
    for o in obs {
        flat.extend_from_slice(o.as_slice());
    }
    flat
}

/// Fills `advantages` and `returns`.
///
/// delta_t = r_t + gamma * V_next - V_t, where V_next is 0 for terminated
/// steps, the stored bootstrap for truncated steps, and the next (or tail)
/// value prediction otherwise. The recursion A_t = delta_t + gamma * lambda *
/// A_{t+1} cuts at every episode end.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let (t_steps, n) = (buf.t, buf.n);
    buf.advantages = vec![0.0; t_steps * n];
    buf.returns = vec![0.0; t_steps * n];
    for i in 0..n {
        let mut adv_next = 0.0;
        for t in (0..t_steps).rev() {
            let k = t * n + i;
            let terminated = buf.terminated[k];
            let truncated = buf.truncated[k];
            let v_next = if terminated {
                0.0
            } else if truncated {
                buf.bootstrap_values[k]
            } else if t + 1 < t_steps {
                buf.values[(t + 1) * n + i]
            } else {
                buf.tail_values[i]
            };
            let delta = buf.rewards[k] + gamma * v_next - buf.values[k];
            let cut = terminated || truncated;
            let adv = delta + gamma * lambda * if cut { 0.0 } else { adv_next };
            buf.advantages[k] = adv;
            buf.returns[k] = adv + buf.values[k];
            adv_next = adv;
        }
    }
}

/// In-place zero-mean unit-variance normalization over the whole rollout.
pub fn normalize_advantages(adv: &mut [f64]) {
    let m = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / m;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m;
    let denom = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / denom;
    }
}

/// One minibatch of gathered training data.
pub struct Minibatch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub rows: usize,
}

impl Minibatch {
    pub fn gather(buf: &RolloutBuffer, indices: &[usize]) -> Minibatch {
        let rows = indices.len();
        let mut mb = Minibatch {
            obs: Vec::with_capacity(rows * OBS_DIM),
            actions: Vec::with_capacity(rows * ACTION_DIM),
            old_log_probs: Vec::with_capacity(rows),
            advantages: Vec::with_capacity(rows),
            returns: Vec::with_capacity(rows),
            rows,
        };
        for &k in indices {
            mb.obs.extend_from_slice(&buf.observations[k * OBS_DIM..(k + 1) * OBS_DIM]);
            mb.actions.extend_from_slice(&buf.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM]);
            mb.old_log_probs.push(buf.log_probs[k]);
            mb.advantages.push(buf.advantages[k]);
            mb.returns.push(buf.returns[k]);
        }
        mb
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub total_loss: f64,
}

/// Forward-only loss evaluation; the finite-difference oracle in the tests
/// differentiates this exact function.
pub fn eval_losses(
    policy: &GaussianPolicy,
    value: &Mlp,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> LossStats {
    let m = mb.rows as f64;
    let means = policy.mlp.forward(&mb.obs, mb.rows);
    let new_lp = gaussian_log_prob(means.output(), mb.rows, &policy.log_std, &mb.actions);

    let mut policy_loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for r in 0..mb.rows {
        let ratio = (new_lp[r] - mb.old_log_probs[r]).exp();
        let a = mb.advantages[r];
        let unclipped = ratio * a;
        let clamped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * a;
        policy_loss -= unclipped.min(clamped) / m;
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            clipped += 1;
        }
        kl += (ratio - 1.0) - ratio.ln();
    }

    let values = value.forward(&mb.obs, mb.rows);
    let value_loss = values
        .output()
        .iter()
        .zip(&mb.returns)
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / m;

    let entropy = gaussian_entropy(&policy.log_std);
    LossStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / m,
        approx_kl: kl / m,
        total_loss: policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
    }
}

/// Analytic gradients of the total loss with respect to the flat policy
/// parameters (MLP then log_std) and flat value parameters, pre-clipping.
pub fn loss_gradients(
    policy: &GaussianPolicy,
    value: &Mlp,
    mb: &Minibatch,
    cfg: &PpoConfig,
) -> (LossStats, Vec<f64>, Vec<f64>) {
    let m = mb.rows as f64;
    let means = policy.mlp.forward(&mb.obs, mb.rows);
    let new_lp = gaussian_log_prob(means.output(), mb.rows, &policy.log_std, &mb.actions);

    // d(total)/d(log_prob_r): active only on the unclipped branch of min().
    let mut dlp = vec![0.0; mb.rows];
    let mut policy_loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for r in 0..mb.rows {
        let ratio = (new_lp[r] - mb.old_log_probs[r]).exp();
        let a = mb.advantages[r];
        let unclipped = ratio * a;
        let clamped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * a;
        policy_loss -= unclipped.min(clamped) / m;
        if unclipped <= clamped {
            // d(ratio * a)/d(log_prob) = ratio * a.
            dlp[r] = -unclipped / m;
        }
        if (ratio - 1.0).abs() > cfg.clip_epsilon {
            clipped += 1;
        }
        kl += (ratio - 1.0) - ratio.ln();
    }

    let (dmean, mut dlog_std) =
        gaussian_log_prob_backward(means.output(), mb.rows, &policy.log_std, &mb.actions, &dlp);
    // Entropy bonus: d(-coef * H)/d(log_std_i) = -coef.
    for d in &mut dlog_std {
        *d -= cfg.entropy_coef;
    }
    let mut policy_grads = policy.mlp.backward(&means, &dmean);
    policy_grads.extend_from_slice(&dlog_std);

    let values = value.forward(&mb.obs, mb.rows);
    let mut value_loss = 0.0;
    let dv: Vec<f64> = values
        .output()
        .iter()
        .zip(&mb.returns)
        .map(|(v, r)| {
            value_loss += (v - r) * (v - r) / m;
            cfg.value_coef * 2.0 * (v - r) / m
        })
        .collect();
    let value_grads = value.backward(&values, &dv);

    let entropy = gaussian_entropy(&policy.log_std);
    let stats = LossStats {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: clipped as f64 / m,
        approx_kl: kl / m,
        total_loss: policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy,
    };
    (stats, policy_grads, value_grads)
}

/// Scales both gradient vectors so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(policy_grads: &mut [f64], value_grads: &mut [f64], max_norm: f64) -> f64 {
    let sq: f64 = policy_grads.iter().chain(value_grads.iter()).map(|g| g * g).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in policy_grads.iter_mut().chain(value_grads.iter_mut()) {
            *g *= scale;
        }
    }
    norm
}

/// Mean loss statistics over every minibatch update of one iteration.
#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Runs `epochs` passes of shuffled minibatch updates over the rollout.
/// Advantage normalization (when enabled) happens once, over the whole
/// rollout, before any update.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    buf: &mut RolloutBuffer,
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    policy_adam: &mut Adam,
    value_adam: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut impl rand::Rng,
    iteration: u64,
) -> Result<UpdateStats> {
    assert!(!buf.advantages.is_empty(), "compute_gae must run before ppo_update");
    if cfg.advantage_normalization {
        normalize_advantages(&mut buf.advantages);
    }

    let batch = buf.len();
    let mb_size = batch / cfg.minibatches;
    let mut indices: Vec<usize> = (0..batch).collect();
    let mut totals = UpdateStats::default();
    let mut updates = 0usize;

    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for mb_idx in 0..cfg.minibatches {
            let slice = &indices[mb_idx * mb_size..(mb_idx + 1) * mb_size];
            let mb = Minibatch::gather(buf, slice);
            let (stats, mut pg, mut vg) = loss_gradients(policy, value, &mb, cfg);

            if !stats.total_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: format!(
                        "policy_loss {:.6e}, value_loss {:.6e}, entropy {:.6e}",
                        stats.policy_loss, stats.value_loss, stats.entropy
                    ),
                });
            }
            if pg.iter().chain(vg.iter()).any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: "non-finite gradient component".into(),
                });
            }

            clip_global_norm(&mut pg, &mut vg, cfg.max_grad_norm);

            let mut pp = policy.params_flat();
            policy_adam.step(&mut pp, &pg);
            policy.set_params_flat(&pp);
            policy.clamp_log_std();

            let mut vp = value.params_flat();
            value_adam.step(&mut vp, &vg);
            value.set_params_flat(&vp);

            totals.policy_loss += stats.policy_loss;
            totals.value_loss += stats.value_loss;
            totals.entropy += stats.entropy;
            totals.clip_fraction += stats.clip_fraction;
            totals.approx_kl += stats.approx_kl;
            updates += 1;
        }
    }

    let k = updates as f64;
    Ok(UpdateStats {
        policy_loss: totals.policy_loss / k,
        value_loss: totals.value_loss / k,
        entropy: totals.entropy / k,
        clip_fraction: totals.clip_fraction / k,
        approx_kl: totals.approx_kl / k,
    })
}

/// One metrics-log row. Episode statistics cover episodes completed during
/// the iteration, carrying the previous value forward when none completed;
/// `mean_reward_per_step` averages over the whole rollout instead.
#[derive(Clone, Debug)]
pub struct TrainMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_episodic_return: f64,
    pub mean_reward_per_step: f64,
    pub mean_episode_length: f64,
    pub goal_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub wall_clock_s: f64,
}

/// Full mutable training state; everything here round-trips through
/// checkpoints bit-exactly.
pub struct Trainer {
    pub cfg: RunConfig,
    pub env: VecEnv,
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub policy_adam: Adam,
    pub value_adam: Adam,
    pub tracker: EpisodeTracker,
    pub iteration: u64,
    /// Last reported (mean_episodic_return, mean_episode_length, goal_rate).
    pub carry: [f64; 3],
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Trainer> {
        let mut cfg = cfg;
        cfg.normalize();
        cfg.validate()?;
        let env = VecEnv::new(cfg.env.clone())?;
        let mut rng = stream_rng(cfg.seed, &[domain::NET_INIT]);
        let policy = GaussianPolicy::new(OBS_DIM, ACTION_DIM, &mut rng);
        let value = value_net(OBS_DIM, &mut rng);
        let policy_adam = Adam::new(policy.param_count(), cfg.ppo.learning_rate);
        let value_adam = Adam::new(value.param_count(), cfg.ppo.learning_rate);
        let tracker = EpisodeTracker::new(cfg.env.num_envs);
        Ok(Trainer {
            env,
            policy,
            value,
            policy_adam,
            value_adam,
            tracker,
            iteration: 0,
            carry: [0.0; 3],
            cfg,
        })
    }

    pub fn resume(cfg: RunConfig, checkpoint_path: &Path) -> Result<Trainer> {
        let mut cfg = cfg;
        cfg.normalize();
        cfg.validate()?;
        let data = checkpoint::load(checkpoint_path)?;
        let expected = cfg.hash();
        if data.config_hash != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was produced by a different config (hash {}, current {expected}); \
                 pass the original config",
                data.config_hash
            )));
        }
        Trainer::from_checkpoint(cfg, data)
    }

    /// Rebuilds a trainer from checkpoint data; the config must be the one
    /// the checkpoint was trained with (hash-checked by callers).
    pub fn from_checkpoint(cfg: RunConfig, data: CheckpointData) -> Result<Trainer> {
        let env = VecEnv::from_snapshot(cfg.env.clone(), data.env)?;
        let mut rng = stream_rng(cfg.seed, &[domain::NET_INIT]);
        let mut policy = GaussianPolicy::new(OBS_DIM, ACTION_DIM, &mut rng);
        let mut value = value_net(OBS_DIM, &mut rng);
        if data.policy_params.len() != policy.param_count()
            || data.value_params.len() != value.param_count()
        {
            return Err(Error::Checkpoint("parameter count mismatch".into()));
        }
        policy.set_params_flat(&data.policy_params);
        value.set_params_flat(&data.value_params);

        let restore_adam = |snap: AdamSnapshot, count: usize, lr: f64| -> Result<Adam> {
            if snap.m.len() != count || snap.v.len() != count {
                return Err(Error::Checkpoint("optimizer moment length mismatch".into()));
            }
            let mut adam = Adam::new(count, lr);
            adam.m = snap.m;
            adam.v = snap.v;
            adam.t = snap.t;
            Ok(adam)
        };
        let policy_adam = restore_adam(data.policy_adam, policy.param_count(), cfg.ppo.learning_rate)?;
        let value_adam = restore_adam(data.value_adam, value.param_count(), cfg.ppo.learning_rate)?;

        let n = cfg.env.num_envs;
        if data.episode_return_accum.len() != n
            || data.episode_length_accum.len() != n
            || data.episode_any_goal.len() != n
        {
            return Err(Error::Checkpoint("episode tracker length mismatch".into()));
        }
        let mut tracker = EpisodeTracker::new(n);
        tracker.return_accum = data.episode_return_accum;
        tracker.length_accum = data.episode_length_accum;
        tracker.any_goal = data.episode_any_goal;

        Ok(Trainer {
            env,
            policy,
            value,
            policy_adam,
            value_adam,
            tracker,
            iteration: data.iteration,
            carry: data.carry,
            cfg,
        })
    }

    pub fn checkpoint_data(&self) -> CheckpointData {
        CheckpointData {
            config_hash: self.cfg.hash(),
            iteration: self.iteration,
            policy_params: self.policy.params_flat(),
            value_params: self.value.params_flat(),
            policy_adam: AdamSnapshot {
                m: self.policy_adam.m.clone(),
                v: self.policy_adam.v.clone(),
                t: self.policy_adam.t,
            },
            value_adam: AdamSnapshot {
                m: self.value_adam.m.clone(),
                v: self.value_adam.v.clone(),
                t: self.value_adam.t,
            },
            env: self.env.snapshot(),
            episode_return_accum: self.tracker.return_accum.clone(),
            episode_length_accum: self.tracker.length_accum.clone(),
            episode_any_goal: self.tracker.any_goal.clone(),
            carry: self.carry,
        }
    }

    /// One collect / GAE / update cycle. Returns the metrics row.
    pub fn step_iteration(&mut self) -> Result<TrainMetrics> {
        self.iteration += 1;
        let t_steps = self.cfg.ppo.rollout_length;

        let mut rollout_rng = stream_rng(self.cfg.seed, &[domain::ROLLOUT, self.iteration]);
        let mut buf = collect_rollout(
            &mut self.env,
            &self.policy,
            &self.value,
            t_steps,
            &mut rollout_rng,
            &mut self.tracker,
        )?;
        compute_gae(&mut buf, self.cfg.ppo.gamma, self.cfg.ppo.gae_lambda);

        let reward_sum: f64 = buf.rewards.iter().sum();
        let mean_reward_per_step = reward_sum / buf.len() as f64;

        let mut shuffle_rng = stream_rng(self.cfg.seed, &[domain::SHUFFLE, self.iteration]);
        let stats = ppo_update(
            &mut buf,
            &mut self.policy,
            &mut self.value,
            &mut self.policy_adam,
            &mut self.value_adam,
            &self.cfg.ppo,
            &mut shuffle_rng,
            self.iteration,
        )?;

        if let Some((ret, len, goal)) = self.tracker.drain() {
            self.carry = [ret, len, goal];
        }

        Ok(TrainMetrics {
            iteration: self.iteration,
            env_steps: self.env.total_env_steps(),
            mean_episodic_return: self.carry[0],
            mean_reward_per_step,
            mean_episode_length: self.carry[1],
            goal_rate: self.carry[2],
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
            wall_clock_s: 0.0,
        })
    }
}

/// Full training entry point: loops iterations until the env-step budget,
/// appending metrics rows and writing periodic + final checkpoints into
/// `cfg.output_dir`. `resume` continues from a checkpoint, truncating any
/// metrics rows past it so the log stays identical to an unbroken run.
pub fn train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(&TrainMetrics),
) -> Result<()> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(cfg.clone(), path)?,
        None => Trainer::new(cfg.clone())?,
    };
    let cfg = trainer.cfg.clone();
    let out_dir = Path::new(&cfg.output_dir);
    std::fs::create_dir_all(out_dir)?;
    cfg.write_snapshot(&out_dir.join("config.toml"))?;

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = if trainer.iteration > 0 {
        MetricsWriter::resume(&metrics_path, trainer.iteration)?
    } else {
        MetricsWriter::create(&metrics_path)?
    };

    let total_iterations = cfg.ppo.iterations(cfg.env.num_envs);
    let started = Instant::now();
    while trainer.iteration < total_iterations {
        let mut row = trainer.step_iteration()?;
        row.wall_clock_s = started.elapsed().as_secs_f64();
        metrics.append(&row)?;
        progress(&row);

        let last = trainer.iteration == total_iterations;
        if trainer.iteration % cfg.checkpoint_interval == 0 || last {
            let name = format!("checkpoint_{:06}.ckpt", trainer.iteration);
            checkpoint::save(&out_dir.join(name), &trainer.checkpoint_data())?;
            checkpoint::save(&out_dir.join("checkpoint_latest.ckpt"), &trainer.checkpoint_data())?;
        }
    }
    Ok(())
}
