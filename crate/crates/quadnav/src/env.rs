//! Vectorized point-to-point navigation task.
//!
//! Each environment is one rigid body chasing a goal position inside a bounded
//! workspace. Control runs at `physics_dt * decimation` (50 Hz with defaults):
//! an action is mapped to a wrench once, the wrench is applied for
//! `decimation` physics steps, then observation / reward / termination are
//! evaluated. Environments that finish are reset in place and report the
//! final reward together with the fresh observation.
//!
//! Determinism: every reset of env `i` draws from a stream keyed by
//! `(seed, env index, episode counter)`, so trajectories are independent of
//! how many sibling envs exist, of thread count, and of checkpoint/resume
//! boundaries.

use crate::dynamics::{step_rigid_body, BodyParams, RigidBodyState};
use crate::geom::{subtract_frame_transforms, Quat, Vec3};
use crate::parallel::map_chunks;
use crate::seeding::{domain, stream_rng};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const OBS_DIM: usize = 12;
pub const ACTION_DIM: usize = 4;

/// Envs per work chunk in `step_all`. Chunk boundaries depend only on
/// `num_envs`, which keeps parallel stepping bit-identical to sequential.
const ENV_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub num_envs: usize,
    /// Physics integration step, s.
    pub physics_dt: f64,
    /// Physics steps per control step.
    pub decimation: u32,
    /// Episode cap in control steps.
    pub episode_length: u32,
    pub workspace_min: Vec3,
    pub workspace_max: Vec3,
    pub goal_box_min: Vec3,
    pub goal_box_max: Vec3,
    pub spawn_box_min: Vec3,
    pub spawn_box_max: Vec3,
    /// Max thrust as a multiple of body weight.
    pub thrust_to_weight: f64,
    /// N m of torque per unit of moment action.
    pub moment_scale: f64,
    /// Penalty per (m/s)^2 of translational speed. Must be <= 0.
    pub w_lin_vel: f64,
    /// Penalty per (rad/s)^2 of body rate. Must be <= 0.
    pub w_ang_vel: f64,
    /// Gain on the distance shaping term 1 - tanh(d / alpha). Must be >= 0.
    pub w_distance: f64,
    /// Bonus while holding position inside the goal region. Must be >= 0.
    pub w_goal: f64,
    /// Distance scale of the shaping term, m.
    pub alpha: f64,
    /// Goal region radius, m.
    pub goal_radius: f64,
    /// Speed below which the goal counts as held, m/s.
    pub goal_vel_threshold: f64,
    /// The reward formula multiplies every term by dt, including the sparse
    /// goal bonus. Set false to pay the bonus unscaled instead.
    pub goal_bonus_dt_scaled: bool,
    pub body: BodyParams,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> EnvConfig {
        EnvConfig {
            num_envs: 4096,
            physics_dt: 0.01,
            decimation: 2,
            episode_length: 500,
            workspace_min: Vec3::new(-2.0, -2.0, 0.1),
            workspace_max: Vec3::new(2.0, 2.0, 3.0),
            goal_box_min: Vec3::new(-2.0, -2.0, 0.5),
            goal_box_max: Vec3::new(2.0, 2.0, 2.0),
            spawn_box_min: Vec3::new(-2.0, -2.0, 0.5),
            spawn_box_max: Vec3::new(2.0, 2.0, 2.0),
            thrust_to_weight: 1.9,
            moment_scale: 0.01,
            w_lin_vel: -0.05,
            w_ang_vel: -0.01,
            w_distance: 15.0,
            w_goal: 10.0,
            alpha: 0.8,
            goal_radius: 0.2,
            goal_vel_threshold: 0.1,
            goal_bonus_dt_scaled: true,
            body: BodyParams::default(),
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Control period: the dt used in the reward and for episode timing.
    pub fn control_dt(&self) -> f64 {
        self.physics_dt * f64::from(self.decimation)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_envs == 0 {
            return fail("num_envs must be at least 1".into());
        }
        if !(self.physics_dt.is_finite() && self.physics_dt > 0.0) {
            return fail(format!("physics_dt must be positive, got {}", self.physics_dt));
        }
        if self.decimation < 1 {
            return fail("decimation must be at least 1".into());
        }
        if self.episode_length < 1 {
            return fail("episode_length must be at least 1".into());
        }
        let box_ordered = |min: Vec3, max: Vec3| min.x <= max.x && min.y <= max.y && min.z <= max.z;
        if !box_ordered(self.workspace_min, self.workspace_max) {
            return fail("workspace box has min > max".into());
        }
        if !box_ordered(self.goal_box_min, self.goal_box_max) {
            return fail("goal box has min > max".into());
        }
        if !box_ordered(self.spawn_box_min, self.spawn_box_max) {
            return fail("spawn box has min > max".into());
        }
        let contained = |min: Vec3, max: Vec3| {
            min.inside(self.workspace_min, self.workspace_max)
                && max.inside(self.workspace_min, self.workspace_max)
        };
        if !contained(self.goal_box_min, self.goal_box_max) {
            return fail("goal box must lie inside the workspace box".into());
        }
        if !contained(self.spawn_box_min, self.spawn_box_max) {
            return fail("spawn box must lie inside the workspace box".into());
        }
        if self.w_lin_vel > 0.0 || self.w_ang_vel > 0.0 {
            return fail("velocity weights w_lin_vel / w_ang_vel must be <= 0".into());
        }
        if self.w_distance < 0.0 || self.w_goal < 0.0 {
            return fail("w_distance and w_goal must be >= 0".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.goal_radius > 0.0) {
            return fail("goal_radius must be positive".into());
        }
        if self.goal_vel_threshold < 0.0 {
            return fail("goal_vel_threshold must be >= 0".into());
        }
        if !(self.thrust_to_weight > 0.0) {
            return fail("thrust_to_weight must be positive".into());
        }
        if self.moment_scale < 0.0 {
            return fail("moment_scale must be >= 0".into());
        }
        if !(self.body.mass > 0.0) {
            return fail("body mass must be positive".into());
        }
        if !(self.body.inertia.x > 0.0 && self.body.inertia.y > 0.0 && self.body.inertia.z > 0.0) {
            return fail("body inertia components must be positive".into());
        }
        if !(self.body.gravity > 0.0) {
            return fail("gravity must be positive".into());
        }
        Ok(())
    }
}

/// Body-frame policy input, ordered: linear velocity (3), angular velocity
/// (3), projected gravity direction (3), goal position (3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Policy output in [-1,1]^4: collective thrust command then roll / pitch /
/// yaw moment commands. Values outside the range are clamped by the env.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action(pub [f64; ACTION_DIM]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrenchCommand {
    /// N along body +z.
    pub thrust: f64,
    /// N m about body axes.
    pub torque: Vec3,
}

/// External disturbance applied to one env for one control step. The same
/// sample holds across all physics sub-steps of that control step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    /// Multiplies commanded thrust (1.0 = nominal).
    pub thrust_scale: f64,
    /// World-frame force, N.
    pub wind_world: Vec3,
}

impl Default for Perturbation {
    fn default() -> Perturbation {
        Perturbation { thrust_scale: 1.0, wind_world: Vec3::ZERO }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RewardTerms {
    pub reward: f64,
    /// Weighted, dt-scaled components: lin-vel penalty, ang-vel penalty,
    /// distance shaping, goal bonus. Their plain sum equals `reward`.
    pub components: [f64; 4],
    pub distance: f64,
    pub goal_reached: bool,
}

#[derive(Clone, Debug)]
pub struct StepInfo {
    pub components: [f64; 4],
    pub distance: f64,
    pub goal_reached: bool,
    /// Observation of the true final state when the episode ended this step.
    /// The value bootstrap for truncated episodes reads it; terminated
    /// episodes bootstrap with zero.
    pub final_observation: Option<Observation>,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    /// Fresh post-reset observation when the episode ended, otherwise the
    /// observation of the new state.
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Clamps the raw action and maps it onto a wrench: thrust is the [0,1]
/// remap of a0 times max thrust (weight times thrust_to_weight), torques
/// scale linearly with moment_scale.
pub fn map_action(action: Action, cfg: &EnvConfig) -> WrenchCommand {
    let a = action.0;
    let max_thrust = cfg.body.mass * cfg.body.gravity * cfg.thrust_to_weight;
    WrenchCommand {
        thrust: (a[0].clamp(-1.0, 1.0) + 1.0) / 2.0 * max_thrust,
        torque: Vec3::new(
            a[1].clamp(-1.0, 1.0) * cfg.moment_scale,
            a[2].clamp(-1.0, 1.0) * cfg.moment_scale,
            a[3].clamp(-1.0, 1.0) * cfg.moment_scale,
        ),
    }
}

/// Assembles the 12-dim body-frame observation.
pub fn build_observation(state: &RigidBodyState, goal: Vec3) -> Observation {
    let q = state.orientation;
    let v = q.rotate_inv(state.lin_vel);
    let w = state.ang_vel;
    let g = q.rotate_inv(Vec3::new(0.0, 0.0, -1.0));
    let t = subtract_frame_transforms(state.pos, q, goal);
    Observation([v.x, v.y, v.z, w.x, w.y, w.z, g.x, g.y, g.z, t.x, t.y, t.z])
}

/// Composite reward, emitted once per control step.
///
/// reward = dt * (w1 |v|^2 + w2 |w|^2 + w3 (1 - tanh(d/alpha)) + w4 * held)
/// with dt the control period and `held` true while the body sits inside the
/// goal radius slower than the velocity threshold.
pub fn compute_reward(state: &RigidBodyState, goal: Vec3, cfg: &EnvConfig) -> RewardTerms {
    let dt = cfg.control_dt();
    let distance = (state.pos - goal).norm();
    let goal_reached = distance < cfg.goal_radius && state.lin_vel.norm() < cfg.goal_vel_threshold;
    let bonus_scale = if cfg.goal_bonus_dt_scaled { dt } else { 1.0 };
    let components = [
        dt * cfg.w_lin_vel * state.lin_vel.norm_squared(),
        dt * cfg.w_ang_vel * state.ang_vel.norm_squared(),
        dt * cfg.w_distance * (1.0 - (distance / cfg.alpha).tanh()),
        bonus_scale * cfg.w_goal * if goal_reached { 1.0 } else { 0.0 },
    ];
    RewardTerms {
        reward: components[0] + components[1] + components[2] + components[3],
        components,
        distance,
        goal_reached,
    }
}

/// Advances a state through one full control step: the action is mapped to a
/// wrench once and applied for `decimation` physics sub-steps. This is the
/// exact physics path `step_all` runs per env; evaluation replay reuses it.
pub fn advance_state(
    state: &RigidBodyState,
    action: Action,
    perturbation: Perturbation,
    cfg: &EnvConfig,
) -> std::result::Result<RigidBodyState, crate::dynamics::Divergence> {
    let wrench = map_action(action, cfg);
    let thrust = wrench.thrust * perturbation.thrust_scale;
    let mut s = *state;
    for _ in 0..cfg.decimation {
        s = step_rigid_body(
            &s,
            &cfg.body,
            thrust,
            wrench.torque,
            perturbation.wind_world,
            cfg.physics_dt,
        )?;
    }
    Ok(s)
}

/// Episode end conditions. Leaving the workspace (or numerical blowup)
/// terminates; hitting the step cap truncates; reaching the goal does
/// neither, so the policy keeps collecting hover experience at the goal.
pub fn check_termination(state: &RigidBodyState, step_count: u32, cfg: &EnvConfig) -> (bool, bool) {
    let terminated =
        !state.pos.inside(cfg.workspace_min, cfg.workspace_max) || !state.is_finite();
    let truncated = step_count >= cfg.episode_length;
    (terminated, truncated)
}

/// Full env state for checkpointing.
#[derive(Clone, Debug)]
pub struct EnvSnapshot {
    pub states: Vec<RigidBodyState>,
    pub goals: Vec<Vec3>,
    pub step_counts: Vec<u32>,
    pub episode_counters: Vec<u64>,
    pub total_env_steps: u64,
}

pub struct VecEnv {
    cfg: EnvConfig,
    states: Vec<RigidBodyState>,
    goals: Vec<Vec3>,
    step_counts: Vec<u32>,
    /// 0-based index of the episode each env is currently running; keys the
    /// reset stream together with the env index.
    episode_counters: Vec<u64>,
    total_env_steps: u64,
}

/// Per-env outcome of the read-only compute phase of `step_all`.
struct EnvOutcome {
    state: RigidBodyState,
    step_count: u32,
    terms: RewardTerms,
    terminated: bool,
    truncated: bool,
}

impl VecEnv {
    pub fn new(cfg: EnvConfig) -> Result<VecEnv> {
        cfg.validate()?;
        let n = cfg.num_envs;
        let mut env = VecEnv {
            cfg,
            states: vec![RigidBodyState::at_rest(Vec3::ZERO, Quat::IDENTITY); n],
            goals: vec![Vec3::ZERO; n],
            step_counts: vec![0; n],
            episode_counters: vec![0; n],
            total_env_steps: 0,
        };
        for i in 0..n {
            env.reset_env(i);
        }
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn num_envs(&self) -> usize {
        self.cfg.num_envs
    }

    pub fn total_env_steps(&self) -> u64 {
        self.total_env_steps
    }

    pub fn state(&self, idx: usize) -> &RigidBodyState {
        &self.states[idx]
    }

    pub fn goal(&self, idx: usize) -> Vec3 {
        self.goals[idx]
    }

    pub fn observation(&self, idx: usize) -> Observation {
        build_observation(&self.states[idx], self.goals[idx])
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.num_envs()).map(|i| self.observation(i)).collect()
    }

    /// Draws a fresh episode for env `idx`: spawn position uniform in the
    /// spawn box, identity attitude with uniform yaw, zero velocities, goal
    /// uniform in the goal box. Draw order is fixed and documented by the
    /// body of this function; changing it changes every seeded run.
    fn reset_env(&mut self, idx: usize) {
        let mut rng = stream_rng(
            self.cfg.seed,
            &[domain::ENV_RESET, idx as u64, self.episode_counters[idx]],
        );
        let uniform = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
            rng.gen_range(lo..=hi)
        };
        let pos = Vec3::new(
            uniform(&mut rng, self.cfg.spawn_box_min.x, self.cfg.spawn_box_max.x),
            uniform(&mut rng, self.cfg.spawn_box_min.y, self.cfg.spawn_box_max.y),
            uniform(&mut rng, self.cfg.spawn_box_min.z, self.cfg.spawn_box_max.z),
        );
        let yaw = uniform(&mut rng, -std::f64::consts::PI, std::f64::consts::PI);
        let goal = Vec3::new(
            uniform(&mut rng, self.cfg.goal_box_min.x, self.cfg.goal_box_max.x),
            uniform(&mut rng, self.cfg.goal_box_min.y, self.cfg.goal_box_max.y),
            uniform(&mut rng, self.cfg.goal_box_min.z, self.cfg.goal_box_max.z),
        );
        self.states[idx] = RigidBodyState::at_rest(pos, Quat::from_yaw(yaw));
        self.goals[idx] = goal;
        self.step_counts[idx] = 0;
    }

    /// Places env `idx` at an exact state with a fixed goal as a fresh
    /// episode. Used for trajectory replay and scripted tests.
    pub fn set_env_state(&mut self, idx: usize, state: RigidBodyState, goal: Vec3) {
        self.states[idx] = state;
        self.goals[idx] = goal;
        self.step_counts[idx] = 0;
    }

    /// One synchronous control step of every env with nominal conditions.
    pub fn step_all(&mut self, actions: &[Action]) -> Result<Vec<StepResult>> {
        let identity = vec![Perturbation::default(); self.num_envs()];
        self.step_all_perturbed(actions, &identity)
    }

    /// One synchronous control step with per-env disturbances. The nominal
    /// path is this same code with identity perturbations, so a
    /// zero-magnitude disturbance study is bit-identical to a plain run.
    pub fn step_all_perturbed(
        &mut self,
        actions: &[Action],
        perturbations: &[Perturbation],
    ) -> Result<Vec<StepResult>> {
        let n = self.num_envs();
        assert_eq!(actions.len(), n, "one action per environment");
        assert_eq!(perturbations.len(), n, "one perturbation per environment");

        // Compute phase: read-only, chunked across workers.
        let chunks = map_chunks(n, ENV_CHUNK, |s, e| {
            let mut out = Vec::with_capacity(e - s);
            for i in s..e {
                out.push(self.step_one(i, actions[i], perturbations[i]));
            }
            out
        });

        // Commit phase: sequential, applies mutations and resets in env order.
        let mut results = Vec::with_capacity(n);
        for (i, outcome) in chunks.into_iter().flatten().enumerate() {
            let outcome = outcome?;
            let done = outcome.terminated || outcome.truncated;
            let final_observation =
                done.then(|| build_observation(&outcome.state, self.goals[i]));
            self.states[i] = outcome.state;
            self.step_counts[i] = outcome.step_count;
            if done {
                self.episode_counters[i] += 1;
                self.reset_env(i);
            }
            results.push(StepResult {
                observation: self.observation(i),
                reward: outcome.terms.reward,
                terminated: outcome.terminated,
                truncated: outcome.truncated,
                info: StepInfo {
                    components: outcome.terms.components,
                    distance: outcome.terms.distance,
                    goal_reached: outcome.terms.goal_reached,
                    final_observation,
                },
            });
        }
        self.total_env_steps += n as u64;
        Ok(results)
    }

    fn step_one(&self, i: usize, action: Action, perturbation: Perturbation) -> Result<EnvOutcome> {
        let state = advance_state(&self.states[i], action, perturbation, &self.cfg).map_err(
            |d| Error::Divergence {
                env: i,
                step: self.total_env_steps,
                detail: d.to_string(),
            },
        )?;
        let step_count = self.step_counts[i] + 1;
        let (terminated, truncated) = check_termination(&state, step_count, &self.cfg);
        let terms = compute_reward(&state, self.goals[i], &self.cfg);
        Ok(EnvOutcome { state, step_count, terms, terminated, truncated })
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            states: self.states.clone(),
            goals: self.goals.clone(),
            step_counts: self.step_counts.clone(),
            episode_counters: self.episode_counters.clone(),
            total_env_steps: self.total_env_steps,
        }
    }

    /// Rebuilds an env mid-run from a snapshot; the inverse of [`snapshot`].
    ///
    /// [`snapshot`]: VecEnv::snapshot
    pub fn from_snapshot(cfg: EnvConfig, snap: EnvSnapshot) -> Result<VecEnv> {
        cfg.validate()?;
        let n = cfg.num_envs;
        if snap.states.len() != n
            || snap.goals.len() != n
            || snap.step_counts.len() != n
            || snap.episode_counters.len() != n
        {
            return Err(Error::Config(format!(
                "snapshot is for {} envs, config asks for {n}",
                snap.states.len()
            )));
        }
        Ok(VecEnv {
            cfg,
            states: snap.states,
            goals: snap.goals,
            step_counts: snap.step_counts,
            episode_counters: snap.episode_counters,
            total_env_steps: snap.total_env_steps,
        })
    }
}
