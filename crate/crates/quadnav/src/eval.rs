//! Deterministic policy evaluation: success scoring with a sustained-hover
//! criterion, thrust-gain and wind perturbations, trajectory recording with
//! a replay check, and perturbation sweeps.
//!
//! Perturbed and unperturbed evaluation share one code path; a zero-magnitude
//! perturbation multiplies thrust by exactly 1.0 and adds a zero force, so
//! its results are bit-identical to a plain run.

use crate::dynamics::RigidBodyState;
use crate::env::{Action, EnvConfig, Observation, Perturbation, VecEnv};
use crate::geom::Vec3;
use crate::net::GaussianPolicy;
use crate::seeding::{derive_key, domain, stream_rng};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Control steps the goal condition must hold consecutively for an episode
/// to count as a success (0.5 s at the 50 Hz control rate).
pub const SUCCESS_HOLD_STEPS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindMode {
    /// `wind_force` is applied as given, every episode.
    Constant,
    /// Direction redrawn per episode (uniform on the sphere), magnitude
    /// fixed at `|wind_force|`.
    RandomDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    /// Std of the multiplicative thrust gain error, drawn per control step:
    /// thrust <- thrust * (1 + eta), eta ~ N(0, std^2).
    pub thrust_noise_std: f64,
    /// Constant world-frame force in N.
    pub wind_force: Vec3,
    pub wind_mode: WindMode,
}

impl Default for PerturbationConfig {
    fn default() -> PerturbationConfig {
        PerturbationConfig {
            thrust_noise_std: 0.0,
            wind_force: Vec3::ZERO,
            wind_mode: WindMode::Constant,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thrust_noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "thrust_noise_std must be >= 0, got {}",
                self.thrust_noise_std
            )));
        }
        if !self.wind_force.is_finite() {
            return Err(Error::Config("wind_force must be finite".into()));
        }
        Ok(())
    }
}

/// Action selection hook; evaluation is generic over it so tests can inject
/// scripted behaviors.
pub trait Policy {
    fn act(&self, obs: &Observation) -> Action;
}

/// Deterministic wrapper: always the distribution mean, no sampling.
pub struct MeanPolicy<'a>(pub &'a GaussianPolicy);

impl Policy for MeanPolicy<'_> {
    fn act(&self, obs: &Observation) -> Action {
        let m = self.0.mean_action(obs.as_slice());
        Action([m[0], m[1], m[2], m[3]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub steps: u64,
    pub terminated: bool,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// Horizontal (xy) distance from the goal at episode end.
    pub final_lateral_distance: f64,
    /// Sim-time until the success hold was first established; `None` for
    /// unsuccessful episodes.
    pub time_to_goal_s: Option<f64>,
    pub episodic_return: f64,
    /// Per-episode sums of the four reward components.
    pub reward_components: [f64; 4],
}

impl EpisodeRecord {
    /// d/d0 at episode end; 1.0 when the episode started on the goal.
    pub fn final_distance_ratio(&self) -> f64 {
        if self.initial_distance > 0.0 {
            self.final_distance / self.initial_distance
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub step: u64,
    pub time_s: f64,
    /// State before the action was applied.
    pub state: RigidBodyState,
    pub action: [f64; 4],
    /// Reward terms produced by taking `action` from `state`.
    pub reward_components: [f64; 4],
    pub reward: f64,
    /// Distance to goal at `state` (before the action).
    pub distance: f64,
    /// distance / initial distance; exactly 1 on the first row.
    pub distance_ratio: f64,
    pub thrust_scale: f64,
    pub wind: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode: usize,
    pub goal: Vec3,
    pub steps: Vec<TrajectoryStep>,
}

pub const TRAJECTORY_MAGIC: &str = "# quadnav-trajectory v1";
pub const TRAJECTORY_HEADER: &str = "step,time_s,pos_x,pos_y,pos_z,quat_w,quat_x,quat_y,quat_z,\
lin_vel_x,lin_vel_y,lin_vel_z,ang_vel_x,ang_vel_y,ang_vel_z,\
action_thrust,action_roll,action_pitch,action_yaw,\
reward_lin_vel,reward_ang_vel,reward_distance,reward_goal,reward,\
distance,distance_ratio,thrust_scale,wind_x,wind_y,wind_z";

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(TRAJECTORY_MAGIC);
        out.push('\n');
        out.push_str(&format!("# goal {} {} {}\n", self.goal.x, self.goal.y, self.goal.z));
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for s in &self.steps {
            let st = &s.state;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.step, s.time_s,
                st.pos.x, st.pos.y, st.pos.z,
                st.orientation.w, st.orientation.x, st.orientation.y, st.orientation.z,
                st.lin_vel.x, st.lin_vel.y, st.lin_vel.z,
                st.ang_vel.x, st.ang_vel.y, st.ang_vel.z,
                s.action[0], s.action[1], s.action[2], s.action[3],
                s.reward_components[0], s.reward_components[1],
                s.reward_components[2], s.reward_components[3], s.reward,
                s.distance, s.distance_ratio, s.thrust_scale,
                s.wind.x, s.wind.y, s.wind.z
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Re-runs a trajectory's action and perturbation sequence from its recorded
/// initial state, returning the post-step position for every row. Row k+1's
/// recorded position must match the k-th replayed position.
pub fn replay_positions(env_cfg: &EnvConfig, traj: &Trajectory) -> Result<Vec<Vec3>> {
    let mut cfg = env_cfg.clone();
    cfg.num_envs = 1;
    let mut env = VecEnv::new(cfg)?;
    let first = traj.steps.first().ok_or_else(|| Error::Config("empty trajectory".into()))?;
    env.set_env_state(0, first.state.clone(), traj.goal);
    let mut positions = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        env.step_all_perturbed(
            &[Action(s.action)],
            &[Perturbation { thrust_scale: s.thrust_scale, wind_world: s.wind }],
        )?;
        positions.push(env.state(0).pos);
    }
    Ok(positions)
}

/// Index of the first step of the earliest run of `hold` consecutive true
/// flags, or `None` if no run is long enough.
pub fn success_streak(goal_flags: &[bool], hold: usize) -> Option<usize> {
    let mut run = 0usize;
    for (k, &g) in goal_flags.iter().enumerate() {
        if g {
            run += 1;
            if run >= hold {
                return Some(k + 1 - hold);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub perturbation: PerturbationConfig,
    pub episodes: Vec<EpisodeRecord>,
    /// One per episode when recording was requested, else empty.
    pub trajectories: Vec<Trajectory>,
}

impl EvalReport {
    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| e.success).count()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.episode_count() as f64
    }

    pub fn mean_final_distance(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.final_distance))
    }

    pub fn median_final_distance(&self) -> f64 {
        let mut d: Vec<f64> = self.episodes.iter().map(|e| e.final_distance).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    }

    pub fn mean_final_lateral_distance(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.final_lateral_distance))
    }

    /// Mean d/d0 at episode end over successful episodes; `None` without
    /// any success.
    pub fn mean_final_distance_ratio_success(&self) -> Option<f64> {
        let s: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.success)
            .map(|e| e.final_distance_ratio())
            .collect();
        if s.is_empty() {
            None
        } else {
            Some(mean(s.into_iter()))
        }
    }

    pub fn mean_time_to_goal_s(&self) -> Option<f64> {
        let t: Vec<f64> = self.episodes.iter().filter_map(|e| e.time_to_goal_s).collect();
        if t.is_empty() {
            None
        } else {
            Some(mean(t.into_iter()))
        }
    }

    pub fn mean_episodic_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.episodic_return))
    }

    pub fn mean_reward_components(&self) -> [f64; 4] {
        let n = self.episode_count() as f64;
        let mut sums = [0.0; 4];
        for e in &self.episodes {
            for (s, c) in sums.iter_mut().zip(e.reward_components) {
                *s += c;
            }
        }
        sums.map(|s| s / n)
    }

    pub fn csv_header() -> &'static str {
        "thrust_noise_std,wind_x,wind_y,wind_z,wind_mode,episodes,successes,success_rate,\
mean_final_distance,median_final_distance,mean_final_lateral_distance,\
mean_final_distance_ratio_success,mean_time_to_goal_s,mean_episodic_return,\
mean_reward_lin_vel,mean_reward_ang_vel,mean_reward_distance,mean_reward_goal"
    }

    pub fn csv_row(&self) -> String {
        let p = &self.perturbation;
        let mode = match p.wind_mode {
            WindMode::Constant => "constant",
            WindMode::RandomDirection => "random-direction",
        };
        let comps = self.mean_reward_components();
        format!(
            "{},{},{},{},{mode},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.thrust_noise_std,
            p.wind_force.x,
            p.wind_force.y,
            p.wind_force.z,
            self.episode_count(),
            self.successes(),
            self.success_rate(),
            self.mean_final_distance(),
            self.median_final_distance(),
            self.mean_final_lateral_distance(),
            self.mean_final_distance_ratio_success().unwrap_or(f64::NAN),
            self.mean_time_to_goal_s().unwrap_or(f64::NAN),
            self.mean_episodic_return(),
            comps[0],
            comps[1],
            comps[2],
            comps[3]
        )
    }

    pub fn to_csv(&self) -> String {
        format!("# quadnav-eval-report v1\n{}\n{}\n", EvalReport::csv_header(), self.csv_row())
    }

    pub fn text_summary(&self) -> String {
        let p = &self.perturbation;
        let mut out = String::new();
        out.push_str(&format!(
            "perturbation: thrust_noise_std={} wind=({}, {}, {}) N mode={:?}\n",
            p.thrust_noise_std, p.wind_force.x, p.wind_force.y, p.wind_force.z, p.wind_mode
        ));
        out.push_str(&format!(
            "episodes: {}   successes: {}   success_rate: {:.4}\n",
            self.episode_count(),
            self.successes(),
            self.success_rate()
        ));
        out.push_str(&format!(
            "final distance: mean {:.4} m, median {:.4} m, lateral mean {:.4} m\n",
            self.mean_final_distance(),
            self.median_final_distance(),
            self.mean_final_lateral_distance()
        ));
        match self.mean_final_distance_ratio_success() {
            Some(r) => out.push_str(&format!(
                "normalized final distance (successful episodes): {:.4}\n",
                r
            )),
            None => out.push_str("normalized final distance (successful episodes): n/a\n"),
        }
        match self.mean_time_to_goal_s() {
            Some(t) => out.push_str(&format!("mean time to goal: {:.3} s\n", t)),
            None => out.push_str("mean time to goal: n/a\n"),
        }
        let c = self.mean_reward_components();
        out.push_str(&format!("mean episodic return: {:.4}\n", self.mean_episodic_return()));
        out.push_str(&format!(
            "mean reward components: lin_vel {:.4}, ang_vel {:.4}, distance {:.4}, goal {:.4}\n",
            c[0], c[1], c[2], c[3]
        ));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

fn random_unit_vector(rng: &mut impl Rng) -> Vec3 {
    // Normalized Gaussian triple: uniform on the sphere.
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

/// Runs `n_episodes` independent deterministic episodes and aggregates them.
///
/// Each episode gets its own env-reset and perturbation streams derived from
/// (seed, episode index), so reports are reproducible and grid points of a
/// sweep are paired sample-for-sample.
pub fn evaluate(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    perturbation: &PerturbationConfig,
    n_episodes: usize,
    seed: u64,
    record_trajectories: bool,
) -> Result<EvalReport> {
    perturbation.validate()?;
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    let mut report = EvalReport {
        perturbation: *perturbation,
        episodes: Vec::with_capacity(n_episodes),
        trajectories: Vec::new(),
    };
    for ep in 0..n_episodes {
        let (record, traj) =
            run_episode(policy, env_cfg, perturbation, seed, ep, record_trajectories)?;
        report.episodes.push(record);
        if let Some(t) = traj {
            report.trajectories.push(t);
        }
    }
    Ok(report)
}

fn run_episode(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    perturbation: &PerturbationConfig,
    seed: u64,
    episode: usize,
    record: bool,
) -> Result<(EpisodeRecord, Option<Trajectory>)> {
    let mut cfg = env_cfg.clone();
    cfg.num_envs = 1;
    cfg.seed = derive_key(seed, &[domain::EVAL_PERTURB, episode as u64, 0]);
    let mut env = VecEnv::new(cfg)?;
    let mut rng = stream_rng(seed, &[domain::EVAL_PERTURB, episode as u64, 1]);

    let wind = match perturbation.wind_mode {
        WindMode::Constant => perturbation.wind_force,
        WindMode::RandomDirection => {
            random_unit_vector(&mut rng) * perturbation.wind_force.norm()
        }
    };
    let goal = env.goal(0);
    let d0 = (goal - env.state(0).pos).norm();
    let control_dt = env.config().control_dt();

    let mut goal_flags: Vec<bool> = Vec::new();
    let mut episodic_return = 0.0;
    let mut components = [0.0; 4];
    let mut traj = record.then(|| Trajectory { episode, goal, steps: Vec::new() });

    let (final_distance, final_lateral, terminated) = loop {
        let step_idx = goal_flags.len() as u64;
        let pre_state = env.state(0).clone();
        let obs = env.observation(0);
        let action = policy.act(&obs);
        let eta: f64 = rng.sample(StandardNormal);
        let pert = Perturbation {
            thrust_scale: 1.0 + perturbation.thrust_noise_std * eta,
            wind_world: wind,
        };
        let res = env.step_all_perturbed(&[action], &[pert])?;
        let r = &res[0];

        episodic_return += r.reward;
        for (c, rc) in components.iter_mut().zip(r.info.components) {
            *c += rc;
        }
        goal_flags.push(r.info.goal_reached);

        if let Some(t) = traj.as_mut() {
            let d = (goal - pre_state.pos).norm();
            t.steps.push(TrajectoryStep {
                step: step_idx,
                time_s: step_idx as f64 * control_dt,
                state: pre_state,
                action: action.0,
                reward_components: r.info.components,
                reward: r.reward,
                distance: d,
                distance_ratio: if d0 > 0.0 { d / d0 } else { 1.0 },
                thrust_scale: pert.thrust_scale,
                wind,
            });
        }

        if r.terminated || r.truncated {
            // The env has already auto-reset; recompute the pre-reset end
            // state (same inputs, same path, same floats) for the world-frame
            // lateral error, which the body-frame observation cannot give.
            let end = crate::env::advance_state(&pre_state, action, pert, env.config())
                .map_err(|d| Error::Divergence { env: 0, step: step_idx, detail: d.to_string() })?;
            let off = goal - end.pos;
            break (
                r.info.distance,
                (off.x * off.x + off.y * off.y).sqrt(),
                r.terminated,
            );
        }
    };

    let streak = success_streak(&goal_flags, SUCCESS_HOLD_STEPS);
    let record = EpisodeRecord {
        success: streak.is_some(),
        steps: goal_flags.len() as u64,
        terminated,
        initial_distance: d0,
        final_distance,
        final_lateral_distance: final_lateral,
        time_to_goal_s: streak.map(|s| (s + 1) as f64 * control_dt),
        episodic_return,
        reward_components: components,
    };
    Ok((record, traj))
}

/// One report per grid point, all sharing the same seed base so episode k
/// starts from the same initial conditions at every grid point.
pub fn sweep_perturbations(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    grid: &[PerturbationConfig],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if grid.is_empty() {
        return Err(Error::Config("perturbation grid must be non-empty".into()));
    }
    grid.iter()
        .map(|p| evaluate(policy, env_cfg, p, n_episodes, seed, false))
        .collect()
}

pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("# quadnav-eval-report v1\n");
    out.push_str(EvalReport::csv_header());
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
