//! Command-line frontend: train, eval, sweep, plot, print-config.
//!
//! Exit codes: 0 success, 1 configuration or input error (bad config file,
//! bad checkpoint, schema mismatch), 2 runtime divergence (non-finite
//! simulation state or loss).

use clap::{Args, Parser, Subcommand};
use quadnav::checkpoint;
use quadnav::env::{ACTION_DIM, OBS_DIM};
use quadnav::eval::{self, MeanPolicy, PerturbationConfig, WindMode};
use quadnav::geom::Vec3;
use quadnav::net::GaussianPolicy;
use quadnav::plot;
use quadnav::ppo;
use quadnav::seeding::{domain, stream_rng};
use quadnav::{Error, Result, RunConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "quadnav", version, about = "Quadrotor navigation: simulation, training, evaluation")]
struct Cli {
    /// Configuration file (TOML); unset fields fall back to defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a navigation policy and write metrics + checkpoints
    Train(TrainArgs),
    /// Evaluate a checkpoint with deterministic (mean) actions
    Eval(EvalArgs),
    /// Evaluate a checkpoint across a perturbation grid
    Sweep(SweepArgs),
    /// Render a metrics log or trajectory CSV to an SVG line chart
    Plot(PlotArgs),
    /// Print the effective configuration after overrides
    PrintConfig(PrintConfigArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Continue from a checkpoint (metrics rows past it are dropped so the
    /// log matches an unbroken run)
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    episodes: usize,
    /// Std of the multiplicative thrust gain noise
    #[arg(long, value_name = "STD")]
    thrust_noise: Option<f64>,
    /// Wind force magnitude in N
    #[arg(long, value_name = "NEWTONS")]
    wind: Option<f64>,
    /// Wind direction (world frame, normalized internally)
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3, default_value = "1,0,0")]
    wind_dir: Vec3,
    /// Redraw the wind direction each episode, keeping the magnitude
    #[arg(long)]
    wind_random_dir: bool,
    /// Write one trajectory CSV per episode
    #[arg(long)]
    record_trajectories: bool,
}

#[derive(Args)]
struct SweepArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 64)]
    episodes: usize,
    /// Thrust noise std grid
    #[arg(long, value_delimiter = ',', default_value = "0,0.05", value_name = "STD,...")]
    thrust_noise: Vec<f64>,
    /// Wind magnitude grid in N
    #[arg(long, value_delimiter = ',', default_value = "0", value_name = "N,...")]
    wind: Vec<f64>,
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3, default_value = "1,0,0")]
    wind_dir: Vec3,
    #[arg(long)]
    wind_random_dir: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// metrics.csv or a trajectory CSV
    input: PathBuf,
    /// SVG output path; the plot-data CSV lands next to it
    #[arg(long, short = 'o', value_name = "SVG")]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = plot::DEFAULT_MAX_POINTS)]
    max_points: usize,
}

#[derive(Args)]
struct PrintConfigArgs {
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-field flag overrides, `--section.key value`, applied on top of the
/// config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "checkpoint-interval", value_name = "ITERS")]
    checkpoint_interval: Option<u64>,

    #[arg(long = "env.num-envs", value_name = "N")]
    env_num_envs: Option<usize>,
    #[arg(long = "env.physics-dt", value_name = "S")]
    env_physics_dt: Option<f64>,
    #[arg(long = "env.decimation", value_name = "N")]
    env_decimation: Option<u32>,
    #[arg(long = "env.episode-length", value_name = "STEPS")]
    env_episode_length: Option<u32>,
    #[arg(long = "env.workspace-min", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_workspace_min: Option<Vec3>,
    #[arg(long = "env.workspace-max", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_workspace_max: Option<Vec3>,
    #[arg(long = "env.goal-box-min", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_goal_box_min: Option<Vec3>,
    #[arg(long = "env.goal-box-max", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_goal_box_max: Option<Vec3>,
    #[arg(long = "env.spawn-box-min", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_spawn_box_min: Option<Vec3>,
    #[arg(long = "env.spawn-box-max", value_parser = parse_vec3, value_name = "X,Y,Z")]
    env_spawn_box_max: Option<Vec3>,
    #[arg(long = "env.thrust-to-weight", value_name = "RATIO")]
    env_thrust_to_weight: Option<f64>,
    #[arg(long = "env.moment-scale", value_name = "NM")]
    env_moment_scale: Option<f64>,
    #[arg(long = "env.w-lin-vel", value_name = "W")]
    env_w_lin_vel: Option<f64>,
    #[arg(long = "env.w-ang-vel", value_name = "W")]
    env_w_ang_vel: Option<f64>,
    #[arg(long = "env.w-distance", value_name = "W")]
    env_w_distance: Option<f64>,
    #[arg(long = "env.w-goal", value_name = "W")]
    env_w_goal: Option<f64>,
    /// Length scale of the tanh distance shaping
    #[arg(long = "env.alpha", value_name = "M")]
    env_alpha: Option<f64>,
    #[arg(long = "env.goal-radius", value_name = "M")]
    env_goal_radius: Option<f64>,
    #[arg(long = "env.goal-vel-threshold", value_name = "M/S")]
    env_goal_vel_threshold: Option<f64>,
    /// Scale the hover bonus by the control period (false pays it flat)
    #[arg(long = "env.goal-bonus-dt-scaled", value_name = "BOOL")]
    env_goal_bonus_dt_scaled: Option<bool>,
    #[arg(long = "env.mass", value_name = "KG")]
    env_mass: Option<f64>,
    #[arg(long = "env.inertia", value_parser = parse_vec3, value_name = "IXX,IYY,IZZ")]
    env_inertia: Option<Vec3>,
    #[arg(long = "env.gravity", value_name = "M/S2")]
    env_gravity: Option<f64>,

    #[arg(long = "ppo.rollout-length", value_name = "STEPS")]
    ppo_rollout_length: Option<usize>,
    #[arg(long = "ppo.epochs", value_name = "N")]
    ppo_epochs: Option<usize>,
    #[arg(long = "ppo.minibatches", value_name = "N")]
    ppo_minibatches: Option<usize>,
    #[arg(long = "ppo.clip-epsilon", value_name = "EPS")]
    ppo_clip_epsilon: Option<f64>,
    #[arg(long = "ppo.gamma", value_name = "GAMMA")]
    ppo_gamma: Option<f64>,
    #[arg(long = "ppo.gae-lambda", value_name = "LAMBDA")]
    ppo_gae_lambda: Option<f64>,
    #[arg(long = "ppo.entropy-coef", value_name = "C")]
    ppo_entropy_coef: Option<f64>,
    #[arg(long = "ppo.value-coef", value_name = "C")]
    ppo_value_coef: Option<f64>,
    #[arg(long = "ppo.max-grad-norm", value_name = "NORM")]
    ppo_max_grad_norm: Option<f64>,
    #[arg(long = "ppo.learning-rate", value_name = "LR")]
    ppo_learning_rate: Option<f64>,
    #[arg(long = "ppo.total-env-steps", value_name = "STEPS")]
    ppo_total_env_steps: Option<u64>,
    #[arg(long = "ppo.advantage-normalization", value_name = "BOOL")]
    ppo_advantage_normalization: Option<bool>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:expr, $target:expr) => {
                if let Some(v) = $field {
                    $target = v;
                }
            };
        }
        set!(self.checkpoint_interval, cfg.checkpoint_interval);
        set!(self.env_num_envs, cfg.env.num_envs);
        set!(self.env_physics_dt, cfg.env.physics_dt);
        set!(self.env_decimation, cfg.env.decimation);
        set!(self.env_episode_length, cfg.env.episode_length);
        set!(self.env_workspace_min, cfg.env.workspace_min);
        set!(self.env_workspace_max, cfg.env.workspace_max);
        set!(self.env_goal_box_min, cfg.env.goal_box_min);
        set!(self.env_goal_box_max, cfg.env.goal_box_max);
        set!(self.env_spawn_box_min, cfg.env.spawn_box_min);
        set!(self.env_spawn_box_max, cfg.env.spawn_box_max);
        set!(self.env_thrust_to_weight, cfg.env.thrust_to_weight);
        set!(self.env_moment_scale, cfg.env.moment_scale);
        set!(self.env_w_lin_vel, cfg.env.w_lin_vel);
        set!(self.env_w_ang_vel, cfg.env.w_ang_vel);
        set!(self.env_w_distance, cfg.env.w_distance);
        set!(self.env_w_goal, cfg.env.w_goal);
        set!(self.env_alpha, cfg.env.alpha);
        set!(self.env_goal_radius, cfg.env.goal_radius);
        set!(self.env_goal_vel_threshold, cfg.env.goal_vel_threshold);
        set!(self.env_goal_bonus_dt_scaled, cfg.env.goal_bonus_dt_scaled);
        set!(self.env_mass, cfg.env.body.mass);
        set!(self.env_inertia, cfg.env.body.inertia);
        set!(self.env_gravity, cfg.env.body.gravity);
        set!(self.ppo_rollout_length, cfg.ppo.rollout_length);
        set!(self.ppo_epochs, cfg.ppo.epochs);
        set!(self.ppo_minibatches, cfg.ppo.minibatches);
        set!(self.ppo_clip_epsilon, cfg.ppo.clip_epsilon);
        set!(self.ppo_gamma, cfg.ppo.gamma);
        set!(self.ppo_gae_lambda, cfg.ppo.gae_lambda);
        set!(self.ppo_entropy_coef, cfg.ppo.entropy_coef);
        set!(self.ppo_value_coef, cfg.ppo.value_coef);
        set!(self.ppo_max_grad_norm, cfg.ppo.max_grad_norm);
        set!(self.ppo_learning_rate, cfg.ppo.learning_rate);
        set!(self.ppo_total_env_steps, cfg.ppo.total_env_steps);
        set!(self.ppo_advantage_normalization, cfg.ppo.advantage_normalization);
    }
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| format!("bad number {p:?} in {s:?}"))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } | Error::NonFiniteLoss { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(args) => cmd_train(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Plot(args) => cmd_plot(args),
        Command::PrintConfig(args) => cmd_print_config(&cli, args),
    }
}

/// Config file + field overrides + global flags, in that precedence order.
fn effective_config(cli: &Cli, overrides: Option<&Overrides>) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(ov) = overrides {
        ov.apply(&mut cfg);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.normalize();
    Ok(cfg)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let cfg = effective_config(cli, Some(&args.overrides))?;
    cfg.validate()?;
    let total = cfg.ppo.iterations(cfg.env.num_envs);
    println!(
        "training: {} envs, {} env steps ({} iterations), seed {}, output {}",
        cfg.env.num_envs, cfg.ppo.total_env_steps, total, cfg.seed, cfg.output_dir
    );
    ppo::train(&cfg, args.resume.as_deref(), &mut |m| {
        println!(
            "iter {:>6}/{total}  env-steps {:>12}  mean-return {:>10.3}  goal-rate {:>6.3}",
            m.iteration, m.env_steps, m.mean_episodic_return, m.goal_rate
        );
    })?;
    println!("done: {}/metrics.csv, {}/checkpoint_latest.ckpt", cfg.output_dir, cfg.output_dir);
    Ok(())
}

/// Loads a checkpoint's policy, resolving its training config from --config,
/// then from config.toml beside the checkpoint, then from defaults. The
/// config's hash must match the one stored in the checkpoint.
fn load_policy(cli: &Cli, checkpoint: &Path) -> Result<(RunConfig, GaussianPolicy)> {
    let data = checkpoint::load(checkpoint)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let sibling = checkpoint.parent().unwrap_or_else(|| Path::new(".")).join("config.toml");
            if sibling.exists() {
                RunConfig::load(&sibling)?
            } else {
                RunConfig::default()
            }
        }
    };
    cfg.normalize();
    if cfg.hash() != data.config_hash {
        return Err(Error::Checkpoint(format!(
            "{} was trained with a different configuration (hash {}); pass --config \
             pointing at that run's config.toml",
            checkpoint.display(),
            data.config_hash
        )));
    }
    let mut rng = stream_rng(0, &[domain::NET_INIT]);
    let mut policy = GaussianPolicy::new(OBS_DIM, ACTION_DIM, &mut rng);
    if data.policy_params.len() != policy.param_count() {
        return Err(Error::Checkpoint(format!(
            "policy has {} parameters, checkpoint stores {}",
            policy.param_count(),
            data.policy_params.len()
        )));
    }
    policy.set_params_flat(&data.policy_params);
    Ok((cfg, policy))
}

fn eval_out_dir(cli: &Cli, checkpoint: &Path) -> PathBuf {
    match &cli.out {
        Some(out) => out.clone(),
        None => checkpoint.parent().unwrap_or_else(|| Path::new(".")).join("eval"),
    }
}

fn wind_vector(magnitude: f64, dir: Vec3) -> Result<Vec3> {
    let n = dir.norm();
    if n <= 1e-12 {
        return Err(Error::Config("wind direction must be a nonzero vector".into()));
    }
    Ok(dir * (magnitude / n))
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let (cfg, policy) = load_policy(cli, &args.checkpoint)?;
    let mut pert = cfg.eval;
    if let Some(std) = args.thrust_noise {
        pert.thrust_noise_std = std;
    }
    if let Some(w) = args.wind {
        pert.wind_force = wind_vector(w, args.wind_dir)?;
    }
    if args.wind_random_dir {
        pert.wind_mode = WindMode::RandomDirection;
    }
    let seed = cli.seed.unwrap_or(cfg.seed);

    let report = eval::evaluate(
        &MeanPolicy(&policy),
        &cfg.env,
        &pert,
        args.episodes,
        seed,
        args.record_trajectories,
    )?;

    let out_dir = eval_out_dir(cli, &args.checkpoint);
    std::fs::create_dir_all(&out_dir)?;
    checkpoint::write_atomic(&out_dir.join("eval_report.csv"), report.to_csv().as_bytes())?;
    let summary = report.text_summary();
    checkpoint::write_atomic(&out_dir.join("eval_summary.txt"), summary.as_bytes())?;
    for t in &report.trajectories {
        t.write(&out_dir.join(format!("trajectory_{:03}.csv", t.episode)))?;
    }
    print!("{summary}");
    println!("report: {}", out_dir.join("eval_report.csv").display());
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (cfg, policy) = load_policy(cli, &args.checkpoint)?;
    if args.thrust_noise.is_empty() || args.wind.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mode = if args.wind_random_dir { WindMode::RandomDirection } else { WindMode::Constant };
    let mut grid = Vec::new();
    for &std in &args.thrust_noise {
        for &w in &args.wind {
            grid.push(PerturbationConfig {
                thrust_noise_std: std,
                wind_force: wind_vector(w, args.wind_dir)?,
                wind_mode: mode,
            });
        }
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let reports = eval::sweep_perturbations(&MeanPolicy(&policy), &cfg.env, &grid, args.episodes, seed)?;

    let out_dir = eval_out_dir(cli, &args.checkpoint);
    std::fs::create_dir_all(&out_dir)?;
    let csv = eval::sweep_csv(&reports);
    checkpoint::write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    for r in &reports {
        println!(
            "thrust_noise {:>6}  wind {:>8} N  success_rate {:.4}  mean_final_distance {:.4} m",
            r.perturbation.thrust_noise_std,
            r.perturbation.wind_force.norm(),
            r.success_rate(),
            r.mean_final_distance()
        );
    }
    println!("table: {}", out_dir.join("sweep.csv").display());
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let svg = match &args.output {
        Some(path) => path.clone(),
        None => {
            let stem = args.input.file_stem().unwrap_or_default().to_string_lossy();
            args.input.with_file_name(format!("{stem}_plot.svg"))
        }
    };
    plot::plot_file(&args.input, &svg, args.max_points)?;
    println!("chart: {}", svg.display());
    println!("data:  {}", svg.with_extension("csv").display());
    Ok(())
}

fn cmd_print_config(cli: &Cli, args: &PrintConfigArgs) -> Result<()> {
    let cfg = effective_config(cli, Some(&args.overrides))?;
    print!("{}", cfg.to_toml());
    cfg.validate()
}
