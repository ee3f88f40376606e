//! Checkpoint files: a short text header (version, config hash, counters,
//! array directory) followed by raw little-endian f64 arrays in directory
//! order. Everything needed to resume bit-exactly is stored as plain
//! numbers; no RNG state is serialized because all randomness is re-derived
//! from (seed, stream, counter) tuples.
//!
//! Integer quantities (step counts, episode counters, optimizer step) travel
//! as f64, which is exact for the magnitudes a run can reach.

use crate::dynamics::RigidBodyState;
use crate::env::EnvSnapshot;
use crate::geom::{Quat, Vec3};
use crate::{Error, Result};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &str = "quadnav-checkpoint v1";

#[derive(Clone, Debug)]
pub struct AdamSnapshot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct CheckpointData {
    pub config_hash: String,
    pub iteration: u64,
    pub policy_params: Vec<f64>,
    pub value_params: Vec<f64>,
    pub policy_adam: AdamSnapshot,
    pub value_adam: AdamSnapshot,
    pub env: EnvSnapshot,
    pub episode_return_accum: Vec<f64>,
    pub episode_length_accum: Vec<u64>,
    pub episode_any_goal: Vec<bool>,
    pub carry: [f64; 3],
}

/// Writes to a temp file in the target directory, then renames, so readers
/// never observe a half-written checkpoint.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("bad path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn flatten_env(env: &EnvSnapshot) -> Vec<(&'static str, Vec<f64>)> {
    let mut positions = Vec::new();
    let mut orientations = Vec::new();
    let mut lin_vels = Vec::new();
    let mut ang_vels = Vec::new();
    for s in &env.states {
        positions.extend([s.pos.x, s.pos.y, s.pos.z]);
        orientations.extend([s.orientation.w, s.orientation.x, s.orientation.y, s.orientation.z]);
        lin_vels.extend([s.lin_vel.x, s.lin_vel.y, s.lin_vel.z]);
        ang_vels.extend([s.ang_vel.x, s.ang_vel.y, s.ang_vel.z]);
    }
    let goals = env.goals.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
    vec![
        ("env_positions", positions),
        ("env_orientations", orientations),
        ("env_lin_vels", lin_vels),
        ("env_ang_vels", ang_vels),
        ("env_goals", goals),
        ("env_step_counts", env.step_counts.iter().map(|&c| c as f64).collect()),
        ("env_episode_counters", env.episode_counters.iter().map(|&c| c as f64).collect()),
    ]
}

pub fn save(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut arrays: Vec<(&'static str, Vec<f64>)> = vec![
        ("policy_params", data.policy_params.clone()),
        ("value_params", data.value_params.clone()),
        ("policy_adam_m", data.policy_adam.m.clone()),
        ("policy_adam_v", data.policy_adam.v.clone()),
        ("value_adam_m", data.value_adam.m.clone()),
        ("value_adam_v", data.value_adam.v.clone()),
        ("adam_steps", vec![data.policy_adam.t as f64, data.value_adam.t as f64]),
    ];
    arrays.extend(flatten_env(&data.env));
    arrays.push(("episode_return_accum", data.episode_return_accum.clone()));
    arrays.push((
        "episode_length_accum",
        data.episode_length_accum.iter().map(|&l| l as f64).collect(),
    ));
    arrays.push((
        "episode_any_goal",
        data.episode_any_goal.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect(),
    ));
    arrays.push(("carry_metrics", data.carry.to_vec()));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(format!("config_hash {}\n", data.config_hash).as_bytes());
    out.extend_from_slice(format!("iteration {}\n", data.iteration).as_bytes());
    out.extend_from_slice(format!("env_steps {}\n", data.env.total_env_steps).as_bytes());
    out.extend_from_slice(format!("num_envs {}\n", data.env.states.len()).as_bytes());
    for (name, arr) in &arrays {
        out.extend_from_slice(format!("array {name} {}\n", arr.len()).as_bytes());
    }
    out.extend_from_slice(b"data\n");
    for (_, arr) in &arrays {
        for x in arr {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

pub fn load(path: &Path) -> Result<CheckpointData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;

    let header_end = find_data_marker(&bytes)
        .ok_or_else(|| Error::Checkpoint(format!("{}: no data section", path.display())))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!(
            "{}: not a {MAGIC} file",
            path.display()
        )));
    }

    let mut config_hash = String::new();
    let mut iteration = 0u64;
    let mut env_steps = 0u64;
    let mut num_envs = 0usize;
    let mut dir: Vec<(String, usize)> = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("config_hash") => config_hash = parts.next().unwrap_or("").to_string(),
            Some("iteration") => iteration = parse_field(parts.next(), "iteration")?,
            Some("env_steps") => env_steps = parse_field(parts.next(), "env_steps")?,
            Some("num_envs") => num_envs = parse_field(parts.next(), "num_envs")?,
            Some("array") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("array line missing name".into()))?;
                let len: usize = parse_field(parts.next(), name)?;
                dir.push((name.to_string(), len));
            }
            Some(other) => {
                return Err(Error::Checkpoint(format!("unknown header field {other}")))
            }
            None => {}
        }
    }

    let total: usize = dir.iter().map(|(_, l)| l).sum();
    let payload = &bytes[header_end + 5..]; // past "data\n"
    if payload.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, directory expects {}",
            payload.len(),
            total * 8
        )));
    }

    let mut arrays = std::collections::HashMap::new();
    let mut offset = 0;
    for (name, len) in dir {
        let mut arr = Vec::with_capacity(len);
        for k in 0..len {
            let start = (offset + k) * 8;
            let mut b = [0u8; 8];
            b.copy_from_slice(&payload[start..start + 8]);
            arr.push(f64::from_le_bytes(b));
        }
        offset += len;
        arrays.insert(name, arr);
    }

    let mut take = |name: &str| -> Result<Vec<f64>> {
        arrays
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
    };

    let adam_steps = take("adam_steps")?;
    if adam_steps.len() != 2 {
        return Err(Error::Checkpoint("adam_steps must have 2 entries".into()));
    }
    let policy_adam = AdamSnapshot {
        m: take("policy_adam_m")?,
        v: take("policy_adam_v")?,
        t: adam_steps[0] as u64,
    };
    let value_adam = AdamSnapshot {
        m: take("value_adam_m")?,
        v: take("value_adam_v")?,
        t: adam_steps[1] as u64,
    };

    let positions = take("env_positions")?;
    let orientations = take("env_orientations")?;
    let lin_vels = take("env_lin_vels")?;
    let ang_vels = take("env_ang_vels")?;
    let goals_flat = take("env_goals")?;
    let step_counts = take("env_step_counts")?;
    let episode_counters = take("env_episode_counters")?;
    if positions.len() != 3 * num_envs
        || orientations.len() != 4 * num_envs
        || lin_vels.len() != 3 * num_envs
        || ang_vels.len() != 3 * num_envs
        || goals_flat.len() != 3 * num_envs
        || step_counts.len() != num_envs
        || episode_counters.len() != num_envs
    {
        return Err(Error::Checkpoint("env array lengths do not match num_envs".into()));
    }
    let vec3_at = |flat: &[f64], i: usize| Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
    let states: Vec<RigidBodyState> = (0..num_envs)
        .map(|i| RigidBodyState {
            pos: vec3_at(&positions, i),
            orientation: Quat::new(
                orientations[4 * i],
                orientations[4 * i + 1],
                orientations[4 * i + 2],
                orientations[4 * i + 3],
            ),
            lin_vel: vec3_at(&lin_vels, i),
            ang_vel: vec3_at(&ang_vels, i),
        })
        .collect();
    let goals: Vec<Vec3> = (0..num_envs).map(|i| vec3_at(&goals_flat, i)).collect();

    let env = EnvSnapshot {
        states,
        goals,
        step_counts: step_counts.iter().map(|&c| c as u32).collect(),
        episode_counters: episode_counters.iter().map(|&c| c as u64).collect(),
        total_env_steps: env_steps,
    };

    let carry_vec = take("carry_metrics")?;
    if carry_vec.len() != 3 {
        return Err(Error::Checkpoint("carry_metrics must have 3 entries".into()));
    }

    Ok(CheckpointData {
        config_hash,
        iteration,
        policy_params: take("policy_params")?,
        value_params: take("value_params")?,
        policy_adam,
        value_adam,
        env,
        episode_return_accum: take("episode_return_accum")?,
        episode_length_accum: take("episode_length_accum")?
            .iter()
            .map(|&l| l as u64)
            .collect(),
        episode_any_goal: take("episode_any_goal")?.iter().map(|&g| g != 0.0).collect(),
        carry: [carry_vec[0], carry_vec[1], carry_vec[2]],
    })
}

fn parse_field<T: std::str::FromStr>(value: Option<&str>, name: &str) -> Result<T> {
    value
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad header field {name}")))
}

fn find_data_marker(bytes: &[u8]) -> Option<usize> {
    let marker = b"\ndata\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + 1)
}
