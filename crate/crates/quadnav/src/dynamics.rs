//! Rigid body state and integration.
//!
//! Semi-implicit Euler: velocities update first, then poses integrate with the
//! updated velocities. Linear state lives in the world frame; angular velocity
//! and the actuation wrench (thrust along body +z, torque about body axes)
//! live in the body frame. The inertia tensor is diagonal.

use crate::geom::{Quat, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidBodyState {
    pub pos: Vec3,
    pub orientation: Quat,
    /// World-frame linear velocity, m/s.
    pub lin_vel: Vec3,
    /// Body-frame angular velocity, rad/s.
    pub ang_vel: Vec3,
}

impl RigidBodyState {
    pub fn at_rest(pos: Vec3, orientation: Quat) -> RigidBodyState {
        RigidBodyState { pos, orientation, lin_vel: Vec3::ZERO, ang_vel: Vec3::ZERO }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite()
            && self.orientation.is_finite()
            && self.lin_vel.is_finite()
            && self.ang_vel.is_finite()
    }
}

/// Mass properties and gravity. Defaults describe a 33 g micro quadrotor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyParams {
    /// kg
    pub mass: f64,
    /// Principal moments of inertia, kg m^2.
    pub inertia: Vec3,
    /// m/s^2, applied along world -z.
    pub gravity: f64,
}

impl Default for BodyParams {
    fn default() -> BodyParams {
        BodyParams {
            mass: 0.033,
            inertia: Vec3::new(1.4e-5, 1.4e-5, 2.17e-5),
            gravity: 9.81,
        }
    }
}

/// State diverged to a non-finite value during integration.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub state: RigidBodyState,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pos ({:.3e}, {:.3e}, {:.3e}), lin_vel ({:.3e}, {:.3e}, {:.3e}), ang_vel ({:.3e}, {:.3e}, {:.3e})",
            self.state.pos.x, self.state.pos.y, self.state.pos.z,
            self.state.lin_vel.x, self.state.lin_vel.y, self.state.lin_vel.z,
            self.state.ang_vel.x, self.state.ang_vel.y, self.state.ang_vel.z,
        )
    }
}

/// One integration step.
///
/// `thrust` acts along body +z; `torque_body` about the body axes;
/// `disturbance_world` is an extra world-frame force (wind and similar).
/// Errors if any component of the resulting state is non-finite.
pub fn step_rigid_body(
    state: &RigidBodyState,
    params: &BodyParams,
    thrust: f64,
    torque_body: Vec3,
    disturbance_world: Vec3,
    dt: f64,
) -> Result<RigidBodyState, Divergence> {
    let force_world = state.orientation.rotate(Vec3::new(0.0, 0.0, thrust)) + disturbance_world;
    let accel = force_world * (1.0 / params.mass) + Vec3::new(0.0, 0.0, -params.gravity);
    let lin_vel = state.lin_vel + accel * dt;
    let pos = state.pos + lin_vel * dt;

    let i = params.inertia;
    let w = state.ang_vel;
    let inertia_w = Vec3::new(i.x * w.x, i.y * w.y, i.z * w.z);
    let gyro = w.cross(inertia_w);
    let ang_acc = Vec3::new(
        (torque_body.x - gyro.x) / i.x,
        (torque_body.y - gyro.y) / i.y,
        (torque_body.z - gyro.z) / i.z,
    );
    let ang_vel = state.ang_vel + ang_acc * dt;
    let orientation = state.orientation.integrate(ang_vel, dt);

    let next = RigidBodyState { pos, orientation, lin_vel, ang_vel };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Divergence { state: next })
    }
}
