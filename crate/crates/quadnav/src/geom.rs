//! Vector and quaternion math.
//!
//! Quaternions are scalar-first `(w, x, y, z)` with the Hamilton product
//! convention; a body orientation quaternion rotates body-frame vectors into
//! the world frame. Everything is `f64`; rotation helpers assume unit
//! quaternions (state quaternions are renormalized on every integration step).

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Componentwise containment test against an axis-aligned box.
    pub fn inside(self, min: Vec3, max: Vec3) -> bool {
        self.x >= min.x && self.x <= max.x
            && self.y >= min.y && self.y <= max.y
            && self.z >= min.z && self.z <= max.z
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit quaternion `(w, x, y, z)`, Hamilton convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    /// Rotation about world z by `yaw` radians (roll and pitch zero).
    pub fn from_yaw(yaw: f64) -> Quat {
        let h = 0.5 * yaw;
        Quat::new(h.cos(), 0.0, 0.0, h.sin())
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Rotates a body-frame vector into the world frame: `q ⊗ (0,v) ⊗ q*`.
    pub fn rotate(self, v: Vec3) -> Vec3 {
        let p = Quat::new(0.0, v.x, v.y, v.z);
        let r = self.mul(p).mul(self.conjugate());
        Vec3::new(r.x, r.y, r.z)
    }

    /// Rotates a world-frame vector into the body frame (inverse rotation).
    pub fn rotate_inv(self, v: Vec3) -> Vec3 {
        self.conjugate().rotate(v)
    }

    /// First-order integration of body-frame angular velocity over `dt`,
    /// renormalized: `q' = normalize(q + 0.5 dt (q ⊗ (0, ω)))`.
    pub fn integrate(self, omega_body: Vec3, dt: f64) -> Quat {
        let dq = self.mul(Quat::new(0.0, omega_body.x, omega_body.y, omega_body.z));
        let h = 0.5 * dt;
        Quat::new(
            self.w + h * dq.w,
            self.x + h * dq.x,
            self.y + h * dq.y,
            self.z + h * dq.z,
        )
        .normalize()
    }
}

/// Position of `target` relative to a frame at `pos` with orientation `q`,
/// expressed in that frame's body axes.
pub fn subtract_frame_transforms(pos: Vec3, q: Quat, target: Vec3) -> Vec3 {
    q.rotate_inv(target - pos)
}
