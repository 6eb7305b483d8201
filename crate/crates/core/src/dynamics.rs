//! Coupled camera/target kinematics in the inverse-depth parameterization.
//!
//! State layout: `[x1, x2, x3, x_q, y_q, z_q, v_qx, v_qy, v_qz]` where
//! `(x1, x2, x3) = (X/Z, Y/Z, 1/Z)` is the camera-frame relative position
//! of the target and `r_q`, `V_q` are the target position and velocity in
//! the inertial frame. The target follows a constant-velocity model.

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::geometry::{Attitude, Vec3};

pub const STATE_DIM: usize = 9;
pub type StateVector = SVector<f64, STATE_DIM>;

/// Default guard on `|x3|` before dividing by it.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl SystemState {
    pub fn from_vector(v: &StateVector) -> Self {
        SystemState {
            x1: v[0],
            x2: v[1],
            x3: v[2],
            position: Vec3::new(v[3], v[4], v[5]),
            velocity: Vec3::new(v[6], v[7], v[8]),
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let p = &self.position;
        let q = &self.velocity;
        StateVector::from([self.x1, self.x2, self.x3, p.x, p.y, p.z, q.x, q.y, q.z])
    }

    /// Builds the state from a camera-frame relative position.
    pub fn from_relative(rel_cam: &Vec3, position: Vec3, velocity: Vec3) -> Self {
        SystemState {
            x1: rel_cam.x / rel_cam.z,
            x2: rel_cam.y / rel_cam.z,
            x3: 1.0 / rel_cam.z,
            position,
            velocity,
        }
    }

    pub fn features(&self) -> Vec3 {
        Vec3::new(self.x1, self.x2, self.x3)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Camera twist in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CameraCommand {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl CameraCommand {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Per-axis clamp of both the linear and angular parts.
    pub fn saturated(&self, max_linear: f64, max_angular: f64) -> Self {
        CameraCommand {
            linear: self.linear.map(|v| v.clamp(-max_linear, max_linear)),
            angular: self.angular.map(|w| w.clamp(-max_angular, max_angular)),
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        let (v, w) = (&self.linear, &self.angular);
        [v.x, v.y, v.z, w.x, w.y, w.z]
    }
}

/// Time derivative of the full state. The target velocity is rotated into
/// the camera frame for the image rows; the target rows stay inertial.
pub fn state_derivative(x: &SystemState, cmd: &CameraCommand, attitude: &Attitude) -> StateVector {
    let (x1, x2, x3) = (x.x1, x.x2, x.x3);
    let vq = attitude.world_to_camera(&x.velocity);
    let vc = &cmd.linear;
    let w = &cmd.angular;

    let zeta1 = w.z * x2 - w.y - w.y * x1 * x1 + w.x * x1 * x2;
    let zeta2 = -w.z * x1 + w.x + w.x * x2 * x2 - w.y * x1 * x2;
    let eta1 = (vc.z * x1 - vc.x) * x3;
    let eta2 = (vc.z * x2 - vc.y) * x3;

    let dx1 = vq.x * x3 - vq.z * x1 * x3 + zeta1 + eta1;
    let dx2 = vq.y * x3 - vq.z * x2 * x3 + zeta2 + eta2;
    let dx3 = -vq.z * x3 * x3 + vc.z * x3 * x3 - (w.y * x1 - w.x * x2) * x3;

    let v = &x.velocity;
    StateVector::from([dx1, dx2, dx3, v.x, v.y, v.z, 0.0, 0.0, 0.0])
}

/// One classical Runge-Kutta step. The attitude used at each stage is the
/// initial attitude advanced by the commanded angular rate.
pub fn integrate(
    x: &SystemState,
    cmd: &CameraCommand,
    attitude: &Attitude,
    dt: f64,
) -> Result<SystemState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let x0 = x.to_vector();
    let half = attitude.advanced(&cmd.angular, 0.5 * dt);
    let end = attitude.advanced(&cmd.angular, dt);
    let f =
        |v: StateVector, att: &Attitude| state_derivative(&SystemState::from_vector(&v), cmd, att);

    let k1 = f(x0, attitude);
    let k2 = f(x0 + k1 * (0.5 * dt), &half);
    let k3 = f(x0 + k2 * (0.5 * dt), &half);
    let k4 = f(x0 + k3 * dt, &end);
    let next = x0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    Ok(SystemState::from_vector(&next))
}

/// Camera-frame relative position `r_q/c = (x1/x3, x2/x3, 1/x3)`.
pub fn relative_position_from_state(x: &SystemState) -> Result<Vec3> {
    relative_position_guarded(x, DEPTH_EPSILON)
}

pub fn relative_position_guarded(x: &SystemState, depth_epsilon: f64) -> Result<Vec3> {
    if !(x.x3.abs() >= depth_epsilon) {
        return Err(Error::DegenerateDepth {
            x3: x.x3,
            guard: depth_epsilon,
        });
    }
    let z = 1.0 / x.x3;
    Ok(Vec3::new(x.x1 * z, x.x2 * z, z))
}
