//! Image-based visual servoing on the feature vector `s = (x1, x2, x3)`
//! with target-velocity feedforward.
//!
//! The lateral camera velocity holds a side-view bearing to the target; the
//! remaining five twist components come from the pseudo-inverse of the
//! interaction matrix with the `v_cx` column removed.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{SMatrix, SVector, SVD};
use serde::{Deserialize, Serialize};

use crate::dynamics::CameraCommand;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Vec3};

pub type InteractionMatrix = SMatrix<f64, 3, 6>;
pub type ReducedInteractionMatrix = SMatrix<f64, 3, 5>;

/// Singular values below this are treated as zero in the pseudo-inverse.
pub const SIGMA_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Feedback gain λ (1/s).
    pub gain: f64,
    /// Expected distance to the target (m).
    pub d_exp: f64,
    /// Expected bearing of the camera seen from the target (rad).
    pub psi_exp: f64,
    /// Desired normalized image position `(x1*, x2*)`.
    pub desired_center: [f64; 2],
    /// Per-axis limit on `|V_c|` (m/s).
    pub max_linear: f64,
    /// Per-axis limit on `|ω_c|` (rad/s).
    pub max_angular: f64,
    /// Inject the estimated target velocity.
    pub feedforward: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            gain: 0.5,
            d_exp: 5.0,
            psi_exp: FRAC_PI_2,
            desired_center: [0.0, 0.0],
            max_linear: 8.0,
            max_angular: 2.0,
            feedforward: true,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::config("controller.gain", "must be > 0"));
        }
        if !(self.d_exp > 0.0 && self.d_exp.is_finite()) {
            return Err(Error::config("controller.d_exp", "must be > 0"));
        }
        if !self.psi_exp.is_finite() {
            return Err(Error::config("controller.psi_exp", "must be finite"));
        }
        if !self.desired_center.iter().all(|v| v.is_finite()) {
            return Err(Error::config("controller.desired_center", "must be finite"));
        }
        if !(self.max_linear > 0.0) {
            return Err(Error::config("controller.max_linear", "must be > 0"));
        }
        if !(self.max_angular > 0.0) {
            return Err(Error::config("controller.max_angular", "must be > 0"));
        }
        Ok(())
    }

    /// `s* = (x1*, x2*, 1/d_exp)`
    pub fn desired_features(&self) -> Vec3 {
        Vec3::new(
            self.desired_center[0],
            self.desired_center[1],
            1.0 / self.d_exp,
        )
    }
}

pub fn visual_error(s: &Vec3, desired: &Vec3) -> Vec3 {
    s - desired
}

/// Jacobian of `ṡ` with respect to the relative twist `[V_c − V_q; ω_c]`.
pub fn interaction_matrix(s: &Vec3) -> InteractionMatrix {
    let (x1, x2, x3) = (s.x, s.y, s.z);
    #[rustfmt::skip]
    let l = InteractionMatrix::new(
        -x3, 0.0, x1 * x3, x1 * x2, -(x1 * x1 + 1.0), x2,
        0.0, -x3, x2 * x3, x2 * x2 + 1.0, -x1 * x2, -x1,
        0.0, 0.0, x3 * x3, x2 * x3, -x1 * x3, 0.0,
    );
    l
}

/// Interaction matrix without the `v_cx` column; columns are
/// `(v_cy, v_cz, ω_cx, ω_cy, ω_cz)`.
pub fn reduced_interaction_matrix(s: &Vec3) -> ReducedInteractionMatrix {
    interaction_matrix(s).remove_column(0)
}

/// Minimum-norm pseudo-inverse and numerical rank.
pub fn pseudo_inverse(l: &ReducedInteractionMatrix) -> (SMatrix<f64, 5, 3>, usize) {
    let svd = SVD::new(*l, true, true);
    let rank = svd.rank(SIGMA_MIN);
    let pinv = svd
        .pseudo_inverse(SIGMA_MIN)
        .expect("both singular vector sets were requested");
    (pinv, rank)
}

/// Lateral speed that steers the viewing bearing toward `psi_exp`.
pub fn lateral_velocity(psi: f64, cfg: &ControlConfig, intr: &CameraIntrinsics) -> f64 {
    let dpsi = wrap_angle(psi - cfg.psi_exp);
    -(intr.width as f64) * cfg.d_exp * dpsi / (intr.fov_u() * intr.fx)
}

/// Bearing of the camera as seen from the target, in the horizontal plane.
pub fn bearing(camera: &Vec3, target: &Vec3) -> f64 {
    let d = camera - target;
    d.y.atan2(d.x)
}

/// Wraps to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub command: CameraCommand,
    pub error: Vec3,
    /// The reduced interaction matrix lost rank; only feedforward was applied.
    pub held: bool,
}

/// Full tracking law. `target_velocity` must be expressed in the camera
/// frame.
pub fn control(
    s: &Vec3,
    cfg: &ControlConfig,
    target_velocity: &Vec3,
    psi: f64,
    intr: &CameraIntrinsics,
) -> ControlOutput {
    let error = visual_error(s, &cfg.desired_features());
    let ff = if cfg.feedforward {
        *target_velocity
    } else {
        Vec3::zeros()
    };

    let (pinv, rank) = pseudo_inverse(&reduced_interaction_matrix(s));
    let held = rank < 3;
    let feedback: SVector<f64, 5> = if held {
        SVector::zeros()
    } else {
        -(pinv * error) * cfg.gain
    };
    let vcx = if held {
        0.0
    } else {
        lateral_velocity(psi, cfg, intr)
    };

    let raw = CameraCommand {
        linear: Vec3::new(vcx + ff.x, feedback[0] + ff.y, feedback[1] + ff.z),
        angular: Vec3::new(feedback[2], feedback[3], feedback[4]),
    };
    ControlOutput {
        command: raw.saturated(cfg.max_linear, cfg.max_angular),
        error,
        held,
    }
}
