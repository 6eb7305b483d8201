//! Kinematic world: scripted target, velocity-commanded camera and a
//! geometric bounding-box detector with noise and dropout.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CameraCommand, SystemState};
use crate::error::{Error, Result};
use crate::geometry::{Attitude, CameraIntrinsics, Vec3};
use crate::measurement::Measurement;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    /// Inertial velocity, m/s.
    pub velocity: [f64; 3],
}

/// Piecewise-constant target velocity. After the last segment the final
/// velocity is held.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetScript {
    pub segments: Vec<Segment>,
    /// First-order lag applied to velocity switches; 0 means instantaneous.
    pub smoothing_tau: f64,
}

impl TargetScript {
    pub fn constant(velocity: [f64; 3], duration: f64) -> Self {
        TargetScript {
            segments: vec![Segment { duration, velocity }],
            smoothing_tau: 0.0,
        }
    }

    pub fn validate(&self, speed_cap: f64) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(Error::config(
                    format!("target.script[{i}].duration"),
                    "must be > 0",
                ));
            }
            if !s.velocity.iter().all(|v| v.is_finite()) {
                return Err(Error::config(
                    format!("target.script[{i}].velocity"),
                    "must be finite",
                ));
            }
            let speed = Vec3::from(s.velocity).norm();
            if speed > speed_cap {
                return Err(Error::config(
                    format!("target.script[{i}].velocity"),
                    format!("speed {speed:.3} m/s exceeds the cap of {speed_cap} m/s"),
                ));
            }
        }
        if !(self.smoothing_tau >= 0.0 && self.smoothing_tau.is_finite()) {
            return Err(Error::config("target.smoothing_tau", "must be >= 0"));
        }
        Ok(())
    }

    /// Scripted velocity at time `t`.
    pub fn velocity_at(&self, t: f64) -> Vec3 {
        let mut start = 0.0;
        for s in &self.segments {
            if t < start + s.duration {
                return Vec3::from(s.velocity);
            }
            start += s.duration;
        }
        self.segments
            .last()
            .map(|s| Vec3::from(s.velocity))
            .unwrap_or_else(Vec3::zeros)
    }

    /// Exact displacement `∫_t0^t1 v(τ) dτ` of the unsmoothed script.
    pub fn displacement(&self, t0: f64, t1: f64) -> Vec3 {
        self.cumulative(t1) - self.cumulative(t0)
    }

    fn cumulative(&self, t: f64) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut start = 0.0;
        for s in &self.segments {
            let end = start + s.duration;
            let covered = (t.min(end) - start).max(0.0);
            acc += Vec3::from(s.velocity) * covered;
            start = end;
        }
        if let Some(last) = self.segments.last() {
            acc += Vec3::from(last.velocity) * (t - start).max(0.0);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub target_position: Vec3,
    pub target_velocity: Vec3,
    pub camera_position: Vec3,
    pub camera_attitude: Attitude,
    /// Twist the camera is actually executing (differs from the command only
    /// with a first-order lag).
    pub camera_twist: CameraCommand,
}

impl WorldState {
    pub fn new(
        target_position: Vec3,
        target_velocity: Vec3,
        camera_position: Vec3,
        camera_attitude: Attitude,
    ) -> Self {
        WorldState {
            time: 0.0,
            target_position,
            target_velocity,
            camera_position,
            camera_attitude,
            camera_twist: CameraCommand::zero(),
        }
    }

    /// Target relative to the camera, camera frame.
    pub fn relative_position(&self) -> Vec3 {
        self.camera_attitude
            .world_to_camera(&(self.target_position - self.camera_position))
    }

    /// Ground-truth filter state.
    pub fn true_state(&self) -> SystemState {
        SystemState::from_relative(
            &self.relative_position(),
            self.target_position,
            self.target_velocity,
        )
    }
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): maps a constant body twist to the displacement
/// it produces over the rotation `phi`.
fn so3_left_jacobian(phi: &Vec3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let (a, b) = if theta < 1e-6 {
        (
            0.5 - theta * theta / 24.0,
            1.0 / 6.0 - theta * theta / 120.0,
        )
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() + k * a + k2 * b
}

/// Advances the world by `dt`. The camera executes its twist exactly
/// (constant body-frame twist over the step); `lag_tau > 0` makes the
/// executed twist follow the command with a first-order lag.
pub fn step_world(
    w: &WorldState,
    cmd: &CameraCommand,
    script: &TargetScript,
    dt: f64,
    lag_tau: f64,
) -> Result<WorldState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let t1 = w.time + dt;

    let (target_position, target_velocity) = if script.smoothing_tau > 0.0 {
        let goal = script.velocity_at(w.time);
        let tau = script.smoothing_tau;
        let decay = (-dt / tau).exp();
        let offset = w.target_velocity - goal;
        let pos = w.target_position + goal * dt + offset * (tau * (1.0 - decay));
        (pos, goal + offset * decay)
    } else {
        (
            w.target_position + script.displacement(w.time, t1),
            script.velocity_at(t1),
        )
    };

    let twist = if lag_tau > 0.0 {
        let blend = 1.0 - (-dt / lag_tau).exp();
        CameraCommand {
            linear: w.camera_twist.linear + (cmd.linear - w.camera_twist.linear) * blend,
            angular: w.camera_twist.angular + (cmd.angular - w.camera_twist.angular) * blend,
        }
    } else {
        *cmd
    };
    let phi = twist.angular * dt;
    let displacement = w.camera_attitude.matrix() * (so3_left_jacobian(&phi) * twist.linear) * dt;

    Ok(WorldState {
        time: t1,
        target_position,
        target_velocity,
        camera_position: w.camera_position + displacement,
        camera_attitude: w.camera_attitude.advanced(&twist.angular, dt),
        camera_twist: twist,
    })
}

/// Physical size of the observed target side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetGeometry {
    pub length: f64,
    pub height: f64,
}

impl Default for TargetGeometry {
    /// A sedan seen from the side.
    fn default() -> Self {
        TargetGeometry {
            length: 4.6,
            height: 1.5,
        }
    }
}

impl TargetGeometry {
    pub fn area(&self) -> f64 {
        self.length * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxModel {
    /// The side rectangle is held perpendicular to the optical axis.
    Facing,
    /// The side rectangle lies in the vertical plane along the target
    /// heading; off-axis views shrink or skew the box.
    Oriented,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Visibility {
    /// Box center inside the image.
    Center,
    /// Whole box inside the image shrunk by `margin` pixels.
    FullBox { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicBlackout {
    pub every: f64,
    pub length: f64,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Pixel noise on the box center (px).
    pub pixel_sigma: f64,
    /// Relative noise on the box area.
    pub area_sigma: f64,
    /// Noise on the sensed camera position (m).
    pub position_sigma: f64,
    /// Independent per-frame dropout probability.
    pub p_drop: f64,
    /// Scheduled blackout intervals `[start, end)` in seconds.
    pub blackouts: Vec<[f64; 2]>,
    pub periodic_blackout: Option<PeriodicBlackout>,
    pub visibility: Visibility,
    pub box_model: BoxModel,
}

impl Default for DetectionConfig {
    /// Noise levels match the default measurement covariance: `√20` px on the
    /// center, `5e-4` relative area noise (about `√500` px² on a box at 5 m)
    /// and 1 cm on the camera position.
    fn default() -> Self {
        DetectionConfig {
            pixel_sigma: 20f64.sqrt(),
            area_sigma: 5e-4,
            position_sigma: 0.01,
            p_drop: 0.02,
            blackouts: Vec::new(),
            periodic_blackout: None,
            visibility: Visibility::Center,
            box_model: BoxModel::Facing,
        }
    }
}

impl DetectionConfig {
    /// Noise-free, dropout-free detector.
    pub fn ideal() -> Self {
        DetectionConfig {
            pixel_sigma: 0.0,
            area_sigma: 0.0,
            position_sigma: 0.0,
            p_drop: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("detection.pixel_sigma", self.pixel_sigma),
            ("detection.area_sigma", self.area_sigma),
            ("detection.position_sigma", self.position_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::config("detection.p_drop", "must lie in [0, 1]"));
        }
        for (i, b) in self.blackouts.iter().enumerate() {
            if !(b[0].is_finite() && b[1] > b[0]) {
                return Err(Error::config(
                    format!("detection.blackouts[{i}]"),
                    "end must exceed start",
                ));
            }
        }
        if let Some(p) = &self.periodic_blackout {
            if !(p.every > 0.0 && p.length > 0.0 && p.length < p.every && p.offset.is_finite()) {
                return Err(Error::config(
                    "detection.periodic_blackout",
                    "need every > length > 0",
                ));
            }
        }
        if let Visibility::FullBox { margin } = self.visibility {
            if !(margin >= 0.0) {
                return Err(Error::config("detection.visibility.margin", "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn in_blackout(&self, t: f64) -> bool {
        if self.blackouts.iter().any(|b| t >= b[0] && t < b[1]) {
            return true;
        }
        match &self.periodic_blackout {
            Some(p) if t >= p.offset => (t - p.offset).rem_euclid(p.every) < p.length,
            _ => false,
        }
    }
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.u_min + self.u_max),
            0.5 * (self.v_min + self.v_max),
        )
    }
}

/// Noise-free projection of the target side. `None` when any part of it is
/// behind the camera.
pub fn project_target_box(
    w: &WorldState,
    geom: &TargetGeometry,
    intr: &CameraIntrinsics,
    model: BoxModel,
    heading: f64,
) -> Option<BoundingBox> {
    let center = w.relative_position();
    if !(center.z > 0.0) {
        return None;
    }
    let (half_l, half_h) = (0.5 * geom.length, 0.5 * geom.height);
    match model {
        BoxModel::Facing => {
            let (u0, v0) = intr.project_point(&center);
            let hw = intr.fx * half_l / center.z;
            let hh = intr.fy * half_h / center.z;
            Some(BoundingBox {
                u_min: u0 - hw,
                u_max: u0 + hw,
                v_min: v0 - hh,
                v_max: v0 + hh,
            })
        }
        BoxModel::Oriented => {
            let along = Vec3::new(heading.cos(), heading.sin(), 0.0) * half_l;
            let up = Vec3::z() * half_h;
            let mut bb = BoundingBox {
                u_min: f64::INFINITY,
                u_max: f64::NEG_INFINITY,
                v_min: f64::INFINITY,
                v_max: f64::NEG_INFINITY,
            };
            for (sa, su) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let corner_world = w.target_position + along * sa + up * su;
                let c = w
                    .camera_attitude
                    .world_to_camera(&(corner_world - w.camera_position));
                if !(c.z > 0.0) {
                    return None;
                }
                let (u, v) = intr.project_point(&c);
                bb.u_min = bb.u_min.min(u);
                bb.u_max = bb.u_max.max(u);
                bb.v_min = bb.v_min.min(v);
                bb.v_max = bb.v_max.max(v);
            }
            Some(bb)
        }
    }
}

/// Whether the target's box passes the visibility rule (noise-free).
pub fn is_visible(bb: &BoundingBox, intr: &CameraIntrinsics, rule: Visibility) -> bool {
    match rule {
        Visibility::Center => {
            let (u, v) = bb.center();
            intr.contains(u, v)
        }
        Visibility::FullBox { margin } => {
            bb.u_min >= margin
                && bb.v_min >= margin
                && bb.u_max <= intr.width as f64 - margin
                && bb.v_max <= intr.height as f64 - margin
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub measurement: Measurement,
    pub bbox: BoundingBox,
}

/// Seeded source of detector randomness. Every frame consumes the same
/// number of draws whether or not a box is produced, so two runs with the
/// same seed see the same dropout and noise sequence.
#[derive(Debug, Clone)]
pub struct DetectorNoise {
    rng: ChaCha8Rng,
}

struct FrameDraws {
    drop: f64,
    normals: [f64; 6],
}

impl DetectorNoise {
    pub fn new(seed: u64) -> Self {
        DetectorNoise {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn frame(&mut self) -> FrameDraws {
        let drop = self.rng.random::<f64>();
        let mut normals = [0.0; 6];
        for n in &mut normals {
            *n = self.rng.sample(StandardNormal);
        }
        FrameDraws { drop, normals }
    }
}

/// Emulated detector. Absence of a detection is a value, not an error.
pub fn emulate_detection(
    w: &WorldState,
    geom: &TargetGeometry,
    intr: &CameraIntrinsics,
    det: &DetectionConfig,
    heading: f64,
    noise: &mut DetectorNoise,
) -> Option<Detection> {
    let draws = noise.frame();
    let bb = project_target_box(w, geom, intr, det.box_model, heading)?;
    if !is_visible(&bb, intr, det.visibility) {
        return None;
    }
    if det.in_blackout(w.time) || draws.drop < det.p_drop {
        return None;
    }
    let n = draws.normals;
    let (u, v) = bb.center();
    let measurement = Measurement {
        u: u + det.pixel_sigma * n[0],
        v: v + det.pixel_sigma * n[1],
        area: bb.area() * (1.0 + det.area_sigma * n[2]),
        camera_position: w.camera_position + Vec3::new(n[3], n[4], n[5]) * det.position_sigma,
    };
    Some(Detection {
        measurement,
        bbox: bb,
    })
}
