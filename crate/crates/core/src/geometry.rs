//! Frames, camera intrinsics and the pinhole image model.
//!
//! The camera frame follows the usual pinhole convention: `Z` along the
//! optical axis, `X` to the right in the image and `Y` down. A target in
//! front of the camera therefore has positive inverse depth `x3 = 1/Z`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Orientation of the camera frame relative to the inertial frame.
///
/// Internally this is the camera-to-world rotation, so its columns are the
/// camera axes expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude(Rotation3<f64>);

/// Fixed rotation from a forward-left-up vehicle body to the camera frame
/// (camera looks along body `x`).
fn body_to_camera_mount() -> Rotation3<f64> {
    // columns: camera X, Y, Z expressed in body axes
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ))
}

impl Attitude {
    pub fn identity() -> Self {
        Attitude(Rotation3::identity())
    }

    /// Wraps a camera-to-world rotation.
    pub fn from_rotation(rotation: Rotation3<f64>) -> Self {
        Attitude(rotation)
    }

    /// Camera mounted looking forward on a vehicle whose body attitude is
    /// given by roll/pitch/yaw (ZYX) angles in a Z-up world.
    pub fn from_body_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let body = Rotation3::from_euler_angles(roll, pitch, yaw);
        Attitude(body * body_to_camera_mount())
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.0
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        self.0.matrix()
    }

    pub fn world_to_camera(&self, v: &Vec3) -> Vec3 {
        self.0.inverse_transform_vector(v)
    }

    pub fn camera_to_world(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.camera_to_world(&Vec3::z())
    }

    /// Propagates the attitude under a constant camera-frame angular
    /// velocity for `dt` seconds.
    pub fn advanced(&self, omega: &Vec3, dt: f64) -> Self {
        let delta = Rotation3::new(omega * dt);
        let mut r = self.0 * delta;
        r.renormalize();
        Attitude(r)
    }

    /// Heading of the optical axis projected on the horizontal plane.
    pub fn heading(&self) -> f64 {
        let axis = self.optical_axis();
        axis.y.atan2(axis.x)
    }
}

impl Default for Attitude {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rotation about an arbitrary world axis, convenient for tests and setups.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Pinhole intrinsics in pixels. The horizontal field of view is derived,
/// never configured separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 640x480 calibrated camera used in the reference scenario.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 381.36,
            fy: 381.36,
            cu: 320.5,
            cv: 240.5,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cu, self.cv]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("camera", "intrinsics must be finite"));
        }
        if self.fx <= 0.0 {
            return Err(Error::config("camera.fx", "must be > 0"));
        }
        if self.fy <= 0.0 {
            return Err(Error::config("camera.fy", "must be > 0"));
        }
        if self.width == 0 {
            return Err(Error::config("camera.width", "must be > 0"));
        }
        if self.height == 0 {
            return Err(Error::config("camera.height", "must be > 0"));
        }
        if !(self.cu > 0.0 && self.cu < self.width as f64) {
            return Err(Error::config("camera.cu", "must lie inside (0, width)"));
        }
        if !(self.cv > 0.0 && self.cv < self.height as f64) {
            return Err(Error::config("camera.cv", "must lie inside (0, height)"));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn fov_u(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    /// Normalized image coordinates to pixels.
    pub fn project(&self, x1: f64, x2: f64) -> (f64, f64) {
        (self.fx * x1 + self.cu, self.fy * x2 + self.cv)
    }

    /// Pixels to normalized image coordinates.
    pub fn unproject(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cu) / self.fx, (v - self.cv) / self.fy)
    }

    /// Projects a camera-frame point. Points behind the camera are still
    /// mapped; callers decide visibility.
    pub fn project_point(&self, p: &Vec3) -> (f64, f64) {
        self.project(p.x / p.z, p.y / p.z)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.width as f64 && v >= 0.0 && v <= self.height as f64
    }
}

/// Bounding-box area (px²) of a target side of area `area_m2` seen at
/// inverse depth `x3`.
pub fn area_from_x3(area_m2: f64, intr: &CameraIntrinsics, x3: f64) -> f64 {
    area_m2 * intr.fx * intr.fy * x3 * x3
}

/// Inverse of [`area_from_x3`] on the positive branch.
pub fn x3_from_area(area_m2: f64, intr: &CameraIntrinsics, area_px: f64) -> f64 {
    (area_px.max(0.0) / (area_m2 * intr.fx * intr.fy)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_attitude_is_noop() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Attitude::identity().world_to_camera(&v), v);
    }

    #[test]
    fn yaw_ninety_maps_x_to_minus_y() {
        let att = Attitude::from_rotation(axis_angle(&Vec3::z(), FRAC_PI_2));
        let c = att.world_to_camera(&Vec3::x());
        assert_relative_eq!(c, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn body_yaw_minus_half_pi_looks_down_world_minus_y() {
        let att = Attitude::from_body_euler(0.0, 0.0, -FRAC_PI_2);
        assert_relative_eq!(att.optical_axis(), -Vec3::y(), epsilon = 1e-15);
        // image down is world down
        assert_relative_eq!(att.camera_to_world(&Vec3::y()), -Vec3::z(), epsilon = 1e-15);
        let det = att.matrix().determinant();
        assert_relative_eq!(det, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn principal_point_and_offset_projection() {
        let k = CameraIntrinsics::default();
        assert_eq!(k.project(0.0, 0.0), (320.5, 240.5));
        let (u, v) = k.project(0.1, 0.0);
        assert_relative_eq!(u, 358.636, epsilon = 1e-9);
        assert_eq!(v, 240.5);
    }

    #[test]
    fn fov_is_derived_from_intrinsics() {
        let k = CameraIntrinsics::default();
        assert_relative_eq!(k.fov_u(), 1.396_26, epsilon = 1e-5);
    }

    #[test]
    fn area_law() {
        let k = CameraIntrinsics::default();
        assert_eq!(area_from_x3(6.9, &k, 0.0), 0.0);
        let a = area_from_x3(4.6 * 1.5, &k, 0.2);
        assert_relative_eq!(a, 6.9 * 381.36 * 381.36 * 0.04, epsilon = 1e-9);
        assert_relative_eq!(a, 40_140.2, epsilon = 0.05);
        assert_relative_eq!(area_from_x3(6.9, &k, 0.4), 4.0 * a, epsilon = 1e-9);
        assert_relative_eq!(x3_from_area(6.9, &k, a), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn validation_names_the_field() {
        let k = CameraIntrinsics {
            fx: 0.0,
            ..Default::default()
        };
        match k.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "camera.fx"),
            other => panic!("unexpected {other:?}"),
        }
        let k = CameraIntrinsics {
            cu: 700.0,
            ..Default::default()
        };
        assert!(k.validate().is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation3<f64>> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)
            .prop_map(|(a, b, c)| Rotation3::new(Vec3::new(a, b, c)))
    }

    proptest! {
        #[test]
        fn projection_round_trip(x1 in -2.0..2.0f64, x2 in -2.0..2.0f64) {
            let k = CameraIntrinsics::default();
            let (u, v) = k.project(x1, x2);
            let (y1, y2) = k.unproject(u, v);
            prop_assert!((y1 - x1).abs() < 1e-12 && (y2 - x2).abs() < 1e-12);
        }

        #[test]
        fn attitude_round_trip_preserves_norm(
            rot in arb_rotation(),
            x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64,
        ) {
            let att = Attitude::from_rotation(rot);
            let v = Vec3::new(x, y, z);
            let back = att.world_to_camera(&att.camera_to_world(&v));
            prop_assert!((back - v).norm() < 1e-12);
            prop_assert!((att.world_to_camera(&v).norm() - v.norm()).abs() < 1e-12);
            let r = att.matrix();
            prop_assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-9);
        }
    }
}
