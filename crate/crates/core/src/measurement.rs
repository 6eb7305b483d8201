//! Bounding-box measurement `z = [u, v, a, r_c]` and its model.

use nalgebra::{SMatrix, SVector};

use crate::dynamics::{relative_position_from_state, SystemState};
use crate::error::{Error, Result};
use crate::geometry::{area_from_x3, Attitude, CameraIntrinsics, Vec3};

pub const MEAS_DIM: usize = 6;
pub type MeasVector = SVector<f64, MEAS_DIM>;
pub type MeasCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

/// A detected bounding box plus the sensed camera position (inertial frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub u: f64,
    pub v: f64,
    pub area: f64,
    pub camera_position: Vec3,
}

impl Measurement {
    pub fn to_vector(&self) -> MeasVector {
        let r = &self.camera_position;
        MeasVector::from([self.u, self.v, self.area, r.x, r.y, r.z])
    }

    pub fn from_vector(z: &MeasVector) -> Self {
        Measurement {
            u: z[0],
            v: z[1],
            area: z[2],
            camera_position: Vec3::new(z[3], z[4], z[5]),
        }
    }
}

/// Measurement noise covariance `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise(pub MeasCovariance);

impl MeasurementNoise {
    pub fn from_diagonal(diag: [f64; MEAS_DIM]) -> Result<Self> {
        if diag.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config(
                "ukf.r",
                "diagonal entries must be positive and finite",
            ));
        }
        Ok(MeasurementNoise(MeasCovariance::from_diagonal(
            &MeasVector::from(diag),
        )))
    }

    pub fn matrix(&self) -> &MeasCovariance {
        &self.0
    }
}

impl Default for MeasurementNoise {
    /// px², px², px⁴, m², m², m²
    fn default() -> Self {
        MeasurementNoise(MeasCovariance::from_diagonal(&MeasVector::from([
            20.0, 20.0, 500.0, 1e-4, 1e-4, 1e-4,
        ])))
    }
}

/// Expected measurement for a state estimate. The area row carries the
/// sign of `x3` so that a wrong-signed depth estimate is pushed back to
/// the positive branch.
pub fn predict_measurement(
    x: &SystemState,
    area_m2: f64,
    intr: &CameraIntrinsics,
    attitude: &Attitude,
) -> Result<MeasVector> {
    let rel = relative_position_from_state(x)?;
    let (u, v) = intr.project(x.x1, x.x2);
    let a = area_from_x3(area_m2, intr, x.x3) * x.x3.signum();
    let camera = x.position - attitude.camera_to_world(&rel);
    Ok(MeasVector::from([u, v, a, camera.x, camera.y, camera.z]))
}

pub fn innovation(z: &Measurement, predicted: &MeasVector) -> MeasVector {
    z.to_vector() - predicted
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn at(x1: f64, x2: f64, x3: f64) -> SystemState {
        SystemState {
            x1,
            x2,
            x3,
            position: Vec3::zeros(),
            velocity: Vec3::zeros(),
        }
    }

    #[test]
    fn centered_target_prediction() {
        let k = CameraIntrinsics::default();
        let z = predict_measurement(&at(0.0, 0.0, 0.2), 6.9, &k, &Attitude::identity()).unwrap();
        assert_eq!(z[0], 320.5);
        assert_eq!(z[1], 240.5);
        assert_relative_eq!(z[2], 40_140.2, epsilon = 0.05);
        assert_relative_eq!(z[3], 0.0);
        assert_relative_eq!(z[4], 0.0);
        assert_relative_eq!(z[5], -5.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_depth_flips_area_sign() {
        let k = CameraIntrinsics::default();
        let z = predict_measurement(&at(0.0, 0.0, -0.2), 6.9, &k, &Attitude::identity()).unwrap();
        assert_relative_eq!(z[2], -40_140.2, epsilon = 0.05);
    }

    #[test]
    fn degenerate_depth_propagates() {
        let k = CameraIntrinsics::default();
        let r = predict_measurement(&at(0.0, 0.0, 0.0), 6.9, &k, &Attitude::identity());
        assert!(matches!(r, Err(Error::DegenerateDepth { .. })));
    }

    #[test]
    fn innovation_subtracts() {
        let z = Measurement {
            u: 330.0,
            v: 240.5,
            area: 100.0,
            camera_position: Vec3::new(1.0, 2.0, 3.0),
        };
        let zhat = z.to_vector();
        assert_eq!(innovation(&z, &zhat), MeasVector::zeros());
        let mut zhat = zhat;
        zhat[0] = 320.5;
        assert_eq!(innovation(&z, &zhat)[0], 9.5);
    }

    #[test]
    fn noise_rejects_non_positive() {
        assert!(MeasurementNoise::from_diagonal([1.0, 1.0, 1.0, 0.0, 1.0, 1.0]).is_err());
        let r = MeasurementNoise::default();
        assert_eq!(r.matrix()[(2, 2)], 500.0);
    }

    proptest! {
        #[test]
        fn area_row_is_odd_and_quadratic(x3 in 0.01..2.0f64) {
            let k = CameraIntrinsics::default();
            let att = Attitude::identity();
            let p = predict_measurement(&at(0.1, 0.1, x3), 6.9, &k, &att).unwrap()[2];
            let n = predict_measurement(&at(0.1, 0.1, -x3), 6.9, &k, &att).unwrap()[2];
            let d = predict_measurement(&at(0.1, 0.1, 2.0 * x3), 6.9, &k, &att).unwrap()[2];
            prop_assert!((p + n).abs() <= 1e-12 * p.abs());
            prop_assert!((d - 4.0 * p).abs() <= 1e-12 * d.abs());
        }

        #[test]
        fn pixel_rows_ignore_depth(x3 in 0.01..2.0f64) {
            let k = CameraIntrinsics::default();
            let z = predict_measurement(&at(0.0, 0.0, x3), 6.9, &k, &Attitude::identity()).unwrap();
            prop_assert_eq!(z[0], k.cu);
            prop_assert_eq!(z[1], k.cv);
        }
    }
}
