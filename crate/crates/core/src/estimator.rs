//! Target estimator: the unscented filter specialised to the camera/target
//! state, with intermittent measurements and windowed process-noise
//! adaptation.

use nalgebra::SMatrix;

use crate::adaptive_noise::{update_filter_q, AdaptiveNoiseConfig, ResidualWindow};
use crate::dynamics::{integrate, CameraCommand, StateVector, SystemState, STATE_DIM};
use crate::error::{Error, Result};
use crate::geometry::{x3_from_area, Attitude, CameraIntrinsics, Vec3};
use crate::measurement::{predict_measurement, Measurement, MeasurementNoise, MEAS_DIM};
use crate::ukf::{self, FilterState, UkfParams};

pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type TrackingFilterState = FilterState<STATE_DIM>;

/// Initial process-noise diagonal.
pub const DEFAULT_Q0: [f64; STATE_DIM] = [
    0.08e-2, 0.08e-2, 0.02e-2, 5e-2, 5e-2, 5e-2, 1e-2, 1e-2, 1e-2,
];

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub params: UkfParams,
    pub q0: [f64; STATE_DIM],
    pub noise: MeasurementNoise,
    /// Initial covariance is `p0_scale · Q0`.
    pub p0_scale: f64,
    pub adaptive: AdaptiveNoiseConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            params: UkfParams::default(),
            q0: DEFAULT_Q0,
            noise: MeasurementNoise::default(),
            p0_scale: 10.0,
            adaptive: AdaptiveNoiseConfig::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate(STATE_DIM)?;
        if self.q0.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(Error::config(
                "ukf.q0",
                "diagonal entries must be positive and finite",
            ));
        }
        if !(self.p0_scale > 0.0 && self.p0_scale.is_finite()) {
            return Err(Error::config("ukf.p0_scale", "must be > 0"));
        }
        self.adaptive.validate()
    }

    pub fn initial_q(&self) -> StateCovariance {
        StateCovariance::from_diagonal(&StateVector::from(self.q0))
    }
}

/// State guess from a single detection: features from the box, depth from
/// the area law, target position from the sensed camera position, zero
/// velocity.
pub fn initial_state(
    z: &Measurement,
    area_m2: f64,
    intr: &CameraIntrinsics,
    attitude: &Attitude,
) -> Result<SystemState> {
    let (x1, x2) = intr.unproject(z.u, z.v);
    let x3 = x3_from_area(area_m2, intr, z.area);
    let guess = SystemState {
        x1,
        x2,
        x3,
        position: Vec3::zeros(),
        velocity: Vec3::zeros(),
    };
    let rel = crate::dynamics::relative_position_from_state(&guess)?;
    Ok(SystemState {
        position: z.camera_position + attitude.camera_to_world(&rel),
        ..guess
    })
}

/// What happened on one estimator step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepReport {
    pub corrected: bool,
    pub q_updated: bool,
}

#[derive(Debug, Clone)]
pub struct TargetEstimator {
    cfg: EstimatorConfig,
    area_m2: f64,
    intr: CameraIntrinsics,
    filter: Option<TrackingFilterState>,
    window: ResidualWindow<STATE_DIM, MEAS_DIM>,
}

impl TargetEstimator {
    pub fn new(cfg: EstimatorConfig, area_m2: f64, intr: CameraIntrinsics) -> Self {
        let window = ResidualWindow::with_weighting(cfg.adaptive.window, cfg.adaptive.weighting);
        TargetEstimator {
            cfg,
            area_m2,
            intr,
            filter: None,
            window,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn filter(&self) -> Option<&TrackingFilterState> {
        self.filter.as_ref()
    }

    pub fn estimate(&self) -> Option<SystemState> {
        self.filter
            .as_ref()
            .map(|f| SystemState::from_vector(&f.mean))
    }

    pub fn window(&self) -> &ResidualWindow<STATE_DIM, MEAS_DIM> {
        &self.window
    }

    pub fn is_initialized(&self) -> bool {
        self.filter.is_some()
    }

    /// Starts the filter at a known state.
    pub fn initialize_at(&mut self, state: &SystemState) {
        let q = self.cfg.initial_q();
        self.filter = Some(FilterState::new(
            state.to_vector(),
            q * self.cfg.p0_scale,
            q,
        ));
    }

    pub fn initialize(&mut self, z: &Measurement, attitude: &Attitude) -> Result<()> {
        let s = initial_state(z, self.area_m2, &self.intr, attitude)?;
        self.initialize_at(&s);
        Ok(())
    }

    /// Propagates over `dt` under `cmd` starting from `attitude`, then
    /// corrects with `z` (taken at the end of the interval, camera attitude
    /// `z_attitude`) when present.
    pub fn step(
        &mut self,
        cmd: &CameraCommand,
        attitude: &Attitude,
        dt: f64,
        z: Option<&Measurement>,
        z_attitude: &Attitude,
    ) -> Result<StepReport> {
        let fs = self
            .filter
            .as_ref()
            .ok_or_else(|| Error::FilterDivergence {
                step: 0,
                reason: "estimator stepped before initialization".into(),
            })?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        let params = self.cfg.params;
        let process = |x: &StateVector| {
            integrate(&SystemState::from_vector(x), cmd, attitude, dt).map(|s| s.to_vector())
        };
        let (area_m2, intr) = (self.area_m2, self.intr);
        let measure = |x: &StateVector| {
            predict_measurement(&SystemState::from_vector(x), area_m2, &intr, z_attitude)
        };
        let zv = z.map(|m| m.to_vector());
        let r = *self.cfg.noise.matrix();
        let outcome = ukf::step(
            fs,
            &params,
            process,
            zv.as_ref().map(|zv| (zv, &r, measure)),
        )?;

        let mut state = outcome.state;
        let corrected = outcome.record.is_some();
        let mut q_updated = false;
        if let Some(record) = outcome.record {
            self.window.push(record);
            q_updated = update_filter_q(&mut state, &self.window, &self.cfg.adaptive)?;
        }
        self.filter = Some(state);
        Ok(StepReport {
            corrected,
            q_updated,
        })
    }
}
