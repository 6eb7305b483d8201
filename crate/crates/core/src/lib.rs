//! Monocular target tracking from bounding boxes.
//!
//! An unscented Kalman filter estimates a moving target's position and
//! velocity from bounding-box detections (center, area) and the camera's
//! own position. The process noise is re-estimated over a moving window of
//! filter residuals, and an image-based visual-servo controller uses the
//! estimated target velocity as a feedforward term to keep the target in
//! view. A kinematic simulator with an emulated detector closes the loop.

pub mod adaptive_noise;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod log;
pub mod measurement;
pub mod metrics;
pub mod scenario;
pub mod simulator;
pub mod ukf;

pub use controller::{ControlConfig, ControlOutput};
pub use dynamics::{CameraCommand, StateVector, SystemState};
pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, TargetEstimator};
pub use geometry::{Attitude, CameraIntrinsics, Vec3};
pub use log::{RunLog, RunLogRow, RunOutcome};
pub use measurement::{Measurement, MeasurementNoise};
pub use metrics::{summarize, RunMetrics};
pub use scenario::{run_comparison, run_scenario, Comparison, ScenarioConfig, Simulation};
pub use simulator::{DetectionConfig, TargetScript, WorldState};
pub use ukf::{FilterState, UkfParams};
