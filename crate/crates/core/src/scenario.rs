//! Scenario configuration and the closed-loop run.
//!
//! A scenario is a TOML document with the sections `[camera]`, `[target]`
//! (including `[[target.script]]` segments), `[detection]`, `[ukf]`,
//! `[controller]` and `[run]`. Every field has a default, so an empty file
//! is the reference scenario: camera at `(0, 5.5, 1.0)` yawed by `-π/2`,
//! target at the origin moving at 2 m/s along `X`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::adaptive_noise::AdaptiveNoiseConfig;
use crate::controller::{bearing, control, ControlConfig};
use crate::dynamics::{CameraCommand, SystemState};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, TargetEstimator, DEFAULT_Q0};
use crate::geometry::{Attitude, CameraIntrinsics, Vec3};
use crate::log::{RunLog, RunLogRow, RunOutcome};
use crate::measurement::MeasurementNoise;
use crate::metrics::relative_position_error;
use crate::simulator::{
    emulate_detection, project_target_box, step_world, DetectionConfig, DetectorNoise, Segment,
    TargetGeometry, TargetScript, WorldState,
};
use crate::ukf::UkfParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
    /// Initial position, inertial frame (m).
    pub position: [f64; 3],
    /// Initial vehicle roll, pitch, yaw (rad); the camera looks along the
    /// vehicle's forward axis.
    pub euler: [f64; 3],
    /// First-order lag on executed twist (s); 0 disables it.
    pub lag_tau: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let k = CameraIntrinsics::default();
        CameraSection {
            fx: k.fx,
            fy: k.fy,
            cu: k.cu,
            cv: k.cv,
            width: k.width,
            height: k.height,
            position: [0.0, 5.5, 1.0],
            euler: [0.0, 0.0, -FRAC_PI_2],
            lag_tau: 0.0,
        }
    }
}

impl CameraSection {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cu: self.cu,
            cv: self.cv,
            width: self.width,
            height: self.height,
        }
    }

    pub fn attitude(&self) -> Attitude {
        let [r, p, y] = self.euler;
        Attitude::from_body_euler(r, p, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    pub position: [f64; 3],
    /// Heading used by the oriented box model when the target is at rest (rad).
    pub heading: f64,
    pub length: f64,
    pub height: f64,
    pub smoothing_tau: f64,
    pub speed_cap: f64,
    pub script: Vec<Segment>,
}

impl Default for TargetSection {
    fn default() -> Self {
        let g = TargetGeometry::default();
        TargetSection {
            position: [0.0; 3],
            heading: 0.0,
            length: g.length,
            height: g.height,
            smoothing_tau: 0.0,
            speed_cap: 4.0,
            script: vec![Segment {
                duration: 60.0,
                velocity: [2.0, 0.0, 0.0],
            }],
        }
    }
}

impl TargetSection {
    pub fn geometry(&self) -> TargetGeometry {
        TargetGeometry {
            length: self.length,
            height: self.height,
        }
    }

    pub fn script(&self) -> TargetScript {
        TargetScript {
            segments: self.script.clone(),
            smoothing_tau: self.smoothing_tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfSection {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Initial process-noise diagonal.
    pub q0: [f64; 9],
    /// Measurement-noise diagonal (px², px², px⁴, m², m², m²).
    pub r: [f64; 6],
    pub p0_scale: f64,
    pub adaptive: AdaptiveNoiseConfig,
}

impl Default for UkfSection {
    fn default() -> Self {
        let p = UkfParams::default();
        UkfSection {
            alpha: p.alpha,
            beta: p.beta,
            kappa: p.kappa,
            q0: DEFAULT_Q0,
            r: [20.0, 20.0, 500.0, 1e-4, 1e-4, 1e-4],
            p0_scale: 10.0,
            adaptive: AdaptiveNoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    /// Controller consumes the filter estimate.
    Estimate,
    /// Controller consumes ground truth (perfect-state experiments).
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub feedback: FeedbackSource,
    /// Start of the metrics interval (s); defaults to one full window.
    pub metrics_from: Option<f64>,
    /// Start the filter at the true state instead of the first detection.
    pub perfect_init: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            dt: 0.02,
            duration: 60.0,
            seed: 0,
            feedback: FeedbackSource::Estimate,
            metrics_from: None,
            perfect_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub camera: CameraSection,
    pub target: TargetSection,
    pub detection: DetectionConfig,
    pub ukf: UkfSection,
    pub controller: ControlConfig,
    pub run: RunSection,
}

impl ScenarioConfig {
    /// Parses and validates. Field paths in errors use dotted notation.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::config("<document>", e.message().to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "<document>".to_string()
            } else {
                path
            };
            Error::config(field, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.intrinsics().validate()?;
        if !self
            .camera
            .position
            .iter()
            .chain(&self.camera.euler)
            .all(|v| v.is_finite())
        {
            return Err(Error::config("camera.position", "pose must be finite"));
        }
        if !(self.camera.lag_tau >= 0.0) {
            return Err(Error::config("camera.lag_tau", "must be >= 0"));
        }
        if !(self.target.length > 0.0) {
            return Err(Error::config("target.length", "must be > 0"));
        }
        if !(self.target.height > 0.0) {
            return Err(Error::config("target.height", "must be > 0"));
        }
        if !(self.target.speed_cap > 0.0) {
            return Err(Error::config("target.speed_cap", "must be > 0"));
        }
        if !self.target.position.iter().all(|v| v.is_finite()) {
            return Err(Error::config("target.position", "must be finite"));
        }
        self.target.script().validate(self.target.speed_cap)?;
        self.detection.validate()?;
        self.estimator_config()?.validate()?;
        self.controller.validate()?;
        if !(self.run.dt > 0.0 && self.run.dt.is_finite()) {
            return Err(Error::config("run.dt", "must be > 0"));
        }
        if !(self.run.duration > 0.0 && self.run.duration.is_finite()) {
            return Err(Error::config("run.duration", "must be > 0"));
        }
        if let Some(t) = self.run.metrics_from {
            if !(t >= 0.0 && t < self.run.duration) {
                return Err(Error::config(
                    "run.metrics_from",
                    "must lie in [0, duration)",
                ));
            }
        }
        Ok(())
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        let u = &self.ukf;
        Ok(EstimatorConfig {
            params: UkfParams {
                alpha: u.alpha,
                beta: u.beta,
                kappa: u.kappa,
            },
            q0: u.q0,
            noise: MeasurementNoise::from_diagonal(u.r)?,
            p0_scale: u.p0_scale,
            adaptive: u.adaptive,
        })
    }

    pub fn steps(&self) -> usize {
        (self.run.duration / self.run.dt).round() as usize
    }

    /// Beginning of the metrics interval.
    pub fn metrics_from(&self) -> f64 {
        self.run
            .metrics_from
            .unwrap_or(self.ukf.adaptive.window as f64 * self.run.dt)
    }

    pub fn initial_world(&self) -> WorldState {
        let script = self.target.script();
        WorldState::new(
            Vec3::from(self.target.position),
            script.velocity_at(0.0),
            Vec3::from(self.camera.position),
            self.camera.attitude(),
        )
    }
}

fn target_heading(w: &WorldState, fallback: f64) -> f64 {
    let v = w.target_velocity;
    if v.x.hypot(v.y) > 1e-6 {
        v.y.atan2(v.x)
    } else {
        fallback
    }
}

/// Closed-loop simulation advanced one sample at a time: detect, filter,
/// adapt, control, move.
pub struct Simulation {
    cfg: ScenarioConfig,
    intr: CameraIntrinsics,
    geom: TargetGeometry,
    script: TargetScript,
    world: WorldState,
    noise: DetectorNoise,
    estimator: TargetEstimator,
    prev: Option<(CameraCommand, Attitude)>,
    samples: usize,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.target.geometry();
        let intr = cfg.camera.intrinsics();
        Ok(Simulation {
            intr,
            geom,
            script: cfg.target.script(),
            world: cfg.initial_world(),
            noise: DetectorNoise::new(cfg.run.seed),
            estimator: TargetEstimator::new(cfg.estimator_config()?, geom.area(), intr),
            prev: None,
            samples: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn estimator(&self) -> &TargetEstimator {
        &self.estimator
    }

    /// Samples taken so far.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Processes the sample at the current time and advances the world by
    /// one `dt`. Filter failures surface as [`Error::FilterDivergence`].
    pub fn step(&mut self) -> Result<RunLogRow> {
        let cfg = &self.cfg;
        let intr = self.intr;
        let heading = target_heading(&self.world, cfg.target.heading);
        let detection = emulate_detection(
            &self.world,
            &self.geom,
            &intr,
            &cfg.detection,
            heading,
            &mut self.noise,
        );
        let z = detection.map(|d| d.measurement);

        let filter_result = if self.estimator.is_initialized() {
            let (cmd, att) = self.prev.expect("previous step exists once initialized");
            self.estimator
                .step(
                    &cmd,
                    &att,
                    cfg.run.dt,
                    z.as_ref(),
                    &self.world.camera_attitude,
                )
                .map(|_| ())
        } else if cfg.run.perfect_init {
            self.estimator.initialize_at(&self.world.true_state());
            Ok(())
        } else if let Some(z) = &z {
            self.estimator.initialize(z, &self.world.camera_attitude)
        } else {
            Ok(())
        };
        filter_result.map_err(|e| match e {
            e @ Error::FilterDivergence { .. } => e,
            other => Error::FilterDivergence {
                step: self.samples as u64,
                reason: other.to_string(),
            },
        })?;

        let world = &self.world;
        let truth = world.true_state();
        let estimate = self.estimator.estimate();
        let feedback_state: Option<SystemState> = match cfg.run.feedback {
            FeedbackSource::Truth => Some(truth),
            FeedbackSource::Estimate => estimate,
        };
        let (command, error) = match feedback_state {
            Some(s) => {
                let vq_cam = world.camera_attitude.world_to_camera(&s.velocity);
                let psi = bearing(&world.camera_position, &s.position);
                let out = control(&s.features(), &cfg.controller, &vq_cam, psi, &intr);
                (out.command, out.error)
            }
            None => (CameraCommand::zero(), Vec3::zeros()),
        };

        let relative = world.relative_position();
        let in_fov = project_target_box(world, &self.geom, &intr, cfg.detection.box_model, heading)
            .map(|bb| {
                let (u, v) = bb.center();
                intr.contains(u, v)
            })
            .unwrap_or(false);
        let filter = self.estimator.filter();
        let row = RunLogRow {
            t: world.time,
            truth: truth.to_vector().into(),
            estimate: estimate.map(|s| s.to_vector().into()),
            p_trace: filter.map(|f| f.covariance.trace()),
            q_diag: filter.map(|f| f.process_noise.diagonal().into()),
            detected: z.is_some(),
            measurement: z.map(|m| m.to_vector().into()),
            command: command.as_array(),
            visual_error: error.into(),
            rel_pos_err_pct: match estimate {
                Some(s) => Some(relative_position_error(
                    &s.position,
                    &world.target_position,
                    &relative,
                )?),
                None => None,
            },
            in_fov,
        };

        self.prev = Some((command, world.camera_attitude));
        self.world = step_world(
            world,
            &command,
            &self.script,
            cfg.run.dt,
            cfg.camera.lag_tau,
        )?;
        self.samples += 1;
        Ok(row)
    }
}

/// Runs the whole scenario. A filter divergence ends the run early; the
/// rows logged so far are kept and the outcome is flagged.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    let mut sim = Simulation::new(cfg)?;
    let mut rows = Vec::with_capacity(cfg.steps() + 1);
    let mut outcome = RunOutcome::Completed;
    for _ in 0..=cfg.steps() {
        match sim.step() {
            Ok(row) => rows.push(row),
            Err(Error::FilterDivergence { step, reason }) => {
                outcome = RunOutcome::Diverged { step, reason };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunLog { rows, outcome })
}

/// Paired runs that differ only in whether `Q` is re-estimated.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub adaptive: RunLog,
    pub fixed: RunLog,
}

/// Runs the scenario with adaptive `Q` on and off (fixed `Q` equals the
/// initial value). Both arms share the seed, so they see the same detector
/// noise and dropout sequence. The arms run on separate threads.
pub fn run_comparison(cfg: &ScenarioConfig) -> Result<Comparison> {
    cfg.validate()?;
    let mut adaptive_cfg = cfg.clone();
    adaptive_cfg.ukf.adaptive.enabled = true;
    let mut fixed_cfg = cfg.clone();
    fixed_cfg.ukf.adaptive.enabled = false;
    let (adaptive, fixed) = std::thread::scope(|s| {
        let a = s.spawn(|| run_scenario(&adaptive_cfg));
        let f = s.spawn(|| run_scenario(&fixed_cfg));
        (
            a.join().expect("adaptive arm panicked"),
            f.join().expect("fixed arm panicked"),
        )
    });
    Ok(Comparison {
        adaptive: adaptive?,
        fixed: fixed?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_reference_scenario() {
        let cfg = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.camera.position, [0.0, 5.5, 1.0]);
        assert_eq!(cfg.ukf.adaptive.window, 150);
        assert_eq!(cfg.steps(), 3000);
        assert!((cfg.metrics_from() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn serialized_config_parses_back() {
        let mut cfg = ScenarioConfig::default();
        cfg.detection.periodic_blackout = Some(crate::simulator::PeriodicBlackout {
            every: 10.0,
            length: 1.0,
            offset: 0.0,
        });
        cfg.detection.visibility = crate::simulator::Visibility::FullBox { margin: 4.0 };
        let text = cfg.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let field_of = |text: &str| match ScenarioConfig::from_toml_str(text) {
            Err(Error::InvalidConfig { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field_of("[detection]\np_drop = 2.0\n"), "detection.p_drop");
        assert_eq!(field_of("[ukf]\nalpha = \"big\"\n"), "ukf.alpha");
        assert!(field_of("[camera]\nfocal = 3.0\n").starts_with("camera"));
        assert_eq!(
            field_of("[[target.script]]\nduration = -1.0\nvelocity = [1.0, 0.0, 0.0]\n"),
            "target.script[0].duration"
        );
        assert_eq!(field_of("[run]\ndt = 0.0\n"), "run.dt");
        assert_eq!(field_of("[controller]\ngain = -1.0\n"), "controller.gain");
        assert_eq!(
            field_of("[ukf.adaptive]\nwarmup = 500\n"),
            "adaptive.warmup"
        );
    }

    #[test]
    fn short_run_logs_every_step() {
        let mut cfg = ScenarioConfig::default();
        cfg.run.duration = 1.0;
        let log = run_scenario(&cfg).unwrap();
        assert_eq!(log.outcome, RunOutcome::Completed);
        assert_eq!(log.rows.len(), 51);
        assert!((log.rows[1].t - 0.02).abs() < 1e-12);
        assert!(log.rows.iter().any(|r| r.estimate.is_some()));
    }
}
