use std::f64::consts::FRAC_PI_2;
use std::hint::black_box;

use boxtrack::adaptive_noise::{estimate_q, ResidualWindow};
use boxtrack::controller::control;
use boxtrack::estimator::DEFAULT_Q0;
use boxtrack::measurement::predict_measurement;
use boxtrack::simulator::TargetGeometry;
use boxtrack::ukf::sigma_points;
use boxtrack::{
    Attitude, CameraCommand, CameraIntrinsics, ControlConfig, EstimatorConfig, ScenarioConfig,
    Simulation, SystemState, TargetEstimator, UkfParams, Vec3,
};
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::SMatrix;

fn reference() -> (SystemState, Attitude, CameraIntrinsics, f64) {
    let attitude = Attitude::from_body_euler(0.0, 0.0, -FRAC_PI_2);
    let rel = Vec3::new(0.1, -0.05, 5.0);
    let target = Vec3::new(0.0, 0.0, 0.0);
    let state = SystemState::from_relative(&rel, target, Vec3::new(2.0, 0.0, 0.0));
    (
        state,
        attitude,
        CameraIntrinsics::default(),
        TargetGeometry::default().area(),
    )
}

fn bench_sigma_points(c: &mut Criterion) {
    let (state, ..) = reference();
    let mean = state.to_vector();
    let p = SMatrix::<f64, 9, 9>::from_diagonal(&DEFAULT_Q0.into()) * 10.0;
    let params = UkfParams::default();
    c.bench_function("sigma_points 9-dim", |b| {
        b.iter(|| sigma_points(black_box(&mean), black_box(&p), &params).unwrap())
    });
}

fn bench_estimator_step(c: &mut Criterion) {
    let (state, attitude, intr, area) = reference();
    let z = boxtrack::Measurement::from_vector(
        &predict_measurement(&state, area, &intr, &attitude).unwrap(),
    );
    let cmd = CameraCommand {
        linear: Vec3::new(2.0, 0.0, 0.0),
        angular: Vec3::zeros(),
    };
    let mut est = TargetEstimator::new(EstimatorConfig::default(), area, intr);
    est.initialize_at(&state);
    c.bench_function("estimator step with measurement", |b| {
        b.iter(|| {
            let mut e = est.clone();
            e.step(&cmd, &attitude, 0.02, Some(black_box(&z)), &attitude)
                .unwrap()
        })
    });
    c.bench_function("estimator step predict-only", |b| {
        b.iter(|| {
            let mut e = est.clone();
            e.step(&cmd, &attitude, 0.02, None, &attitude).unwrap()
        })
    });
}

fn bench_estimate_q(c: &mut Criterion) {
    let mut sim = Simulation::new(&ScenarioConfig::default()).unwrap();
    for _ in 0..400 {
        sim.step().unwrap();
    }
    let window: &ResidualWindow<9, 6> = sim.estimator().window();
    c.bench_function("estimate_q full window", |b| {
        b.iter(|| estimate_q(black_box(window)).unwrap())
    });
}

fn bench_control(c: &mut Criterion) {
    let (state, attitude, intr, _) = reference();
    let cfg = ControlConfig::default();
    let vq = attitude.world_to_camera(&state.velocity);
    c.bench_function("control law", |b| {
        b.iter(|| control(black_box(&state.features()), &cfg, &vq, 1.4, &intr))
    });
}

fn bench_closed_loop(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::default();
    cfg.run.duration = 1.0;
    c.bench_function("closed loop 1 s", |b| {
        b.iter(|| boxtrack::run_scenario(black_box(&cfg)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_sigma_points,
    bench_estimator_step,
    bench_estimate_q,
    bench_control,
    bench_closed_loop
);
criterion_main!(benches);
