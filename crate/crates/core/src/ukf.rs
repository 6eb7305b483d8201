//! Scaled unscented Kalman filter over fixed-size state and measurement
//! spaces.
//!
//! Moments are accumulated from offsets relative to the central sigma point,
//! `d_i = ξ_i − ξ_0`, so the large negative central weight produced by a
//! small `α` only ever multiplies the (small) mean shift `x̄ − ξ_0`.

use nalgebra::{Cholesky, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial diagonal jitter tried when a Cholesky factorization fails.
pub const JITTER_START: f64 = 1e-9;
/// Largest diagonal jitter before giving up.
pub const JITTER_MAX: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        UkfParams {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("ukf.alpha", "must lie in (0, 1]"));
        }
        if !self.beta.is_finite() {
            return Err(Error::config("ukf.beta", "must be finite"));
        }
        if !(n as f64 + self.kappa > 0.0) {
            return Err(Error::config("ukf.kappa", "n + kappa must be positive"));
        }
        Ok(())
    }

    /// `λ = α²(n + κ) − n`
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    /// Mean and covariance weights for `2n + 1` points.
    pub fn weights(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(n);
        let scale = n as f64 + lambda;
        let wi = 1.0 / (2.0 * scale);
        let mut wm = vec![wi; 2 * n + 1];
        let mut wc = vec![wi; 2 * n + 1];
        wm[0] = lambda / scale;
        wc[0] = wm[0] + (1.0 - self.alpha * self.alpha + self.beta);
        (wm, wc)
    }
}

/// Cholesky factorization with escalating diagonal jitter.
pub fn robust_cholesky<const N: usize>(
    m: &SMatrix<f64, N, N>,
) -> Option<Cholesky<f64, nalgebra::Const<N>>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(*m) {
        return Some(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut shifted = *m;
        for i in 0..N {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        jitter *= 2.0;
    }
    None
}

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet<const N: usize> {
    pub points: Vec<SVector<f64, N>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl<const N: usize> SigmaPointSet<N> {
    /// Weighted mean, accumulated around the central point.
    pub fn mean(&self) -> SVector<f64, N> {
        weighted_mean(&self.points, &self.mean_weights)
    }

    /// `Σ_i wc_i (ξ_i − mean)(ξ_i − mean)ᵀ`
    pub fn spread(&self, mean: &SVector<f64, N>) -> SMatrix<f64, N, N> {
        cross_spread(
            &self.points,
            mean,
            &self.points,
            mean,
            &self.mean_weights,
            &self.cov_weights,
        )
    }
}

fn weighted_mean<const D: usize>(points: &[SVector<f64, D>], wm: &[f64]) -> SVector<f64, D> {
    let center = points[0];
    let mut acc = SVector::<f64, D>::zeros();
    for (p, w) in points.iter().zip(wm).skip(1) {
        acc += (p - center) * *w;
    }
    center + acc
}

/// Weighted cross covariance of two point sets sharing weights, expanded
/// around the central point so the large central weight never multiplies a
/// full-size deviation.
fn cross_spread<const A: usize, const B: usize>(
    a: &[SVector<f64, A>],
    a_mean: &SVector<f64, A>,
    b: &[SVector<f64, B>],
    b_mean: &SVector<f64, B>,
    _wm: &[f64],
    wc: &[f64],
) -> SMatrix<f64, A, B> {
    let (a0, b0) = (a[0], b[0]);
    let mut second = SMatrix::<f64, A, B>::zeros();
    let mut first_a = SVector::<f64, A>::zeros();
    let mut first_b = SVector::<f64, B>::zeros();
    for i in 1..a.len() {
        let (da, db) = (a[i] - a0, b[i] - b0);
        second += (da * db.transpose()) * wc[i];
        first_a += da * wc[i];
        first_b += db * wc[i];
    }
    let total: f64 = wc.iter().sum();
    let ma = a_mean - a0;
    let mb = b_mean - b0;
    second - first_a * mb.transpose() - ma * first_b.transpose() + (ma * mb.transpose()) * total
}

/// Scaled sigma points of `(mean, cov)`.
pub fn sigma_points<const N: usize>(
    mean: &SVector<f64, N>,
    cov: &SMatrix<f64, N, N>,
    params: &UkfParams,
) -> Result<SigmaPointSet<N>> {
    let chol = robust_cholesky(cov).ok_or_else(|| Error::FilterDivergence {
        step: 0,
        reason: "covariance is not positive semi-definite".into(),
    })?;
    let scale = (N as f64 + params.lambda(N)).sqrt();
    let root = chol.l() * scale;
    let mut points = Vec::with_capacity(2 * N + 1);
    points.push(*mean);
    for i in 0..N {
        points.push(mean + root.column(i));
    }
    for i in 0..N {
        points.push(mean - root.column(i));
    }
    let (mean_weights, cov_weights) = params.weights(N);
    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<const N: usize> {
    pub mean: SVector<f64, N>,
    pub covariance: SMatrix<f64, N, N>,
    pub process_noise: SMatrix<f64, N, N>,
    pub step: u64,
}

impl<const N: usize> FilterState<N> {
    pub fn new(
        mean: SVector<f64, N>,
        covariance: SMatrix<f64, N, N>,
        process_noise: SMatrix<f64, N, N>,
    ) -> Self {
        FilterState {
            mean,
            covariance,
            process_noise,
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(self.covariance.iter())
            .all(|v| v.is_finite())
    }

    /// Symmetric to 1e-9 and Cholesky-factorizable (possibly with jitter).
    pub fn covariance_is_psd(&self) -> bool {
        let asym = (self.covariance - self.covariance.transpose()).amax();
        asym <= 1e-9 && robust_cholesky(&self.covariance).is_some()
    }

    fn diverged(&self, reason: impl Into<String>) -> Error {
        Error::FilterDivergence {
            step: self.step,
            reason: reason.into(),
        }
    }
}

/// Result of a time update.
#[derive(Debug, Clone)]
pub struct Prediction<const N: usize> {
    pub prior: FilterState<N>,
    /// Propagated sigma points, before process noise is added.
    pub propagated: SigmaPointSet<N>,
    /// `Σ wc_i (ξ_i − x̄)(ξ_i − x̄)ᵀ` of the propagated points.
    pub spread: SMatrix<f64, N, N>,
}

#[derive(Debug, Clone)]
pub struct Correction<const N: usize, const M: usize> {
    pub posterior: FilterState<N>,
    pub innovation: SVector<f64, M>,
    pub gain: SMatrix<f64, N, M>,
}

/// Time update through an arbitrary process model.
pub fn predict<const N: usize, F>(
    fs: &FilterState<N>,
    params: &UkfParams,
    mut process: F,
) -> Result<Prediction<N>>
where
    F: FnMut(&SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let sigma = sigma_points(&fs.mean, &fs.covariance, params)
        .map_err(|_| fs.diverged("prior covariance not PSD"))?;
    let mut points = Vec::with_capacity(sigma.points.len());
    for p in &sigma.points {
        let next = process(p).map_err(|e| fs.diverged(format!("process model failed: {e}")))?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(fs.diverged("non-finite propagated sigma point"));
        }
        points.push(next);
    }
    let propagated = SigmaPointSet {
        points,
        mean_weights: sigma.mean_weights,
        cov_weights: sigma.cov_weights,
    };
    let mean = propagated.mean();
    let spread = symmetrize(&propagated.spread(&mean));
    let covariance = symmetrize(&(spread + fs.process_noise));
    let prior = FilterState {
        mean,
        covariance,
        process_noise: fs.process_noise,
        step: fs.step + 1,
    };
    Ok(Prediction {
        prior,
        propagated,
        spread,
    })
}

/// Measurement update. Sigma points are redrawn from the prior.
pub fn correct<const N: usize, const M: usize, H>(
    prior: &FilterState<N>,
    z: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
    params: &UkfParams,
    mut measure: H,
) -> Result<Correction<N, M>>
where
    H: FnMut(&SVector<f64, N>) -> Result<SVector<f64, M>>,
{
    let sigma = sigma_points(&prior.mean, &prior.covariance, params)
        .map_err(|_| prior.diverged("prior covariance not PSD"))?;
    let mut zs = Vec::with_capacity(sigma.points.len());
    for p in &sigma.points {
        let zi =
            measure(p).map_err(|e| prior.diverged(format!("measurement model failed: {e}")))?;
        if !zi.iter().all(|v| v.is_finite()) {
            return Err(prior.diverged("non-finite predicted measurement"));
        }
        zs.push(zi);
    }
    let z_mean = weighted_mean(&zs, &sigma.mean_weights);
    let pzz = cross_spread(
        &zs,
        &z_mean,
        &zs,
        &z_mean,
        &sigma.mean_weights,
        &sigma.cov_weights,
    );
    let pxz = cross_spread(
        &sigma.points,
        &prior.mean,
        &zs,
        &z_mean,
        &sigma.mean_weights,
        &sigma.cov_weights,
    );
    let s = symmetrize(&(pzz + r));
    let chol = robust_cholesky(&s)
        .ok_or_else(|| prior.diverged("innovation covariance not invertible"))?;
    let gain: SMatrix<f64, N, M> = chol.solve(&pxz.transpose()).transpose();
    let innovation = z - z_mean;
    let mean = prior.mean + gain * innovation;
    let covariance = symmetrize(&(prior.covariance - gain * s * gain.transpose()));
    let posterior = FilterState {
        mean,
        covariance,
        process_noise: prior.process_noise,
        step: prior.step,
    };
    if !posterior.is_finite() {
        return Err(prior.diverged("non-finite posterior"));
    }
    if robust_cholesky(&posterior.covariance).is_none() {
        return Err(prior.diverged("posterior covariance lost positive semi-definiteness"));
    }
    Ok(Correction {
        posterior,
        innovation,
        gain,
    })
}

/// Everything a corrected step contributes to process-noise estimation.
#[derive(Debug, Clone)]
pub struct StepRecord<const N: usize, const M: usize> {
    pub step: u64,
    pub posterior_covariance: SMatrix<f64, N, N>,
    pub gain: SMatrix<f64, N, M>,
    pub innovation: SVector<f64, M>,
    pub predicted_points: SigmaPointSet<N>,
    pub predicted_mean: SVector<f64, N>,
}

impl<const N: usize, const M: usize> StepRecord<N, M> {
    /// `P + K ε εᵀ Kᵀ − Σ wc (ξ − X̂)(ξ − X̂)ᵀ`
    pub fn bracket(&self) -> SMatrix<f64, N, N> {
        let k_eps = self.gain * self.innovation;
        let spread = self.predicted_points.spread(&self.predicted_mean);
        symmetrize(&(self.posterior_covariance + k_eps * k_eps.transpose() - spread))
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<const N: usize, const M: usize> {
    pub state: FilterState<N>,
    /// Present only when a measurement was applied.
    pub record: Option<StepRecord<N, M>>,
}

/// Predict, then correct when a measurement is available.
pub fn step<const N: usize, const M: usize, F, H>(
    fs: &FilterState<N>,
    params: &UkfParams,
    process: F,
    measurement: Option<(&SVector<f64, M>, &SMatrix<f64, M, M>, H)>,
) -> Result<StepOutcome<N, M>>
where
    F: FnMut(&SVector<f64, N>) -> Result<SVector<f64, N>>,
    H: FnMut(&SVector<f64, N>) -> Result<SVector<f64, M>>,
{
    let prediction = predict(fs, params, process)?;
    let Some((z, r, measure)) = measurement else {
        return Ok(StepOutcome {
            state: prediction.prior,
            record: None,
        });
    };
    let corr = correct(&prediction.prior, z, r, params, measure)?;
    let record = StepRecord {
        step: corr.posterior.step,
        posterior_covariance: corr.posterior.covariance,
        gain: corr.gain,
        innovation: corr.innovation,
        predicted_mean: prediction.prior.mean,
        predicted_points: prediction.propagated,
    };
    Ok(StepOutcome {
        state: corr.posterior,
        record: Some(record),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    type V9 = SVector<f64, 9>;
    type M9 = SMatrix<f64, 9, 9>;

    #[test]
    fn unit_alpha_weights() {
        let p = UkfParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        };
        let set = sigma_points(&V9::zeros(), &M9::identity(), &p).unwrap();
        assert_eq!(set.points.len(), 19);
        assert_relative_eq!(set.mean_weights[0], 0.0);
        for w in &set.mean_weights[1..] {
            assert_relative_eq!(*w, 1.0 / 18.0, epsilon = 1e-15);
        }
        for i in 1..=9 {
            assert_relative_eq!(set.points[i][i - 1], 3.0, epsilon = 1e-12);
            assert_relative_eq!(set.points[i + 9][i - 1], -3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_covariance_is_jittered() {
        let mean = V9::from_element(1.5);
        let set = sigma_points(&mean, &M9::zeros(), &UkfParams::default()).unwrap();
        for p in &set.points {
            assert!((p - mean).amax() < 1e-6);
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut p = M9::identity();
        p[(0, 0)] = -1.0;
        assert!(sigma_points(&V9::zeros(), &p, &UkfParams::default()).is_err());
    }

    #[test]
    fn reconstructs_mean_and_covariance() {
        let mean = V9::from_fn(|i, _| i as f64 * 0.3 - 1.0);
        let a = M9::from_fn(|i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let cov = a * a.transpose() + M9::identity() * 0.05;
        let set = sigma_points(&mean, &cov, &UkfParams::default()).unwrap();
        let m = set.mean();
        assert!((m - mean).amax() < 1e-9);
        // identity map: spread is the covariance (β − α² term vanishes as m = 0)
        assert!((set.spread(&m) - cov).amax() < 1e-8);
    }

    #[test]
    fn identity_predict_adds_process_noise() {
        let q = M9::from_diagonal(&V9::from_fn(|i, _| 0.01 * (i + 1) as f64));
        let fs = FilterState::new(V9::zeros(), M9::identity(), q);
        let pred = predict(&fs, &UkfParams::default(), |x| Ok(*x)).unwrap();
        assert!((pred.prior.covariance - (M9::identity() + q)).amax() < 1e-9);
        assert!((pred.prior.mean).amax() < 1e-12);
        assert_eq!(pred.prior.step, 1);
    }

    #[test]
    fn exact_measurement_leaves_mean() {
        let fs = FilterState::new(
            Vector2::new(1.0, 2.0),
            Matrix2::identity(),
            Matrix2::zeros(),
        );
        let z = Vector2::new(1.0, 2.0);
        let c = correct(&fs, &z, &Matrix2::identity(), &UkfParams::default(), |x| {
            Ok(*x)
        })
        .unwrap();
        assert!(c.innovation.amax() < 1e-9);
        assert!((c.posterior.mean - fs.mean).amax() < 1e-9);
        assert!(c.posterior.covariance.trace() < fs.covariance.trace());
    }

    #[test]
    fn predict_only_step_has_no_record() {
        let fs = FilterState::new(
            Vector2::new(1.0, 2.0),
            Matrix2::identity(),
            Matrix2::identity() * 0.1,
        );
        let out = step::<2, 2, _, fn(&Vector2<f64>) -> Result<Vector2<f64>>>(
            &fs,
            &UkfParams::default(),
            |x| Ok(*x),
            None,
        )
        .unwrap();
        assert!(out.record.is_none());
        assert!(out.state.covariance.trace() > fs.covariance.trace());
    }

    #[test]
    fn non_finite_process_is_divergence() {
        let fs = FilterState::new(
            Vector2::new(1.0, 2.0),
            Matrix2::identity(),
            Matrix2::zeros(),
        );
        let r = predict(&fs, &UkfParams::default(), |_| {
            Ok(Vector2::new(f64::NAN, 0.0))
        });
        assert!(matches!(r, Err(Error::FilterDivergence { .. })));
    }

    #[test]
    fn params_validation() {
        assert!(UkfParams {
            alpha: 0.0,
            ..Default::default()
        }
        .validate(9)
        .is_err());
        assert!(UkfParams {
            alpha: 1.5,
            ..Default::default()
        }
        .validate(9)
        .is_err());
        assert!(UkfParams {
            kappa: -9.0,
            ..Default::default()
        }
        .validate(9)
        .is_err());
        assert!(UkfParams::default().validate(9).is_ok());
    }

    proptest! {
        #[test]
        fn mean_weights_sum_to_one(alpha in 1e-4..1.0f64, beta in 0.0..4.0f64, kappa in -8.5..5.0f64) {
            let p = UkfParams { alpha, beta, kappa };
            let (wm, wc) = p.weights(9);
            let s: f64 = wm.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6 * wm[0].abs().max(1.0));
            prop_assert!((wc[0] - wm[0] - (1.0 - alpha * alpha + beta)).abs() < 1e-6 * wm[0].abs().max(1.0));
        }

        #[test]
        fn sigma_mean_reproduces_generator(v in proptest::array::uniform9(-50.0..50.0f64), s in 0.01..10.0f64) {
            let mean = V9::from(v);
            let set = sigma_points(&mean, &(M9::identity() * s), &UkfParams::default()).unwrap();
            prop_assert!((set.mean() - mean).amax() < 1e-9);
        }
    }
}
