//! Moving-window estimate of the process-noise covariance.
//!
//! Each corrected filter step contributes the bracket
//! `P_k + K_k ε_k ε_kᵀ K_kᵀ − Σ_i wc_i (ξ_i − X̂)(ξ_i − X̂)ᵀ`; the estimate is a
//! weighted sum of the brackets currently held in the window, projected onto
//! a positive diagonal before it is fed back into the filter.

use std::collections::VecDeque;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ukf::{FilterState, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowWeighting {
    /// `v_j = 1 / occupancy`
    Uniform,
    /// `v_j ∝ decay^age`, newest record has age 0.
    Exponential { decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveNoiseConfig {
    pub enabled: bool,
    /// Window capacity `N`.
    pub window: usize,
    /// Records required before the first update.
    pub warmup: usize,
    /// Floor applied to the projected diagonal.
    pub q_min: f64,
    pub weighting: WindowWeighting,
}

impl Default for AdaptiveNoiseConfig {
    fn default() -> Self {
        AdaptiveNoiseConfig {
            enabled: true,
            window: 150,
            warmup: 150,
            q_min: 1e-12,
            weighting: WindowWeighting::Uniform,
        }
    }
}

impl AdaptiveNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("adaptive.window", "must be at least 1"));
        }
        if self.warmup == 0 || self.warmup > self.window {
            return Err(Error::config("adaptive.warmup", "must lie in 1..=window"));
        }
        if !(self.q_min > 0.0 && self.q_min.is_finite()) {
            return Err(Error::config("adaptive.q_min", "must be positive"));
        }
        if let WindowWeighting::Exponential { decay } = self.weighting {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::config(
                    "adaptive.weighting.decay",
                    "must lie in (0, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// Ring buffer of step records. The bracket of each record is computed once
/// on insertion.
#[derive(Debug, Clone)]
pub struct ResidualWindow<const N: usize, const M: usize> {
    capacity: usize,
    weighting: WindowWeighting,
    records: VecDeque<StepRecord<N, M>>,
    brackets: VecDeque<SMatrix<f64, N, N>>,
}

impl<const N: usize, const M: usize> ResidualWindow<N, M> {
    pub fn new(capacity: usize) -> Self {
        Self::with_weighting(capacity, WindowWeighting::Uniform)
    }

    pub fn with_weighting(capacity: usize, weighting: WindowWeighting) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        ResidualWindow {
            capacity,
            weighting,
            records: VecDeque::with_capacity(capacity),
            brackets: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, record: StepRecord<N, M>) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
            self.brackets.pop_front();
        }
        self.brackets.push_back(record.bracket());
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord<N, M>> {
        self.records.iter()
    }

    /// Weights `v_j` in insertion order (oldest first). They sum to one.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.records.len();
        match self.weighting {
            WindowWeighting::Uniform => vec![1.0 / n as f64; n],
            WindowWeighting::Exponential { decay } => {
                let raw: Vec<f64> = (0..n).map(|i| decay.powi((n - 1 - i) as i32)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|w| w / total).collect()
            }
        }
    }
}

/// Windowed process-noise covariance estimate.
pub fn estimate_q<const N: usize, const M: usize>(
    window: &ResidualWindow<N, M>,
) -> Result<SMatrix<f64, N, N>> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut q = SMatrix::<f64, N, N>::zeros();
    for (b, v) in window.brackets.iter().zip(window.weights()) {
        q += b * v;
    }
    Ok(q)
}

/// `diag{|Q(1,1)|, …, |Q(n,n)|}` with entries floored at `q_min`.
pub fn diagonalize_abs<const N: usize>(q: &SMatrix<f64, N, N>, q_min: f64) -> SMatrix<f64, N, N> {
    let d = SVector::<f64, N>::from_fn(|i, _| q[(i, i)].abs().max(q_min));
    SMatrix::from_diagonal(&d)
}

/// Replaces the filter's process noise once the window is warm.
/// Returns whether an update happened.
pub fn update_filter_q<const N: usize, const M: usize>(
    fs: &mut FilterState<N>,
    window: &ResidualWindow<N, M>,
    cfg: &AdaptiveNoiseConfig,
) -> Result<bool> {
    if !cfg.enabled || window.len() < cfg.warmup {
        return Ok(false);
    }
    fs.process_noise = diagonalize_abs(&estimate_q(window)?, cfg.q_min);
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ukf::SigmaPointSet;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    /// A record whose sigma-point spread equals `spread_diag` exactly: two
    /// symmetric points per axis with weight 1/2 each about a zero centre.
    fn record(
        p: Matrix2<f64>,
        gain: Matrix2<f64>,
        eps: Vector2<f64>,
        spread_diag: [f64; 2],
    ) -> StepRecord<2, 2> {
        let (a, b) = (spread_diag[0].sqrt(), spread_diag[1].sqrt());
        let points = vec![
            Vector2::zeros(),
            Vector2::new(a, 0.0),
            Vector2::new(0.0, b),
            Vector2::new(-a, 0.0),
            Vector2::new(0.0, -b),
        ];
        StepRecord {
            step: 0,
            posterior_covariance: p,
            gain,
            innovation: eps,
            predicted_points: SigmaPointSet {
                points,
                mean_weights: vec![-1.0, 0.5, 0.5, 0.5, 0.5],
                cov_weights: vec![2.0, 0.5, 0.5, 0.5, 0.5],
            },
            predicted_mean: Vector2::zeros(),
        }
    }

    #[test]
    fn empty_window_is_an_error() {
        let w = ResidualWindow::<2, 2>::new(3);
        assert_eq!(estimate_q(&w), Err(Error::EmptyWindow));
    }

    #[test]
    fn bracket_cancels_when_spread_matches() {
        let mut w = ResidualWindow::new(5);
        let p = Matrix2::from_diagonal(&Vector2::new(2.0, 3.0));
        w.push(record(p, Matrix2::identity(), Vector2::zeros(), [2.0, 3.0]));
        assert!(estimate_q(&w).unwrap().amax() < 1e-12);

        // P + Kε εᵀKᵀ equals the spread
        let mut w = ResidualWindow::new(5);
        let p = Matrix2::from_diagonal(&Vector2::new(1.0, 3.0));
        w.push(record(
            p,
            Matrix2::identity(),
            Vector2::new(1.0, 0.0),
            [2.0, 3.0],
        ));
        assert!(estimate_q(&w).unwrap().amax() < 1e-12);
    }

    #[test]
    fn two_identical_records_give_outer_product() {
        let mut w = ResidualWindow::new(5);
        let p = Matrix2::from_diagonal(&Vector2::new(2.0, 3.0));
        let gain = Matrix2::new(1.0, 0.5, 0.0, 2.0);
        let eps = Vector2::new(0.4, -0.3);
        let c = gain * eps;
        w.push(record(p, gain, eps, [2.0, 3.0]));
        w.push(record(p, gain, eps, [2.0, 3.0]));
        let q = estimate_q(&w).unwrap();
        assert!((q - c * c.transpose()).amax() < 1e-12);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut w = ResidualWindow::new(2);
        let p = Matrix2::identity();
        for s in 0..3u64 {
            let mut r = record(p, Matrix2::identity(), Vector2::zeros(), [1.0, 1.0]);
            r.step = s;
            w.push(r);
        }
        assert_eq!(w.len(), 2);
        assert_eq!(w.records().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn diagonal_projection() {
        let q = Matrix2::new(-2.0, 0.5, 0.5, 3.0);
        assert_eq!(diagonalize_abs(&q, 1e-12), Matrix2::new(2.0, 0.0, 0.0, 3.0));
        let d = Matrix2::new(0.2, 0.0, 0.0, 0.7);
        assert_eq!(diagonalize_abs(&d, 1e-12), d);
        assert_eq!(
            diagonalize_abs(&Matrix2::zeros(), 1e-12),
            Matrix2::identity() * 1e-12
        );
    }

    #[test]
    fn warmup_keeps_initial_q() {
        let cfg = AdaptiveNoiseConfig {
            window: 3,
            warmup: 3,
            ..Default::default()
        };
        let q0 = Matrix2::identity() * 0.5;
        let mut fs = FilterState::new(Vector2::zeros(), Matrix2::identity(), q0);
        let mut w = ResidualWindow::new(3);
        let p = Matrix2::from_diagonal(&Vector2::new(2.0, 3.0));
        for _ in 0..2 {
            w.push(record(
                p,
                Matrix2::identity(),
                Vector2::new(0.1, 0.0),
                [2.0, 3.0],
            ));
            assert!(!update_filter_q(&mut fs, &w, &cfg).unwrap());
            assert_eq!(fs.process_noise, q0);
        }
        w.push(record(
            p,
            Matrix2::identity(),
            Vector2::new(0.1, 0.0),
            [2.0, 3.0],
        ));
        assert!(update_filter_q(&mut fs, &w, &cfg).unwrap());
        assert!((fs.process_noise[(0, 0)] - 0.01).abs() < 1e-12);
        assert_eq!(fs.process_noise[(1, 1)], 1e-12);

        let off = AdaptiveNoiseConfig {
            enabled: false,
            ..cfg
        };
        let mut fs2 = FilterState::new(Vector2::zeros(), Matrix2::identity(), q0);
        assert!(!update_filter_q(&mut fs2, &w, &off).unwrap());
    }

    #[test]
    fn exponential_weights_sum_to_one_and_favor_recent() {
        let mut w = ResidualWindow::with_weighting(4, WindowWeighting::Exponential { decay: 0.5 });
        for _ in 0..4 {
            w.push(record(
                Matrix2::identity(),
                Matrix2::identity(),
                Vector2::zeros(),
                [1.0, 1.0],
            ));
        }
        let v = w.weights();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(v[3] > v[0]);
    }

    #[test]
    fn config_validation() {
        assert!(AdaptiveNoiseConfig::default().validate().is_ok());
        let bad = AdaptiveNoiseConfig {
            warmup: 200,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_is_positive_diagonal(v in proptest::array::uniform4(-5.0..5.0f64)) {
            let q = Matrix2::new(v[0], v[1], v[2], v[3]);
            let d = diagonalize_abs(&q, 1e-12);
            prop_assert_eq!(d[(0, 1)], 0.0);
            prop_assert_eq!(d[(1, 0)], 0.0);
            prop_assert!(d[(0, 0)] > 0.0 && d[(1, 1)] > 0.0);
        }

        #[test]
        fn uniform_estimate_is_order_invariant(
            e in proptest::collection::vec(proptest::array::uniform2(-1.0..1.0f64), 2..6)
        ) {
            let p = Matrix2::identity();
            let mut fwd = ResidualWindow::new(10);
            let mut rev = ResidualWindow::new(10);
            for x in &e {
                fwd.push(record(p, Matrix2::identity(), Vector2::new(x[0], x[1]), [1.0, 1.0]));
            }
            for x in e.iter().rev() {
                rev.push(record(p, Matrix2::identity(), Vector2::new(x[0], x[1]), [1.0, 1.0]));
            }
            let a = estimate_q(&fwd).unwrap();
            let b = estimate_q(&rev).unwrap();
            prop_assert!((a - b).amax() < 1e-12);
        }

        #[test]
        fn identical_records_equal_single_bracket(n in 1usize..8, x in -1.0..1.0f64) {
            let r = record(Matrix2::identity() * 2.0, Matrix2::identity(), Vector2::new(x, 0.3), [1.0, 1.5]);
            let mut w = ResidualWindow::new(10);
            for _ in 0..n {
                w.push(r.clone());
            }
            prop_assert!((estimate_q(&w).unwrap() - r.bracket()).amax() < 1e-12);
        }
    }
}
