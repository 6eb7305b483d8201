//! Error metrics over a run log.
//!
//! The relative position error is the norm of the position error divided by
//! the true camera-to-target range, in percent.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::log::{RunLogRow, RunOutcome, LOG_SCHEMA};

pub const METRICS_SCHEMA: &str = "boxtrack-metrics/1";

/// `100·|r̂_q − r_q| / |r_q/c|`
pub fn relative_position_error(estimate: &Vec3, truth: &Vec3, relative: &Vec3) -> Result<f64> {
    let range = relative.norm();
    if !(range >= 1e-6) {
        return Err(Error::DegenerateRange { range });
    }
    Ok(100.0 * (estimate - truth).norm() / range)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub t_from: f64,
    pub t_to: f64,
    /// Rows inside the interval.
    pub rows: usize,
    /// Rows inside the interval that carry an estimate.
    pub estimated_rows: usize,
    pub mean_rel_pos_err_pct: f64,
    pub max_rel_pos_err_pct: f64,
    pub position_rmse: f64,
    /// Per inertial axis.
    pub velocity_rmse: [f64; 3],
    pub velocity_rmse_norm: f64,
    pub in_fov_fraction: f64,
    pub detection_fraction: f64,
    pub mean_q_trace: f64,
    pub final_q_trace: f64,
    /// `trace(Q̂)` per estimated row.
    pub q_trace: Vec<f64>,
}

/// Aggregates over rows with `t_from <= t <= t_to`; error statistics use the
/// rows that have an estimate.
pub fn summarize(rows: &[RunLogRow], t_from: f64, t_to: f64) -> Result<RunMetrics> {
    let window: Vec<&RunLogRow> = rows
        .iter()
        .filter(|r| r.t >= t_from && r.t <= t_to)
        .collect();
    if window.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let est: Vec<&RunLogRow> = window
        .iter()
        .copied()
        .filter(|r| r.estimate.is_some())
        .collect();
    if est.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let n = est.len() as f64;

    let mut rel_sum = 0.0;
    let mut rel_max: f64 = 0.0;
    let mut pos_sq = 0.0;
    let mut vel_sq = [0.0; 3];
    let mut q_trace = Vec::with_capacity(est.len());
    for r in &est {
        let e = r.estimate.as_ref().expect("filtered");
        let rel = r.rel_pos_err_pct.unwrap_or(0.0);
        rel_sum += rel;
        rel_max = rel_max.max(rel);
        pos_sq += (0..3)
            .map(|i| (e[3 + i] - r.truth[3 + i]).powi(2))
            .sum::<f64>();
        for (i, acc) in vel_sq.iter_mut().enumerate() {
            *acc += (e[6 + i] - r.truth[6 + i]).powi(2);
        }
        q_trace.push(r.q_diag.map(|q| q.iter().sum()).unwrap_or(0.0));
    }
    let velocity_rmse = vel_sq.map(|s| (s / n).sqrt());
    let total = window.len() as f64;
    Ok(RunMetrics {
        t_from,
        t_to,
        rows: window.len(),
        estimated_rows: est.len(),
        mean_rel_pos_err_pct: rel_sum / n,
        max_rel_pos_err_pct: rel_max,
        position_rmse: (pos_sq / n).sqrt(),
        velocity_rmse,
        velocity_rmse_norm: (vel_sq.iter().sum::<f64>() / n).sqrt(),
        in_fov_fraction: window.iter().filter(|r| r.in_fov).count() as f64 / total,
        detection_fraction: window.iter().filter(|r| r.detected).count() as f64 / total,
        mean_q_trace: q_trace.iter().sum::<f64>() / n,
        final_q_trace: *q_trace.last().expect("non-empty"),
        q_trace,
    })
}

impl RunMetrics {
    /// Flat `key = value` block.
    pub fn to_text(&self, outcome: &RunOutcome) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "schema = {METRICS_SCHEMA}");
        let _ = writeln!(s, "log_schema = {LOG_SCHEMA}");
        let _ = writeln!(s, "rel_pos_err_definition = 100*|r_hat_q - r_q|/|r_q/c|");
        match outcome {
            RunOutcome::Completed => {
                let _ = writeln!(s, "outcome = completed");
            }
            RunOutcome::Diverged { step, reason } => {
                let _ = writeln!(s, "outcome = diverged");
                let _ = writeln!(s, "diverged_step = {step}");
                let _ = writeln!(s, "diverged_reason = {reason}");
            }
        }
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("t_from", format!("{}", self.t_from)),
            ("t_to", format!("{}", self.t_to)),
            ("rows", self.rows.to_string()),
            ("estimated_rows", self.estimated_rows.to_string()),
            (
                "mean_rel_pos_err_pct",
                format!("{}", self.mean_rel_pos_err_pct),
            ),
            (
                "max_rel_pos_err_pct",
                format!("{}", self.max_rel_pos_err_pct),
            ),
            ("position_rmse_m", format!("{}", self.position_rmse)),
            ("velocity_rmse_x_mps", format!("{}", self.velocity_rmse[0])),
            ("velocity_rmse_y_mps", format!("{}", self.velocity_rmse[1])),
            ("velocity_rmse_z_mps", format!("{}", self.velocity_rmse[2])),
            (
                "velocity_rmse_norm_mps",
                format!("{}", self.velocity_rmse_norm),
            ),
            ("in_fov_fraction", format!("{}", self.in_fov_fraction)),
            ("detection_fraction", format!("{}", self.detection_fraction)),
            ("mean_qhat_trace", format!("{}", self.mean_q_trace)),
            ("final_qhat_trace", format!("{}", self.final_q_trace)),
        ]
    }
}

/// Side-by-side table of adaptive versus fixed process noise.
pub fn comparison_table(adaptive: &RunMetrics, fixed: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<26} {:>16} {:>16} {:>10}",
        "metric", "adaptive_q", "fixed_q", "ratio"
    );
    let a = adaptive.pairs();
    let f = fixed.pairs();
    for ((key, av), (_, fv)) in a.iter().zip(&f) {
        let ratio = match (av.parse::<f64>(), fv.parse::<f64>()) {
            (Ok(x), Ok(y)) if y != 0.0 && !matches!(*key, "t_from" | "t_to") => {
                format!("{:.4}", x / y)
            }
            _ => "-".to_string(),
        };
        let _ = writeln!(s, "{key:<26} {av:>16.16} {fv:>16.16} {ratio:>10}");
    }
    s
}
