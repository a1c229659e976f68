//! Post-processing of simulated runs: reaching time of the sliding
//! variable, residual radius of the state and a chattering metric.
//!
//! Chattering is measured as the discrete total variation of the control
//! at a fixed step. The value grows without bound as the step shrinks for
//! a discontinuous control, so comparisons are only meaningful at equal
//! steps.

use nalgebra::DVector;

pub const DEFAULT_REACH_TOL: f64 = 1e-4;
pub const DEFAULT_REACH_WINDOW: f64 = 0.1;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;

/// First grid time `t_i` such that `norms[j] ≤ tol` for every `t_j` in
/// `[t_i, t_i + window]`. The window must fit inside the series.
pub fn reaching_time(t: &[f64], norms: &[f64], tol: f64, window: f64) -> Option<f64> {
    debug_assert_eq!(t.len(), norms.len());
    let t_last = *t.last()?;
    let slack = 1e-9 * window.max(1e-12);
    let mut start: Option<usize> = None;
    for (i, (&ti, &ni)) in t.iter().zip(norms).enumerate() {
        if ni <= tol {
            let s = *start.get_or_insert(i);
            if ti - t[s] >= window - slack {
                return Some(t[s]);
            }
        } else {
            start = None;
        }
        if start.is_none() && ti + window > t_last + slack {
            return None;
        }
    }
    None
}

/// `Σ ‖u_{i+1} - u_i‖`.
pub fn total_variation(series: &[DVector<f64>]) -> f64 {
    series.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum()
}

/// Total variation of a scalar series.
pub fn total_variation_scalar(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `sup ‖x‖` over the final `tail_fraction` of the series.
pub fn residual_radius(series: &[DVector<f64>], tail_fraction: f64) -> f64 {
    assert!(
        tail_fraction > 0.0 && tail_fraction <= 1.0,
        "tail fraction must lie in (0, 1], got {tail_fraction}"
    );
    if series.is_empty() {
        return 0.0;
    }
    let len = series.len();
    let tail = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    max_norm(&series[len - tail..])
}

pub fn max_norm(series: &[DVector<f64>]) -> f64 {
    series.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachingReport {
    pub t_reach: Option<f64>,
    pub tol: f64,
    pub window: f64,
    pub residual_radius: f64,
    pub control_total_variation: f64,
    pub max_control: f64,
}

impl ReachingReport {
    pub fn from_series(
        t: &[f64],
        w: &[DVector<f64>],
        x: &[DVector<f64>],
        u: &[DVector<f64>],
        tol: f64,
        window: f64,
        tail_fraction: f64,
    ) -> Self {
        let norms: Vec<f64> = w.iter().map(|v| v.norm()).collect();
        Self {
            t_reach: reaching_time(t, &norms, tol, window),
            tol,
            window,
            residual_radius: residual_radius(x, tail_fraction),
            control_total_variation: total_variation(u),
            max_control: max_norm(u),
        }
    }

    pub fn reached(&self) -> bool {
        self.t_reach.is_some()
    }
}
