//! Solution history with delayed-state lookups.
//!
//! The buffer keeps at least `horizon` time units behind the newest sample
//! (plus a two-step stencil margin) and answers `x(t)` for any `t` in the
//! retained span. Queries on a stored time stamp return the stored vector
//! unchanged. Between stamps the buffer uses cubic Hermite interpolation
//! when both neighbours carry a derivative, linear interpolation otherwise.

use std::collections::VecDeque;
use std::io::{self, Write};

use nalgebra::DVector;
use thiserror::Error;

/// Relative tolerance (in units of the local step) for snapping a query
/// onto a stored time stamp.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error("step {step} does not divide horizon {horizon}")]
    StepDoesNotDivideHorizon { step: f64, horizon: f64 },
    #[error("time {t} is not after the last stored time {last}")]
    NonMonotoneTime { t: f64, last: f64 },
    #[error("time {t} is outside the retained span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Interpolation used between stored samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpOrder {
    Linear,
    /// Cubic Hermite; falls back to linear where a derivative is missing.
    Cubic,
}

#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    n: usize,
    step: f64,
    horizon: f64,
    interp: InterpOrder,
    times: VecDeque<f64>,
    states: VecDeque<DVector<f64>>,
    derivs: VecDeque<Option<DVector<f64>>>,
}

/// `true` when `value / step` is an integer up to a relative tolerance.
pub fn divides(step: f64, value: f64) -> bool {
    let r = value / step;
    (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

impl HistoryBuffer {
    /// Seeds the buffer on `[-horizon, 0]` with samples `phi(t)` at the grid
    /// `t_i = (i - N) * step`, `N = horizon / step`.
    pub fn init_from_phi<F>(
        n: usize,
        phi: F,
        derivative: Option<&dyn Fn(f64) -> DVector<f64>>,
        horizon: f64,
        step: f64,
    ) -> Result<Self, HistoryError>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        if !(step > 0.0) || !step.is_finite() {
            return Err(HistoryError::Invalid(format!("step must be positive, got {step}")));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(HistoryError::Invalid(format!(
                "horizon must be nonnegative, got {horizon}"
            )));
        }
        if !divides(step, horizon) {
            return Err(HistoryError::StepDoesNotDivideHorizon { step, horizon });
        }
        let count = (horizon / step).round() as i64;
        let mut buf = Self::empty(n, step, horizon);
        for i in -count..=0 {
            let t = i as f64 * step;
            let x = phi(t);
            if x.len() != n {
                return Err(HistoryError::Invalid(format!(
                    "initial function returned dimension {}, expected {n}",
                    x.len()
                )));
            }
            buf.times.push_back(t);
            buf.states.push_back(x);
            buf.derivs.push_back(derivative.map(|d| d(t)));
        }
        Ok(buf)
    }

    /// An empty buffer; the first `push` sets the origin.
    pub fn empty(n: usize, step: f64, horizon: f64) -> Self {
        Self {
            n,
            step,
            horizon,
            interp: InterpOrder::Cubic,
            times: VecDeque::new(),
            states: VecDeque::new(),
            derivs: VecDeque::new(),
        }
    }

    pub fn with_interp(mut self, interp: InterpOrder) -> Self {
        self.interp = interp;
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.front().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.back().copied()
    }

    /// Appends a sample and evicts data older than `t - horizon` minus a
    /// two-step margin.
    pub fn push(
        &mut self,
        t: f64,
        state: DVector<f64>,
        derivative: Option<DVector<f64>>,
    ) -> Result<(), HistoryError> {
        if let Some(last) = self.last_time() {
            if !(t > last) {
                return Err(HistoryError::NonMonotoneTime { t, last });
            }
        }
        if state.len() != self.n || derivative.as_ref().is_some_and(|d| d.len() != self.n) {
            return Err(HistoryError::Invalid(format!(
                "pushed vector dimension does not match {}",
                self.n
            )));
        }
        self.times.push_back(t);
        self.states.push_back(state);
        self.derivs.push_back(derivative);
        self.evict(t);
        Ok(())
    }

    /// Replaces the derivative stored with the newest sample.
    pub fn set_last_derivative(&mut self, derivative: DVector<f64>) {
        if let Some(slot) = self.derivs.back_mut() {
            *slot = Some(derivative);
        }
    }

    fn evict(&mut self, t_now: f64) {
        let keep_from = t_now - self.horizon - 2.0 * self.step;
        // the sample at index 1 is still old enough: the front is not needed
        while self.times.len() > 2 && self.times[1] <= keep_from {
            self.times.pop_front();
            self.states.pop_front();
            self.derivs.pop_front();
        }
    }

    fn span_error(&self, t: f64) -> HistoryError {
        HistoryError::OutOfSpan {
            t,
            start: self.first_time().unwrap_or(f64::NAN),
            end: self.last_time().unwrap_or(f64::NAN),
        }
    }

    /// Index `i` with `times[i] <= t < times[i+1]`, or an exact hit.
    fn locate(&self, t: f64) -> Result<Located, HistoryError> {
        let (first, last) = match (self.first_time(), self.last_time()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(self.span_error(t)),
        };
        let tol = SNAP_TOL * self.step;
        if !(t >= first - tol && t <= last + tol) {
            return Err(self.span_error(t));
        }
        let i = self.times.partition_point(|&s| s <= t);
        // i is the first index with times[i] > t
        if i > 0 && (t - self.times[i - 1]).abs() <= tol {
            return Ok(Located::Exact(i - 1));
        }
        if i < self.times.len() && (self.times[i] - t).abs() <= tol {
            return Ok(Located::Exact(i));
        }
        Ok(Located::Between(i - 1))
    }

    /// Interpolated state at `t`.
    pub fn sample(&self, t: f64) -> Result<DVector<f64>, HistoryError> {
        match self.locate(t)? {
            Located::Exact(i) => Ok(self.states[i].clone()),
            Located::Between(i) => Ok(self.interpolate(i, t)),
        }
    }

    /// Writes the interpolated state at `t` into `out` without allocating
    /// on the exact-hit path.
    pub fn sample_into(&self, t: f64, out: &mut DVector<f64>) -> Result<(), HistoryError> {
        match self.locate(t)? {
            Located::Exact(i) => out.copy_from(&self.states[i]),
            Located::Between(i) => out.copy_from(&self.interpolate(i, t)),
        }
        Ok(())
    }

    fn interpolate(&self, i: usize, t: f64) -> DVector<f64> {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (x0, x1) = (&self.states[i], &self.states[i + 1]);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        match (self.interp, &self.derivs[i], &self.derivs[i + 1]) {
            (InterpOrder::Cubic, Some(d0), Some(d1)) => {
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                x0 * h00 + d0 * (h10 * dt) + x1 * h01 + d1 * (h11 * dt)
            }
            _ => x0 * (1.0 - s) + x1 * s,
        }
    }

    /// Largest Euclidean norm over the stored samples in `[t0, t1]`.
    pub fn sup_norm(&self, t0: f64, t1: f64) -> Result<f64, HistoryError> {
        if t1 < t0 {
            return Err(HistoryError::Invalid(format!("empty window [{t0}, {t1}]")));
        }
        self.locate(t0)?;
        self.locate(t1)?;
        let tol = SNAP_TOL * self.step;
        Ok(self
            .times
            .iter()
            .zip(&self.states)
            .filter(|(&s, _)| s >= t0 - tol && s <= t1 + tol)
            .map(|(_, x)| x.norm())
            .fold(0.0, f64::max))
    }

    /// Stored samples in time order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, &DVector<f64>, Option<&DVector<f64>>)> {
        self.times
            .iter()
            .zip(&self.states)
            .zip(&self.derivs)
            .map(|((&t, x), d)| (t, x, d.as_ref()))
    }

    /// CSV export: header `t,x1..xn[,dx1..dxn]` (derivative columns only
    /// when every sample carries one), 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let with_deriv = self.derivs.iter().all(Option::is_some) && !self.derivs.is_empty();
        let mut header = vec!["t".to_owned()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        if with_deriv {
            header.extend((1..=self.n).map(|i| format!("dx{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (t, x, d) in self.iter() {
            let mut row = vec![crate::fmt_f64(t)];
            row.extend(x.iter().map(|v| crate::fmt_f64(*v)));
            if with_deriv {
                row.extend(d.unwrap().iter().map(|v| crate::fmt_f64(*v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

enum Located {
    Exact(usize),
    Between(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::SQRT_2;

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn constant_seed() {
        let buf = HistoryBuffer::init_from_phi(2, |_| v2(1.0, 1.0), None, 4.0, 0.01).unwrap();
        assert_eq!(buf.len(), 401);
        assert_eq!(buf.sample(-2.0).unwrap(), v2(1.0, 1.0));
        assert_eq!(buf.first_time(), Some(-4.0));
        assert_eq!(buf.last_time(), Some(0.0));
        assert_abs_diff_eq!(buf.sup_norm(-4.0, 0.0).unwrap(), SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn linear_seed_reproduced() {
        let buf = HistoryBuffer::init_from_phi(2, |t| v2(t, -t), None, 4.0, 0.01).unwrap();
        let x = buf.sample(-1.0).unwrap();
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
        let x = buf.sample(-1.2345).unwrap();
        assert_abs_diff_eq!(x[0], -1.2345, epsilon = 1e-14);
    }

    #[test]
    fn step_must_divide_horizon() {
        let err = HistoryBuffer::init_from_phi(1, |_| DVector::zeros(1), None, 1.0, 0.3).unwrap_err();
        assert!(matches!(err, HistoryError::StepDoesNotDivideHorizon { .. }));
    }

    #[test]
    fn push_rejects_non_monotone_time() {
        let mut buf = HistoryBuffer::init_from_phi(1, |_| DVector::zeros(1), None, 1.0, 0.1).unwrap();
        let err = buf.push(0.0, DVector::zeros(1), None).unwrap_err();
        assert!(matches!(err, HistoryError::NonMonotoneTime { .. }));
    }

    #[test]
    fn pushed_state_is_returned_exactly() {
        let mut buf = HistoryBuffer::init_from_phi(2, |_| v2(0.0, 0.0), None, 1.0, 0.1).unwrap();
        let x = v2(0.123456789, -9.87654321e-7);
        buf.push(0.1, x.clone(), None).unwrap();
        assert_eq!(buf.sample(0.1).unwrap(), x);
    }

    #[test]
    fn eviction_keeps_horizon() {
        let mut buf = HistoryBuffer::empty(1, 0.01, 0.05);
        for i in 0..10 {
            buf.push(i as f64 * 0.01, DVector::from_element(1, i as f64), None).unwrap();
        }
        let t_now = 0.09;
        let oldest = buf.first_time().unwrap();
        assert!(oldest <= t_now - 0.05);
        // two-step margin: nothing older than one step before 0.09 - 0.05 - 0.02
        assert!(oldest >= 0.01 - 1e-12);
        assert!(buf.sample(t_now - 0.05).is_ok());
    }

    #[test]
    fn midpoint_of_linear_data_is_average() {
        let mut buf = HistoryBuffer::empty(1, 1.0, 10.0);
        buf.push(0.0, DVector::from_element(1, 2.0), None).unwrap();
        buf.push(1.0, DVector::from_element(1, 5.0), None).unwrap();
        assert_eq!(buf.sample(0.5).unwrap()[0], 3.5);
    }

    #[test]
    fn cubic_hermite_reproduces_cubic() {
        let f = |t: f64| DVector::from_element(1, t * t * t);
        let df = |t: f64| DVector::from_element(1, 3.0 * t * t);
        let buf = HistoryBuffer::init_from_phi(1, f, Some(&df), 2.0, 0.01).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..200 {
            let t = -2.0 + (i as f64 + 0.5) * 0.01;
            worst = worst.max((buf.sample(t).unwrap()[0] - t * t * t).abs());
        }
        assert!(worst <= 1e-9, "worst error {worst}");
    }

    #[test]
    fn out_of_span_queries_fail() {
        let buf = HistoryBuffer::init_from_phi(1, |_| DVector::zeros(1), None, 1.0, 0.1).unwrap();
        assert!(matches!(buf.sample(0.05), Err(HistoryError::OutOfSpan { .. })));
        assert!(matches!(buf.sample(-1.5), Err(HistoryError::OutOfSpan { .. })));
        assert!(matches!(buf.sup_norm(-2.0, 0.0), Err(HistoryError::OutOfSpan { .. })));
    }

    #[test]
    fn sup_norm_cases() {
        let zero = HistoryBuffer::init_from_phi(2, |_| v2(0.0, 0.0), None, 4.0, 0.01).unwrap();
        assert_eq!(zero.sup_norm(-4.0, 0.0).unwrap(), 0.0);
        let sine = HistoryBuffer::init_from_phi(2, |t| v2(t.sin(), 0.0), None, 4.0, 0.01).unwrap();
        // dense oracle: |sin| peaks at -π/2 inside [-4, 0]
        let dense = (0..=400_000)
            .map(|i| (-4.0 + i as f64 * 1e-5_f64).sin().abs())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(dense, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sine.sup_norm(-4.0, 0.0).unwrap(), dense, epsilon = 1e-4);
    }

    #[test]
    fn continuity_at_grid_points() {
        let buf = HistoryBuffer::init_from_phi(1, |t| DVector::from_element(1, (3.0 * t).cos()), None, 1.0, 0.1)
            .unwrap();
        for i in 1..10 {
            let t = -1.0 + i as f64 * 0.1;
            let at = buf.sample(t).unwrap()[0];
            let left = buf.sample(t - 1e-11).unwrap()[0];
            let right = buf.sample(t + 1e-11).unwrap()[0];
            assert!((at - left).abs() <= 1e-12 && (at - right).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_export_header_and_rows() {
        let f = |t: f64| DVector::from_element(2, t);
        let df = |_t: f64| DVector::from_element(2, 1.0);
        let buf = HistoryBuffer::init_from_phi(2, f, Some(&df), 0.2, 0.1).unwrap();
        let mut out = Vec::new();
        buf.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,dx1,dx2");
        assert_eq!(lines.len(), 4);
        let first: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(first[0], -0.2);
        assert_eq!(first[3], 1.0);
    }
}
