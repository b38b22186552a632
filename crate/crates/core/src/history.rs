//! Time-stamped signal storage with linear interpolation, plus the delay
//! description used to evaluate retarded measurements.
//!
//! Lookups at exactly-recorded times return the stored sample bit-for-bit;
//! between samples the value is linearly interpolated. Interpolation is linear
//! in the stored samples, which the regression construction downstream relies
//! on: any identity that holds at the stored samples survives interpolation.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use std::collections::VecDeque;
use std::sync::Arc;

/// Growing record of a matrix-valued signal sampled at strictly increasing
/// times, with optional pruning of samples older than a retention window.
#[derive(Debug, Clone)]
pub struct SignalHistory {
    rows: usize,
    cols: usize,
    times: VecDeque<f64>,
    samples: VecDeque<Matrix>,
    retention: Option<f64>,
}

impl SignalHistory {
    /// Empty history for a signal of fixed shape `rows x cols`.
    pub fn new(rows: usize, cols: usize) -> Self {
        SignalHistory {
            rows,
            cols,
            times: VecDeque::new(),
            samples: VecDeque::new(),
            retention: None,
        }
    }

    /// Keeps only samples newer than `window` before the latest append (one
    /// older bracketing sample is always retained so interpolation still
    /// covers the full window). Panics unless `window > 0`.
    pub fn set_retention(&mut self, window: f64) {
        assert!(window > 0.0, "retention window must be positive");
        self.retention = Some(window);
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Oldest retained sample time.
    pub fn first_time(&self) -> Option<f64> {
        self.times.front().copied()
    }

    /// Newest sample time.
    pub fn last_time(&self) -> Option<f64> {
        self.times.back().copied()
    }

    /// Newest sample and its time.
    pub fn latest(&self) -> Option<(f64, &Matrix)> {
        self.times.back().map(|t| (*t, self.samples.back().unwrap()))
    }

    /// Records `value` at time `t`, which must be finite and strictly greater
    /// than every previously recorded time.
    pub fn append(&mut self, t: f64, value: Matrix) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite { what: "history timestamp", t });
        }
        if value.shape() != (self.rows, self.cols) {
            return Err(Error::dimension(
                "history append",
                format!(
                    "expected {}x{}, got {}x{}",
                    self.rows,
                    self.cols,
                    value.rows(),
                    value.cols()
                ),
            ));
        }
        if let Some(&last) = self.times.back() {
            if t <= last {
                return Err(Error::NonMonotoneTime { t, last });
            }
        }
        self.times.push_back(t);
        self.samples.push_back(value);
        if let Some(window) = self.retention {
            let cutoff = t - window;
            // Keep one sample at or before the cutoff as interpolation anchor.
            while self.times.len() >= 2 && self.times[1] <= cutoff {
                self.times.pop_front();
                self.samples.pop_front();
            }
        }
        Ok(())
    }

    /// Value at time `tq`: the stored sample (bit-exact) when `tq` is a
    /// recorded time, otherwise the linear interpolation between neighbours.
    /// Errors when `tq` falls outside the retained range.
    pub fn sample(&self, tq: f64) -> Result<Matrix> {
        let (first, last) = match (self.first_time(), self.last_time()) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(Error::OutOfRange { t: tq, start: f64::NAN, end: f64::NAN });
            }
        };
        if !(tq >= first && tq <= last) {
            return Err(Error::OutOfRange { t: tq, start: first, end: last });
        }
        // Count of recorded times <= tq; at least 1 because tq >= first.
        let count = {
            let mut lo = 0usize;
            let mut hi = self.times.len();
            while lo < hi {
                let mid = (lo + hi) / 2;
                if self.times[mid] <= tq {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let idx = count - 1;
        if self.times[idx] == tq {
            return Ok(self.samples[idx].clone());
        }
        let (t_lo, t_hi) = (self.times[idx], self.times[idx + 1]);
        let alpha = (tq - t_lo) / (t_hi - t_lo);
        Ok(&self.samples[idx].scaled(1.0 - alpha) + &self.samples[idx + 1].scaled(alpha))
    }

    /// Like [`sample`](Self::sample) but clamps queries beyond the newest
    /// recorded time to the newest sample. Used when an integrator stage asks
    /// for a delayed value fractionally ahead of what has been recorded.
    pub fn sample_or_latest(&self, tq: f64) -> Result<Matrix> {
        match self.last_time() {
            Some(last) if tq >= last => Ok(self.samples.back().unwrap().clone()),
            _ => self.sample(tq),
        }
    }
}

/// Measurement delay `d(t)` with a known upper bound, shared by the plant and
/// the observer. The delay must return finite values in `[0, max_delay]` for
/// every queried time.
#[derive(Clone)]
pub struct DelayFunction {
    d: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    d_max: f64,
}

impl DelayFunction {
    /// Wraps an arbitrary delay profile; errors unless
    /// `0 <= d_max < infinity`.
    pub fn new(d: impl Fn(f64) -> f64 + Send + Sync + 'static, d_max: f64) -> Result<Self> {
        if !d_max.is_finite() || d_max < 0.0 {
            return Err(Error::Config(format!(
                "delay bound must be finite and non-negative, got {d_max}"
            )));
        }
        Ok(DelayFunction { d: Arc::new(d), d_max })
    }

    /// Constant delay; panics on a negative or non-finite value.
    pub fn constant(d: f64) -> Self {
        assert!(d.is_finite() && d >= 0.0, "constant delay must be finite and non-negative");
        DelayFunction { d: Arc::new(move |_| d), d_max: d }
    }

    /// No delay at all.
    pub fn none() -> Self {
        Self::constant(0.0)
    }

    /// Delay at time `t`.
    pub fn delay(&self, t: f64) -> f64 {
        (self.d)(t)
    }

    /// Upper bound on the delay, used to size retention windows.
    pub fn max_delay(&self) -> f64 {
        self.d_max
    }
}

impl std::fmt::Debug for DelayFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DelayFunction").field("d_max", &self.d_max).finish()
    }
}

/// Delayed lookup time `max(t0, t - d(t))`: the instant whose stored value a
/// delayed measurement at `t` refers to, clamped so that queries never reach
/// before the start of recording.
pub fn delayed_time(t: f64, delay: &DelayFunction, t0: f64) -> f64 {
    (t - delay.delay(t)).max(t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::column(&[v])
    }

    #[test]
    fn sample_at_recorded_times_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hist = SignalHistory::new(1, 1);
        let mut t = 0.0;
        let mut stored = Vec::new();
        for _ in 0..50 {
            let v: f64 = rng.gen_range(-10.0..10.0);
            hist.append(t, scalar(v)).unwrap();
            stored.push((t, v));
            t += rng.gen_range(1e-4..0.3);
        }
        for (ts, vs) in stored {
            assert_eq!(hist.sample(ts).unwrap()[(0, 0)], vs);
        }
    }

    #[test]
    fn interpolation_is_exact_on_linear_signals() {
        // v(t) = 3t - 1 stored sparsely; any interior query reproduces it.
        let mut hist = SignalHistory::new(1, 1);
        for &t in &[0.0, 0.4, 1.0, 1.7] {
            hist.append(t, scalar(3.0 * t - 1.0)).unwrap();
        }
        for &tq in &[0.2, 0.4, 0.7, 1.35, 1.7] {
            assert_abs_diff_eq!(hist.sample(tq).unwrap()[(0, 0)], 3.0 * tq - 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn append_rejects_non_monotone_times_and_bad_shapes() {
        let mut hist = SignalHistory::new(1, 1);
        hist.append(0.0, scalar(1.0)).unwrap();
        assert!(matches!(hist.append(0.0, scalar(2.0)), Err(Error::NonMonotoneTime { .. })));
        assert!(matches!(hist.append(-1.0, scalar(2.0)), Err(Error::NonMonotoneTime { .. })));
        assert!(matches!(hist.append(1.0, Matrix::zeros(2, 1)), Err(Error::Dimension { .. })));
        assert!(matches!(hist.append(f64::NAN, scalar(0.0)), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sample_outside_the_range_errors() {
        let mut hist = SignalHistory::new(1, 1);
        assert!(matches!(hist.sample(0.0), Err(Error::OutOfRange { .. })));
        hist.append(1.0, scalar(5.0)).unwrap();
        // Single-sample history has range [1, 1].
        assert_eq!(hist.sample(1.0).unwrap()[(0, 0)], 5.0);
        assert!(hist.sample(0.999).is_err());
        assert!(hist.sample(1.001).is_err());
        // Clamped lookup still answers beyond the newest time.
        assert_eq!(hist.sample_or_latest(2.0).unwrap()[(0, 0)], 5.0);
    }

    #[test]
    fn retention_prunes_but_keeps_a_bracketing_sample() {
        let mut hist = SignalHistory::new(1, 1);
        hist.set_retention(1.0);
        let mut t = 0.0;
        while t <= 5.0 + 1e-12 {
            hist.append(t, scalar(t)).unwrap();
            t += 0.25;
        }
        // Window is [4, 5]; the sample at exactly 4.0 must survive.
        assert_eq!(hist.first_time().unwrap(), 4.0);
        assert_abs_diff_eq!(hist.sample(4.0).unwrap()[(0, 0)], 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(hist.sample(4.1).unwrap()[(0, 0)], 4.1, epsilon = 1e-14);
        assert!(hist.sample(3.9).is_err());
    }

    #[test]
    fn delayed_time_clamps_at_the_recording_start() {
        let d = DelayFunction::constant(1.0);
        assert_eq!(delayed_time(5.0, &d, 0.0), 4.0);
        assert_eq!(delayed_time(0.5, &d, 0.0), 0.0);
        assert_eq!(delayed_time(1.0, &d, 0.0), 0.0);

        let wavy = DelayFunction::new(|t: f64| 1.0 + 0.25 * t.sin(), 1.25).unwrap();
        let expect = 2.0 - (1.0 + 0.25 * 2.0f64.sin());
        assert_eq!(delayed_time(2.0, &wavy, 0.0), expect);
        assert_eq!(wavy.max_delay(), 1.25);
    }

    #[test]
    fn delay_constructors_validate_bounds() {
        assert!(DelayFunction::new(|_| 0.5, -1.0).is_err());
        assert!(DelayFunction::new(|_| 0.5, f64::INFINITY).is_err());
        assert_eq!(DelayFunction::none().delay(3.0), 0.0);
    }
}
