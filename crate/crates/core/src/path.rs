//! Continuous control paths built from discrete observation windows.

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::tensor::Tensor;

/// A block of consecutive timestamped observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesWindow {
    times: Vec<f64>,
    /// Row-major `n_obs × n_channels`.
    values: Vec<f64>,
    n_channels: usize,
    /// One flag per observation, or empty for unlabeled data.
    anomaly_flags: Vec<bool>,
    window_index: usize,
}

impl TimeSeriesWindow {
    pub fn new(
        times: Vec<f64>,
        values: Vec<f64>,
        n_channels: usize,
        anomaly_flags: Vec<bool>,
        window_index: usize,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(PadError::Input(format!(
                "window {window_index}: need at least 2 observations, got {}",
                times.len()
            )));
        }
        if n_channels == 0 || values.len() != times.len() * n_channels {
            return Err(PadError::Input(format!(
                "window {window_index}: {} values for {} observations of {n_channels} channels",
                values.len(),
                times.len()
            )));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PadError::Input(format!(
                "window {window_index}: timestamps not strictly increasing at observation {}",
                k + 1
            )));
        }
        if !anomaly_flags.is_empty() && anomaly_flags.len() != times.len() {
            return Err(PadError::Input(format!(
                "window {window_index}: {} flags for {} observations",
                anomaly_flags.len(),
                times.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PadError::Input(format!("window {window_index}: non-finite value")));
        }
        Ok(TimeSeriesWindow {
            times,
            values,
            n_channels,
            anomaly_flags,
            window_index,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn anomaly_flags(&self) -> &[bool] {
        &self.anomaly_flags
    }

    pub fn window_index(&self) -> usize {
        self.window_index
    }

    pub fn is_labeled(&self) -> bool {
        !self.anomaly_flags.is_empty()
    }

    /// 1 iff any observation is flagged.
    pub fn label(&self) -> u8 {
        self.anomaly_flags.iter().any(|&f| f) as u8
    }

    /// The first `n` observations as a new window with the same index.
    pub fn prefix(&self, n: usize) -> Result<TimeSeriesWindow> {
        let n = n.min(self.n_obs());
        let flags = if self.is_labeled() {
            self.anomaly_flags[..n].to_vec()
        } else {
            Vec::new()
        };
        TimeSeriesWindow::new(
            self.times[..n].to_vec(),
            self.values[..n * self.n_channels].to_vec(),
            self.n_channels,
            flags,
            self.window_index,
        )
    }

    /// Keep only the observations at `indices` (sorted ascending).
    pub fn select(&self, indices: &[usize]) -> Result<TimeSeriesWindow> {
        let times = indices.iter().map(|&i| self.times[i]).collect();
        let values = indices
            .iter()
            .flat_map(|&i| self.observation(i).iter().copied())
            .collect();
        let flags = if self.is_labeled() {
            indices.iter().map(|&i| self.anomaly_flags[i]).collect()
        } else {
            Vec::new()
        };
        TimeSeriesWindow::new(times, values, self.n_channels, flags, self.window_index)
    }
}

/// Per-channel natural cubic spline through every observation of a window.
///
/// On interval `i` the channel value is `a + b·u + c·u² + d·u³` with
/// `u = t − tᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSplinePath {
    knots: Vec<f64>,
    n_channels: usize,
    /// `[interval][channel] -> [a, b, c, d]`, flattened.
    coeffs: Vec<[f64; 4]>,
}

impl CubicSplinePath {
    pub fn fit(window: &TimeSeriesWindow) -> Result<Self> {
        Self::from_knots(window.times(), window.values(), window.n_channels())
    }

    /// `values` is row-major `knots.len() × n_channels`.
    pub fn from_knots(knots: &[f64], values: &[f64], n_channels: usize) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(PadError::Input(format!("spline needs at least 2 knots, got {n}")));
        }
        if n_channels == 0 || values.len() != n * n_channels {
            return Err(PadError::Input(format!(
                "{} values for {n} knots of {n_channels} channels",
                values.len()
            )));
        }
        if let Some(k) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(PadError::Input(format!(
                "knot times not strictly increasing at index {}",
                k + 1
            )));
        }

        let widths: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut coeffs = vec![[0.0; 4]; (n - 1) * n_channels];
        let mut y = vec![0.0; n];
        for ch in 0..n_channels {
            for (k, yk) in y.iter_mut().enumerate() {
                *yk = values[k * n_channels + ch];
            }
            let m = second_derivatives(&widths, &y);
            for i in 0..n - 1 {
                let h = widths[i];
                coeffs[i * n_channels + ch] = [
                    y[i],
                    (y[i + 1] - y[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0,
                    m[i] / 2.0,
                    (m[i + 1] - m[i]) / (6.0 * h),
                ];
            }
        }
        Ok(CubicSplinePath {
            knots: knots.to_vec(),
            n_channels,
            coeffs,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn interval_width(&self, interval: usize) -> f64 {
        self.knots[interval + 1] - self.knots[interval]
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(PadError::Domain { t, lo, hi });
        }
        // last knot <= t, capped so t == hi falls in the final interval
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1);
        let i = i.min(self.n_intervals() - 1);
        Ok((i, t - self.knots[i]))
    }

    fn interval(&self, i: usize) -> &[[f64; 4]] {
        &self.coeffs[i * self.n_channels..(i + 1) * self.n_channels]
    }

    pub fn eval(&self, t: f64) -> Result<Tensor> {
        let (i, u) = self.locate(t)?;
        Ok(Tensor::row(
            self.interval(i)
                .iter()
                .map(|[a, b, c, d]| a + u * (b + u * (c + u * d)))
                .collect(),
        ))
    }

    pub fn eval_derivative(&self, t: f64) -> Result<Tensor> {
        let (i, u) = self.locate(t)?;
        Ok(Tensor::row(self.derivative_at(i, u)))
    }

    pub fn eval_second_derivative(&self, t: f64) -> Result<Tensor> {
        let (i, u) = self.locate(t)?;
        Ok(Tensor::row(
            self.interval(i)
                .iter()
                .map(|[_, _, c, d]| 2.0 * c + 6.0 * d * u)
                .collect(),
        ))
    }

    /// dX/dt at offset `u` into interval `i`, with no domain lookup.
    pub fn derivative_at(&self, interval: usize, u: f64) -> Vec<f64> {
        self.interval(interval)
            .iter()
            .map(|[_, b, c, d]| b + u * (2.0 * c + 3.0 * d * u))
            .collect()
    }
}

/// Natural-spline moments via the Thomas algorithm.
fn second_derivatives(widths: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    // rows k = 0..inner correspond to knots 1..n-1
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut rhs = vec![0.0; inner];
    for k in 0..inner {
        let (h0, h1) = (widths[k], widths[k + 1]);
        diag[k] = 2.0 * (h0 + h1);
        upper[k] = h1;
        rhs[k] = 6.0 * ((y[k + 2] - y[k + 1]) / h1 - (y[k + 1] - y[k]) / h0);
    }
    for k in 1..inner {
        let w = widths[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    m[inner] = rhs[inner - 1] / diag[inner - 1];
    for k in (0..inner - 1).rev() {
        m[k + 1] = (rhs[k] - upper[k] * m[k + 2]) / diag[k];
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(times: Vec<f64>, values: Vec<f64>, channels: usize) -> TimeSeriesWindow {
        TimeSeriesWindow::new(times, values, channels, vec![], 0).unwrap()
    }

    #[test]
    fn two_knots_is_linear() {
        let s = CubicSplinePath::fit(&window(vec![0.0, 1.0], vec![0.0, 1.0], 1)).unwrap();
        assert!((s.eval(0.5).unwrap().data()[0] - 0.5).abs() < 1e-15);
        for t in [0.0, 0.3, 0.9, 1.0] {
            assert!((s.eval_derivative(t).unwrap().data()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_values_have_zero_derivative() {
        let times: Vec<f64> = (0..7).map(|i| i as f64 * 0.7).collect();
        let s = CubicSplinePath::fit(&window(times, vec![2.5; 14], 2)).unwrap();
        let (lo, hi) = s.domain();
        for k in 0..40 {
            let t = lo + k as f64 * (hi - lo) / 39.0;
            assert!(s.eval_derivative(t).unwrap().data().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        let s = CubicSplinePath::fit(&window(vec![1.0, 2.0, 4.0], vec![0.0, 1.0, 0.0], 1)).unwrap();
        assert!(matches!(s.eval(0.999), Err(PadError::Domain { .. })));
        assert!(matches!(s.eval_derivative(4.001), Err(PadError::Domain { .. })));
        assert!(s.eval(4.0).is_ok());
    }

    #[test]
    fn bad_timestamps_are_rejected() {
        assert!(CubicSplinePath::from_knots(&[0.0, 1.0, 1.0], &[0.0; 3], 1).is_err());
        assert!(CubicSplinePath::from_knots(&[0.0, 2.0, 1.0], &[0.0; 3], 1).is_err());
        assert!(CubicSplinePath::from_knots(&[0.0], &[0.0], 1).is_err());
        assert!(TimeSeriesWindow::new(vec![0.0, 0.0], vec![1.0, 2.0], 1, vec![], 3).is_err());
    }

    #[test]
    fn natural_boundary() {
        let times: Vec<f64> = vec![0.0, 0.4, 1.1, 1.5, 2.9, 3.0];
        let values: Vec<f64> = times.iter().map(|t| (t * 1.7_f64).sin() + t * t).collect();
        let s = CubicSplinePath::fit(&window(times, values, 1)).unwrap();
        assert!(s.eval_second_derivative(0.0).unwrap().data()[0].abs() <= 1e-7);
        assert!(s.eval_second_derivative(3.0).unwrap().data()[0].abs() <= 1e-7);
    }
}
