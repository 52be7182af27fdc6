use pad_core::path::{CubicSplinePath, TimeSeriesWindow};
use proptest::prelude::*;

/// Natural cubic spline through `(x, y)` by a dense solve for the knot second
/// derivatives, evaluated directly from the textbook form.
struct DenseSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl DenseSpline {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            a[i][i - 1] = h0 / 6.0;
            a[i][i] = (h0 + h1) / 3.0;
            a[i][i + 1] = h1 / 6.0;
            rhs[i] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        }
        // Gaussian elimination with partial pivoting
        for col in 0..n {
            let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            rhs.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut m = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * m[k]).sum();
            m[row] = (rhs[row] - s) / a[row][row];
        }
        DenseSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        (0..n - 1).find(|&i| t <= self.x[i + 1]).unwrap_or(n - 2)
    }

    fn eval(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a.powi(3) - a) * self.m[i] + (b.powi(3) - b) * self.m[i + 1]) * h * h / 6.0
    }

    fn derivative(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0
            + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0
    }
}

#[test]
fn matches_dense_oracle_on_sine_knots() {
    let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.6 + 0.05 * (i as f64).sin()).collect();
    let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
    let ours = CubicSplinePath::from_knots(&x, &y, 1).unwrap();
    let oracle = DenseSpline::new(&x, &y);
    let (lo, hi) = ours.domain();
    for k in 0..=400 {
        let t = lo + (hi - lo) * k as f64 / 400.0;
        assert!((ours.eval(t).unwrap().data()[0] - oracle.eval(t)).abs() < 1e-8, "value at {t}");
        assert!(
            (ours.eval_derivative(t).unwrap().data()[0] - oracle.derivative(t)).abs() < 1e-8,
            "derivative at {t}"
        );
    }
}

#[test]
fn channels_are_fitted_independently() {
    let x = [0.0, 0.7, 1.5, 2.0, 3.2];
    let a = [1.0, -1.0, 0.5, 2.0, 0.0];
    let b = [0.0, 3.0, 1.0, -2.0, 4.0];
    let interleaved: Vec<f64> = a.iter().zip(&b).flat_map(|(p, q)| [*p, *q]).collect();
    let joint = CubicSplinePath::from_knots(&x, &interleaved, 2).unwrap();
    let (oa, ob) = (DenseSpline::new(&x, &a), DenseSpline::new(&x, &b));
    for t in [0.1, 0.69, 1.0, 2.5, 3.2] {
        let v = joint.eval(t).unwrap();
        assert!((v.data()[0] - oa.eval(t)).abs() < 1e-10);
        assert!((v.data()[1] - ob.eval(t)).abs() < 1e-10);
    }
}

#[test]
fn two_knots_give_a_line() {
    let s = CubicSplinePath::from_knots(&[1.0, 3.0], &[2.0, 6.0], 1).unwrap();
    assert!((s.eval(2.0).unwrap().data()[0] - 4.0).abs() < 1e-14);
    assert!((s.eval_derivative(1.3).unwrap().data()[0] - 2.0).abs() < 1e-14);
}

#[test]
fn fit_from_window_uses_its_times() {
    let w = TimeSeriesWindow::new(vec![0.0, 2.0, 5.0], vec![1.0, 3.0, 2.0], 1, vec![], 0).unwrap();
    let s = CubicSplinePath::fit(&w).unwrap();
    assert_eq!(s.domain(), (0.0, 5.0));
    assert!((s.eval(2.0).unwrap().data()[0] - 3.0).abs() < 1e-12);
}

#[test]
fn rejects_bad_knots() {
    assert!(CubicSplinePath::from_knots(&[0.0], &[1.0], 1).is_err());
    assert!(CubicSplinePath::from_knots(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0], 1).is_err());
    assert!(CubicSplinePath::from_knots(&[0.0, 1.0], &[1.0, 2.0, 3.0], 1).is_err());
}

fn knots_and_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..3.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(|(gaps, y)| {
                let mut t = 0.0;
                let x = gaps
                    .iter()
                    .map(|g| {
                        t += g;
                        t
                    })
                    .collect();
                (x, y)
            })
    })
}

proptest! {
    #[test]
    fn interpolates_every_knot((x, y) in knots_and_values()) {
        let s = CubicSplinePath::from_knots(&x, &y, 1).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert!((s.eval(*xi).unwrap().data()[0] - yi).abs() <= 1e-10 * (1.0 + yi.abs()));
        }
    }

    #[test]
    fn natural_boundary((x, y) in knots_and_values()) {
        let s = CubicSplinePath::from_knots(&x, &y, 1).unwrap();
        let (lo, hi) = s.domain();
        prop_assert!(s.eval_second_derivative(lo).unwrap().data()[0].abs() < 1e-7);
        prop_assert!(s.eval_second_derivative(hi).unwrap().data()[0].abs() < 1e-7);
    }

    #[test]
    fn reproduces_linear_data((x, _) in knots_and_values(), slope in -5.0f64..5.0, icept in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().map(|v| slope * v + icept).collect();
        let s = CubicSplinePath::from_knots(&x, &y, 1).unwrap();
        let (lo, hi) = s.domain();
        let t = 0.5 * (lo + hi);
        prop_assert!((s.eval(t).unwrap().data()[0] - (slope * t + icept)).abs() < 1e-9);
        prop_assert!((s.eval_derivative(t).unwrap().data()[0] - slope).abs() < 1e-9);
    }
}
