//! Natural cubic spline on nonuniform knots.
//!
//! The spline is linear in the data, so [`NaturalSpline::weights`] returns the
//! row that maps knot values to the interpolated value at one point; a volume is
//! then resampled along z by applying the same rows to every (x, y) column.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    /// `n × n`, row-major: second derivatives at the knots per unit datum.
    second: Vec<f64>,
}

impl NaturalSpline {
    /// Knots must be strictly increasing, at least two.
    pub fn new(knots: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(Error::InvalidArgument("spline needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("spline knots must be strictly increasing".into()));
        }
        let mut second = vec![0.0; n * n];
        if n > 2 {
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let m = n - 2;
            for j in 0..n {
                // rhs for unit datum e_j
                let mut rhs: Vec<f64> = (1..n - 1)
                    .map(|i| {
                        let y = |k: usize| if k == j { 1.0 } else { 0.0 };
                        6.0 * ((y(i + 1) - y(i)) / h[i] - (y(i) - y(i - 1)) / h[i - 1])
                    })
                    .collect();
                // Thomas algorithm on the interior system
                let mut diag: Vec<f64> = (1..n - 1).map(|i| 2.0 * (h[i - 1] + h[i])).collect();
                for i in 1..m {
                    let w = h[i] / diag[i - 1];
                    diag[i] -= w * h[i];
                    rhs[i] -= w * rhs[i - 1];
                }
                let mut sol = vec![0.0; m];
                for i in (0..m).rev() {
                    let upper = if i + 1 < m { h[i + 1] * sol[i + 1] } else { 0.0 };
                    sol[i] = (rhs[i] - upper) / diag[i];
                }
                for i in 0..m {
                    second[(i + 1) * n + j] = sol[i];
                }
            }
        }
        Ok(Self { knots: knots.to_vec(), second })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Interpolation weights over the knot values at `t`. Outside the knot
    /// range the value is clamped to the nearest end knot.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        let n = self.knots.len();
        let mut w = vec![0.0; n];
        if t <= self.knots[0] {
            w[0] = 1.0;
            return w;
        }
        if t >= self.knots[n - 1] {
            w[n - 1] = 1.0;
            return w;
        }
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(n - 2);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - t) / h;
        let b = 1.0 - a;
        let c = (a * a * a - a) * h * h / 6.0;
        let d = (b * b * b - b) * h * h / 6.0;
        w[i] += a;
        w[i + 1] += b;
        for (j, wj) in w.iter_mut().enumerate() {
            *wj += c * self.second[i * n + j] + d * self.second[(i + 1) * n + j];
        }
        w
    }

    pub fn eval(&self, values: &[f64], t: f64) -> f64 {
        debug_assert_eq!(values.len(), self.knots.len());
        self.weights(t).iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `rows[i]` are the weights at `points[i]`.
    pub fn weight_matrix(&self, points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&t| self.weights(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interpolates_knots() {
        let x = [0.0, 0.7, 1.5, 3.0, 3.2, 5.0];
        let y = [1.0, -2.0, 0.5, 4.0, 3.0, -1.0];
        let s = NaturalSpline::new(&x).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((s.eval(&y, *xi) - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_linear_functions() {
        let x = [0.0, 0.3, 1.1, 2.0, 2.9, 4.0];
        let y: Vec<f64> = x.iter().map(|t| 2.0 * t - 1.0).collect();
        let s = NaturalSpline::new(&x).unwrap();
        for k in 0..=40 {
            let t = k as f64 * 0.1;
            assert!((s.eval(&y, t) - (2.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn natural_boundary_and_smoothness() {
        // uniform knots, compare against the classic closed-form system for y = x³ on [0, 3]
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 8.0, 27.0];
        let s = NaturalSpline::new(&x).unwrap();
        // interior second derivatives: [[4,1],[1,4]] M = 6 [6, 12]  →  M = [4.8, 16.8]
        let n = 4;
        let m1: f64 = (0..n).map(|j| s.second[n + j] * y[j]).sum();
        let m2: f64 = (0..n).map(|j| s.second[2 * n + j] * y[j]).sum();
        assert!((m1 - 4.8).abs() < 1e-12 && (m2 - 16.8).abs() < 1e-12);
    }

    #[test]
    fn two_knots_is_linear() {
        let s = NaturalSpline::new(&[1.0, 3.0]).unwrap();
        assert!((s.eval(&[2.0, 6.0], 2.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn clamps_outside() {
        let s = NaturalSpline::new(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.eval(&[3.0, 1.0, 5.0], -1.0), 3.0);
        assert_eq!(s.eval(&[3.0, 1.0, 5.0], 9.0), 5.0);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(NaturalSpline::new(&[0.0]).is_err());
        assert!(NaturalSpline::new(&[0.0, 1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(t in -1.0f64..6.0) {
            let s = NaturalSpline::new(&[0.0, 0.5, 1.7, 2.0, 3.5, 5.0]).unwrap();
            let sum: f64 = s.weights(t).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
