//! Central finite-difference gradient checking.
//!
//! Used by the test suites to verify every analytic gradient in the crate
//! (CNN backprop, kernel hyperparameter gradients, marginal-likelihood and
//! ELBO gradients) against an independent numerical estimate.

/// Central difference `(f(x+h) - f(x-h)) / 2h` for each coordinate of `x0`.
pub fn central_diff<F>(f: &mut F, x0: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + h;
        let fp = f(&x);
        x[i] = x0[i] - h;
        let fm = f(&x);
        x[i] = x0[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative mismatch between an analytic gradient and its central
/// finite-difference estimate. The scale floor keeps near-zero entries from
/// blowing up the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], scale_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs()).max(scale_floor);
            (a - n).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Convenience wrapper: check `analytic` against a central difference of `f`
/// at `x0` and return the worst relative error.
pub fn check_gradient<F>(f: &mut F, x0: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_diff(f, x0, h);
    max_relative_error(analytic, &numeric, 1.0)
}
