//! Central finite-difference gradient verification.

/// Numerical gradient of `f` at `x` by central differences with step `eps`.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest elementwise relative error between `analytic` and the numerical
/// gradient of `f` at `x`.
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, 1e-6)`, so
/// entries where both gradients are negligible are judged by absolute error.
pub fn max_relative_error<F: FnMut(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let numeric = numerical_gradient(f, x, eps);
    numeric.iter().zip(analytic).map(|(n, a)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6)).fold(0.0, f64::max)
}
