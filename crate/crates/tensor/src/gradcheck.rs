//! Finite-difference oracles for checking analytic gradients.
//!
//! These helpers only evaluate the function being checked; they never look at
//! the tape, so they stay independent of the backward pass they verify.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference derivative of `f` at `x` along `direction`.
pub fn directional_derivative(
    x: &[f64],
    direction: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), direction.len());
    let up: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a + h * d).collect();
    let down: Vec<f64> = x.iter().zip(direction).map(|(a, d)| a - h * d).collect();
    (f(&up) - f(&down)) / (2.0 * h)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest elementwise [`rel_error`].
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_error(x, y, floor))
        .fold(0.0, f64::max)
}
