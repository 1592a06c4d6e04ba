//! Benchmark objectives on the unit cube.

use std::f64::consts::PI;

/// Branin-Hoo rescaled from `[-5,10] x [0,15]` to `[0,1]^2`.
pub fn branin(u: &[f64]) -> f64 {
    let x1 = 15.0 * u[0] - 5.0;
    let x2 = 15.0 * u[1];
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

/// Global minimum value of [`branin`].
pub const BRANIN_MIN: f64 = 0.397_887_357_729_738;
