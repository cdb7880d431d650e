//! χ²₁ tail probabilities and quantiles.
//!
//! For one degree of freedom the regularized upper incomplete gamma
//! Q(1/2, x/2) reduces to erfc(√(x/2)), and the quantile at level 1 − α is
//! the square of the standard normal quantile at 1 − α/2.

use libm::{erf, erfc};
use statrs::distribution::{ContinuousCDF, Normal};

/// P(χ²₁ ≥ x).
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let t = (0.5 * x).sqrt();
    // erfc loses digits near the origin, erf in the far tail
    if t < 1.0 { 1.0 - erf(t) } else { erfc(t) }.clamp(0.0, 1.0)
}

/// P(χ²₁ ≤ x).
pub fn chi2_1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let t = (0.5 * x).sqrt();
    if t < 1.0 { erf(t) } else { 1.0 - erfc(t) }.clamp(0.0, 1.0)
}

/// Upper-α critical value: the χ²₁ quantile at probability 1 − α.
pub fn chi2_1_critical(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let normal = Normal::standard();
    let z = normal.inverse_cdf(1.0 - 0.5 * alpha);
    z * z
}
