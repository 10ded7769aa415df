//! Bivariate standard normal CDF.
//!
//! Uses the single-integral reduction
//! `Φ₂(a, b; r) = Φ(a) Φ(b) + (1/2π) ∫₀^{asin r} exp(-(a² - 2ab sin θ + b²) / (2 cos² θ)) dθ`,
//! evaluated with a fixed composite Gauss–Legendre rule.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::normal;
use super::quadrature::Composite;
use crate::error::{Error, Result};

fn rule() -> &'static Composite {
    static RULE: OnceLock<Composite> = OnceLock::new();
    RULE.get_or_init(|| Composite::new(20, 12))
}

/// `P(X ≤ a, Y ≤ b)` for a standard bivariate normal with correlation `r`.
pub fn bivariate_normal_cdf(a: f64, b: f64, r: f64) -> Result<f64> {
    if !(r.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|r| must be < 1, got {r}")));
    }
    if a.is_nan() || b.is_nan() {
        return Err(Error::InvalidArgument("NaN bound".into()));
    }
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if a == f64::INFINITY {
        return Ok(normal::cdf(b));
    }
    if b == f64::INFINITY {
        return Ok(normal::cdf(a));
    }
    let base = normal::cdf(a) * normal::cdf(b);
    if r == 0.0 {
        return Ok(base);
    }
    let (a2b2, ab2) = (a * a + b * b, 2.0 * a * b);
    let integral = rule().integrate(0.0, r.asin(), |t| {
        let (s, c) = t.sin_cos();
        (-(a2b2 - ab2 * s) / (2.0 * c * c)).exp()
    });
    Ok((base + integral / (2.0 * PI)).clamp(0.0, 1.0))
}
