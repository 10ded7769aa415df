//! Conversion from a latent (polychoric/tetrachoric) correlation to the
//! product-moment correlation of the two binary indicators it induces.

use super::{bvn::bivariate_normal_cdf, normal};
use crate::error::{Error, Result};

/// Pearson correlation of `1{X > a}` and `1{Y > b}` for standard bivariate
/// normal `(X, Y)` with correlation `eps`.
pub fn polychoric_to_product_moment(a: f64, b: f64, eps: f64) -> Result<f64> {
    if !(eps.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|eps| must be < 1, got {eps}")));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument("thresholds must be finite".into()));
    }
    let (pa, pb) = (normal::cdf(a), normal::cdf(b));
    let var = pa * (1.0 - pa) * pb * (1.0 - pb);
    if !(var > 0.0) {
        return Err(Error::InvalidArgument(format!("degenerate margins at thresholds ({a}, {b})")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let joint = bivariate_normal_cdf(a, b, eps)?;
    Ok((joint - pa * pb) / var.sqrt())
}
