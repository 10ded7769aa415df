//! Ordered cutpoints, the category probabilities they induce under the link,
//! and the induced-Dirichlet density over cutpoints.

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::math::link;

/// Strictly increasing latent cutpoints `C_1 < ... < C_{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CutpointVector(Vec<f64>);

impl CutpointVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("at least one cutpoint required".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cutpoints must be finite".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(format!("cutpoints not strictly increasing: {values:?}")));
        }
        Ok(CutpointVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of categories, one more than the number of cutpoints.
    pub fn categories(&self) -> usize {
        self.0.len() + 1
    }
}

/// Link probability of the interval `(lo, hi)`; `None` is an infinite end.
pub fn interval_prob<S: Scalar>(lo: Option<S>, hi: Option<S>) -> S {
    match (lo, hi) {
        (None, None) => S::cst(1.0),
        (None, Some(h)) => h.link(),
        (Some(l), None) => (-l).link(),
        (Some(l), Some(h)) => {
            if l.val() > 0.0 {
                (-l).link() - (-h).link()
            } else {
                h.link() - l.link()
            }
        }
    }
}

/// Natural log of [`interval_prob`], accurate in both tails and for narrow
/// intervals.
pub fn ln_interval_prob<S: Scalar>(lo: Option<S>, hi: Option<S>) -> S {
    match (lo, hi) {
        (None, None) => S::zero(),
        (None, Some(h)) => h.ln_link(),
        (Some(l), None) => (-l).ln_link(),
        (Some(l), Some(h)) => {
            // F(b) - F(a) = F(b) (1 - exp(ln F(a) - ln F(b))) on the side
            // where both values are below one half
            let (top, bottom) = if l.val() > 0.0 { (-l, -h) } else { (h, l) };
            let big = top.ln_link();
            big + (-(bottom.ln_link() - big).exp_m1()).ln()
        }
    }
}

/// Category probabilities `P_k = F(c_k - anchor) - F(c_{k-1} - anchor)` with
/// `c_0 = -∞` and `c_K = +∞`. No validation.
pub fn simplex_from_cutpoints<S: Scalar>(c: &[S], anchor: S) -> Vec<S> {
    let k = c.len() + 1;
    (0..k)
        .map(|i| {
            let lo = (i > 0).then(|| c[i - 1] - anchor);
            let hi = (i < k - 1).then(|| c[i] - anchor);
            interval_prob(lo, hi)
        })
        .collect()
}

/// Log category probabilities, see [`simplex_from_cutpoints`].
pub fn ln_simplex_from_cutpoints<S: Scalar>(c: &[S], anchor: S) -> Vec<S> {
    let k = c.len() + 1;
    (0..k)
        .map(|i| {
            let lo = (i > 0).then(|| c[i - 1] - anchor);
            let hi = (i < k - 1).then(|| c[i] - anchor);
            ln_interval_prob(lo, hi)
        })
        .collect()
}

pub fn cutpoints_to_probs(c: &CutpointVector, anchor: f64) -> Vec<f64> {
    simplex_from_cutpoints(c.values(), anchor)
}

/// Inverse of [`cutpoints_to_probs`]: `c_k = anchor + F⁻¹(P_1 + ... + P_k)`.
pub fn probs_to_cutpoints(p: &[f64], anchor: f64) -> Result<CutpointVector> {
    if p.len() < 2 || p.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(format!("invalid simplex {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("simplex sums to {total}")));
    }
    let mut lower = 0.0;
    let mut c = Vec::with_capacity(p.len() - 1);
    for k in 0..p.len() - 1 {
        lower += p[k];
        let upper: f64 = p[k + 1..].iter().sum();
        c.push(anchor + link::quantile_split(lower, upper));
    }
    CutpointVector::new(c)
}

/// `ln Dirichlet(p | α)` for a probability vector given on the log scale.
pub fn ln_dirichlet<S: Scalar>(ln_p: &[S], alpha: &[S]) -> S {
    let mut total = S::zero();
    let mut out = S::zero();
    for (&lp, &a) in ln_p.iter().zip(alpha) {
        total += a;
        out += (a - 1.0) * lp - a.ln_gamma();
    }
    out + total.ln_gamma()
}

/// Induced-Dirichlet log density of cutpoints, no validation.
///
/// The map from cutpoints to the first `K-1` category probabilities is lower
/// bidiagonal with diagonal `f(c_k - anchor)`, `f` the link density.
pub fn ln_induced_dirichlet<S: Scalar>(c: &[S], alpha: &[S], anchor: S) -> S {
    let ln_p = ln_simplex_from_cutpoints(c, anchor);
    let mut out = ln_dirichlet(&ln_p, alpha);
    for &ck in c {
        let x = ck - anchor;
        out += x.ln_link() + (-x).ln_link() + link::SCALE.ln();
    }
    out
}

pub fn induced_dirichlet_logdensity(c: &CutpointVector, alpha: &[f64], anchor: f64) -> Result<f64> {
    if alpha.len() != c.categories() {
        return Err(Error::InvalidArgument(format!(
            "alpha has {} entries, expected {}",
            alpha.len(),
            c.categories()
        )));
    }
    if alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid concentration {alpha:?}")));
    }
    Ok(ln_induced_dirichlet(c.values(), alpha, anchor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::link::cdf;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn two_categories_symmetric() {
        let c = CutpointVector::new(vec![0.0]).unwrap();
        assert_eq!(cutpoints_to_probs(&c, 0.0), vec![0.5, 0.5]);
    }

    #[test]
    fn three_categories_direct() {
        let c = CutpointVector::new(vec![-1.0, 1.0]).unwrap();
        let p = cutpoints_to_probs(&c, 0.0);
        let want = [cdf(-1.0), cdf(1.0) - cdf(-1.0), 1.0 - cdf(1.0)];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_unordered() {
        assert!(CutpointVector::new(vec![0.5, 0.5]).is_err());
        assert!(CutpointVector::new(vec![1.0, -1.0]).is_err());
        let c = CutpointVector::new(vec![0.0, 1.0]).unwrap();
        assert!(induced_dirichlet_logdensity(&c, &[1.0, 0.0, 1.0], 0.0).is_err());
        assert!(induced_dirichlet_logdensity(&c, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn flat_dirichlet_leaves_only_the_jacobian() {
        let c = CutpointVector::new(vec![0.0]).unwrap();
        let v = induced_dirichlet_logdensity(&c, &[1.0, 1.0], 0.0).unwrap();
        assert!((v - (1.702f64 / 4.0).ln()).abs() < 1e-14);

        let c = CutpointVector::new(vec![-0.4, 0.3, 1.9]).unwrap();
        let v = induced_dirichlet_logdensity(&c, &[1.0; 4], 0.2).unwrap();
        // Dirichlet(1,1,1,1) has density Γ(4) = 6
        let jac: f64 = c.values().iter().map(|&x| crate::math::link::pdf(x - 0.2).ln()).sum();
        assert!((v - (6f64.ln() + jac)).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = vec![-1.1, -0.2, 0.6, 2.0];
        let anchor = 0.35;
        let n = c.len();
        let h = 1e-6;
        let mut j = DMatrix::zeros(n, n);
        for col in 0..n {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[col] += h;
            cm[col] -= h;
            let pp = simplex_from_cutpoints(&cp, anchor);
            let pm = simplex_from_cutpoints(&cm, anchor);
            for row in 0..n {
                j[(row, col)] = (pp[row] - pm[row]) / (2.0 * h);
            }
        }
        let numeric = j.determinant().abs().ln();
        let analytic: f64 = c.iter().map(|&x| crate::math::link::pdf(x - anchor).ln()).sum();
        assert!(((numeric - analytic) / analytic).abs() < 1e-5, "{numeric} vs {analytic}");
    }

    #[test]
    fn log_probabilities_survive_tails() {
        let lp = ln_simplex_from_cutpoints(&[30.0, 30.5], 0.0);
        assert!(lp.iter().all(|v| v.is_finite()));
        let direct = (-(1.702f64 * 30.0)) - (-(1.702f64 * 30.5)).exp().ln_1p();
        assert!(lp[1] < direct + 1e-9);
    }

    proptest! {
        #[test]
        fn sums_to_one(mut c in proptest::collection::vec(-6.0f64..6.0, 1..6), anchor in -2.0f64..2.0) {
            c.sort_by(f64::total_cmp);
            c.dedup();
            prop_assume!(c.windows(2).all(|w| w[1] - w[0] > 1e-6));
            let cv = CutpointVector::new(c).unwrap();
            let p = cutpoints_to_probs(&cv, anchor);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let lp = ln_simplex_from_cutpoints(cv.values(), anchor);
            for (a, b) in p.iter().zip(&lp) {
                prop_assert!((a.ln() - b).abs() < 1e-9);
            }
        }

        #[test]
        fn round_trips_through_probabilities(mut c in proptest::collection::vec(-5.0f64..5.0, 1..6), anchor in -1.0f64..1.0) {
            c.sort_by(f64::total_cmp);
            prop_assume!(c.windows(2).all(|w| w[1] - w[0] > 1e-3));
            let cv = CutpointVector::new(c.clone()).unwrap();
            let back = probs_to_cutpoints(&cutpoints_to_probs(&cv, anchor), anchor).unwrap();
            for (a, b) in c.iter().zip(back.values()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
