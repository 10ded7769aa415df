//! The logistic approximation to the standard normal CDF used as the model
//! link: `F(x) = 1 / (1 + exp(-1.702 x))`.

pub const SCALE: f64 = 1.702;

/// Approximate standard normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    let z = SCALE * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(F(x), 1 - F(x))`, both to full relative precision, from one
/// exponential.
#[inline]
pub fn cdf_pair(x: f64) -> (f64, f64) {
    let z = SCALE * x;
    let e = (-z.abs()).exp();
    let big = 1.0 / (1.0 + e);
    let small = e * big;
    if z >= 0.0 {
        (big, small)
    } else {
        (small, big)
    }
}

/// `ln F(x)` without underflow in the lower tail.
#[inline]
pub fn ln_cdf(x: f64) -> f64 {
    let z = SCALE * x;
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Density of the link, `k F(x) (1 - F(x))`.
#[inline]
pub fn pdf(x: f64) -> f64 {
    SCALE * cdf(x) * cdf(-x)
}

/// Inverse of [`cdf`]: `logit(p) / 1.702`.
#[inline]
pub fn quantile(p: f64) -> f64 {
    (p.ln() - (-p).ln_1p()) / SCALE
}

/// Inverse of [`cdf`] when both `p` and `1 - p` are available to full
/// relative precision.
#[inline]
pub fn quantile_split(p: f64, q: f64) -> f64 {
    (p.ln() - q.ln()) / SCALE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normal;
    use proptest::prelude::*;

    #[test]
    fn pair_matches_cdf() {
        for x in [-30.0, -4.0, -0.3, 0.0, 0.2, 5.0, 30.0] {
            let (f, g) = cdf_pair(x);
            assert!((f - cdf(x)).abs() <= 1e-15 * cdf(x));
            assert!((g - cdf(-x)).abs() <= 1e-15 * cdf(-x));
        }
    }

    #[test]
    fn center_and_saturation() {
        assert_eq!(cdf(0.0), 0.5);
        // 1 / (1 + e^{-8.51})
        let expected = 1.0 / (1.0 + (-8.51f64).exp());
        assert!((cdf(5.0) - expected).abs() < 1e-15);
        assert!((cdf(5.0) - 0.99979).abs() < 1e-5);
        assert!(cdf(-800.0) > 0.0 || cdf(-800.0) == 0.0);
        assert!(ln_cdf(-800.0).is_finite());
    }

    #[test]
    fn max_deviation_from_exact_normal() {
        let n = 100_000;
        let mut worst = 0.0f64;
        for i in 0..=n {
            let x = -8.0 + 16.0 * i as f64 / n as f64;
            worst = worst.max((cdf(x) - normal::cdf(x)).abs());
        }
        assert!(worst <= 0.0095, "{worst}");
        assert!(worst > 0.009);
    }

    proptest! {
        #[test]
        fn symmetric(x in -40.0f64..40.0) {
            prop_assert!((cdf(-x) - (1.0 - cdf(x))).abs() <= f64::EPSILON);
        }

        #[test]
        fn increasing(x in -18.0f64..8.0, dx in 1e-6f64..1.0) {
            prop_assert!(cdf(x + dx) > cdf(x));
            prop_assert!(cdf(x) > 0.0 && cdf(x) < 1.0);
        }

        #[test]
        fn quantile_inverts(x in -8.0f64..8.0) {
            prop_assert!((quantile(cdf(x)) - x).abs() < 1e-12 * x.abs().max(1.0) * 50.0);
            prop_assert!((quantile_split(cdf(x), cdf(-x)) - x).abs() < 1e-12);
        }

        #[test]
        fn ln_cdf_consistent(x in -30.0f64..30.0) {
            prop_assert!((ln_cdf(x) - cdf(x).ln()).abs() < 1e-12);
        }
    }
}
