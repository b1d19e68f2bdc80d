//! Log-domain arithmetic helpers.

/// Numerically stable `ln(exp(a) + exp(b))`.
#[inline]
pub(crate) fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::logaddexp;

    #[test]
    fn matches_naive_in_safe_range() {
        let cases: [(f64, f64); 3] = [(0.5, 2.0), (-3.0, -4.5), (-700.0, -701.0)];
        for (a, b) in cases {
            let expected = (a.exp() + b.exp()).ln();
            assert!((logaddexp(a, b) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_for_large_magnitudes() {
        // ln(e^1234 + e^1232) = 1232 + ln(e^2 + 1)
        let expected = 1232.0 + 2f64.exp().ln_1p();
        assert!((logaddexp(1234.0, 1232.0) - expected).abs() < 1e-9);
        assert!((1234f64.exp() + 1232f64.exp()).ln().is_infinite());
    }

    #[test]
    fn neg_infinity_is_identity() {
        assert_eq!(logaddexp(f64::NEG_INFINITY, -2.0), -2.0);
        assert_eq!(logaddexp(-2.0, f64::NEG_INFINITY), -2.0);
        assert_eq!(
            logaddexp(f64::NEG_INFINITY, f64::NEG_INFINITY),
            f64::NEG_INFINITY
        );
    }
}
