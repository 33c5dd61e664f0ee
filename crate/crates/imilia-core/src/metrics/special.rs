//! Regularized incomplete beta function, the only special function the
//! metrics need (it carries the t-distribution tail for Pearson p-values).

/// Natural log of the complete beta function.
fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
///
/// Continued fraction (modified Lentz), switched at the symmetry point so the
/// fraction always converges fast. Absolute accuracy is well below 1e-10 over
/// the tested domain.
pub fn betainc_reg(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must lie in [0,1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = libm::exp(a * libm::log(x) + b * libm::log(1.0 - x) - ln_beta(a, b));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (Lentz's method).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    betainc_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with mpmath at 30 decimal digits.
    const BETAINC_CASES: &[(f64, f64, f64, f64)] = &[
        (0.5, 0.5, 0.5, 0.5),
        (2.0, 3.0, 0.4, 0.52480000000000004),
        (10.0, 0.5, 0.99, 0.65792817515678433),
        (0.5, 10.0, 0.01, 0.34207182484321553),
        (5.0, 5.0, 0.5, 0.5),
        (1.0, 1.0, 0.3, 0.3),
        (30.0, 40.0, 0.42, 0.44704953086047479),
        (0.5, 0.5, 1e-6, 0.00063661987847092447),
        (12.5, 0.5, 0.9999, 0.9605177569300622),
    ];

    #[test]
    fn betainc_matches_reference_to_1e10() {
        for &(a, b, x, want) in BETAINC_CASES {
            let got = betainc_reg(a, b, x);
            assert!(
                (got - want).abs() < 1e-10,
                "I_{x}({a},{b}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn betainc_endpoints() {
        assert_eq!(betainc_reg(2.0, 3.0, 0.0), 0.0);
        assert_eq!(betainc_reg(2.0, 3.0, 1.0), 1.0);
    }

    // Two-sided t-tail values from mpmath.
    const T_CASES: &[(f64, f64, f64)] = &[
        (2.228138851986273, 10.0, 0.050000000000000145),
        (1.0, 5.0, 0.36321746764912263),
        (3.5, 2.0, 0.072827350054469335),
        (0.5, 30.0, 0.62072300488512729),
        (12.0, 8.0, 2.1438667476887712e-6),
        (2.0, 1.0, 0.29516723530086655),
        (4.2, 98.0, 5.8859074062569519e-5),
        (0.05, 3.0, 0.96326514459138633),
    ];

    #[test]
    fn t_tail_matches_reference() {
        for &(t, df, want) in T_CASES {
            let got = t_two_sided_p(t, df);
            assert!(
                (got - want).abs() < 1e-10 * want.max(1e-4),
                "p(t={t}, df={df}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn t_tail_symmetric_in_sign() {
        assert_eq!(t_two_sided_p(2.0, 7.0), t_two_sided_p(-2.0, 7.0));
    }
}
