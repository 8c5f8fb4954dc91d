//! Dual power transformation `h_λ(x) = (x^λ − x^{−λ}) / (2λ)` with `h_0 = log`.
//!
//! Evaluation goes through `sinh(λ ln x) / λ` and `exp(asinh(λ t) / λ)`; the
//! power forms overflow for moderate `λ t` and cancel badly as `λ → 0`.

use crate::error::{PtfhError, Result};

/// Below this value of λ the transform is evaluated as the log case.
pub const EPS_LAMBDA: f64 = 1e-8;

/// Transformation parameter λ ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct TransformParam(f64);

impl TransformParam {
    pub const LOG: TransformParam = TransformParam(0.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(PtfhError::Domain(format!(
                "transform parameter must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(TransformParam(lambda))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// True when evaluation uses the log branch.
    #[inline]
    pub fn is_log(self) -> bool {
        self.0 < EPS_LAMBDA
    }
}

#[inline]
pub(crate) fn dpt_raw(x: f64, lambda: f64) -> f64 {
    let lx = x.ln();
    if lambda < EPS_LAMBDA {
        lx
    } else {
        (lambda * lx).sinh() / lambda
    }
}

#[inline]
pub(crate) fn dpt_inv_raw(t: f64, lambda: f64) -> f64 {
    if lambda < EPS_LAMBDA {
        t.exp()
    } else {
        ((lambda * t).asinh() / lambda).exp()
    }
}

/// Forward transform `h_λ(x)` for `x > 0`.
pub fn dpt(x: f64, lambda: TransformParam) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(PtfhError::Domain(format!(
            "transform argument must be finite and positive, got {x}"
        )));
    }
    let h = dpt_raw(x, lambda.0);
    if !h.is_finite() {
        return Err(PtfhError::Overflow(format!(
            "h_lambda({x}) with lambda = {} is not representable",
            lambda.0
        )));
    }
    Ok(h)
}

/// Inverse transform `h_λ^{-1}(t)`; always positive.
pub fn dpt_inv(t: f64, lambda: TransformParam) -> Result<f64> {
    if !t.is_finite() {
        return Err(PtfhError::Domain(format!(
            "inverse transform argument must be finite, got {t}"
        )));
    }
    let x = dpt_inv_raw(t, lambda.0);
    if !x.is_finite() {
        return Err(PtfhError::Overflow(format!(
            "inverse transform of {t} with lambda = {} exceeds f64 range",
            lambda.0
        )));
    }
    if x <= 0.0 {
        return Err(PtfhError::Overflow(format!(
            "inverse transform of {t} with lambda = {} underflows to zero",
            lambda.0
        )));
    }
    Ok(x)
}

/// `d/dx h_λ(x) = (x^{λ−1} + x^{−λ−1}) / 2 = cosh(λ ln x) / x`.
pub fn dpt_derivative(x: f64, lambda: TransformParam) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(PtfhError::Domain(format!(
            "transform argument must be finite and positive, got {x}"
        )));
    }
    Ok((lambda.0 * x.ln()).cosh() / x)
}

#[inline]
pub(crate) fn log_jacobian_raw(y: f64, lambda: f64) -> f64 {
    let ly = y.ln();
    let s = (lambda * ly).abs();
    // log(y^{λ-1} + y^{-λ-1}) = -ln y + s + log(1 + e^{-2s})
    -ly + s + (-2.0 * s).exp().ln_1p()
}

/// Per-area Jacobian summand `log(y^{λ−1} + y^{−λ−1})`.
///
/// This is twice the log-derivative of `h_λ` plus `log 2`; the likelihood
/// multiplies the sum of these terms by 2.
pub fn log_jacobian_term(y: f64, lambda: TransformParam) -> Result<f64> {
    if !(y.is_finite() && y > 0.0) {
        return Err(PtfhError::Domain(format!(
            "jacobian argument must be finite and positive, got {y}"
        )));
    }
    Ok(log_jacobian_raw(y, lambda.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lam(v: f64) -> TransformParam {
        TransformParam::new(v).unwrap()
    }

    #[test]
    fn known_values() {
        assert_eq!(dpt(1.0, lam(0.7)).unwrap(), 0.0);
        assert_relative_eq!(dpt(2.0, lam(1.0)).unwrap(), 0.75, max_relative = 1e-15);
        assert_relative_eq!(dpt(std::f64::consts::E, lam(0.0)).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dpt(std::f64::consts::E, lam(1e-9)).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dpt_inv(0.0, lam(0.3)).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(dpt_inv(0.75, lam(1.0)).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn stable_form_matches_power_form() {
        let (x, l): (f64, f64) = (5.0, 0.4);
        let naive = (x.powf(l) - x.powf(-l)) / (2.0 * l);
        assert_relative_eq!(dpt(x, lam(l)).unwrap(), naive, max_relative = 1e-12);

        for &t in &[-3.0, -0.5, 0.0, 0.2, 1.7, 4.0_f64] {
            for &l in &[0.1, 0.5, 1.0, 2.0_f64] {
                let closed = (l * t + (l * l * t * t + 1.0).sqrt()).powf(1.0 / l);
                assert_relative_eq!(dpt_inv(t, lam(l)).unwrap(), closed, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_values() {
        for &l in &[0.0, 0.3, 1.0, 1.9] {
            assert_relative_eq!(
                log_jacobian_term(1.0, lam(l)).unwrap(),
                std::f64::consts::LN_2,
                max_relative = 1e-15
            );
        }
        assert_relative_eq!(
            log_jacobian_term(std::f64::consts::E, lam(0.0)).unwrap(),
            std::f64::consts::LN_2 - 1.0,
            max_relative = 1e-14
        );
        let (y, l): (f64, f64) = (50.0, 0.6);
        let naive = (y.powf(l - 1.0) + y.powf(-l - 1.0)).ln();
        assert_relative_eq!(log_jacobian_term(y, lam(l)).unwrap(), naive, max_relative = 1e-12);
        // extreme arguments stay finite
        assert!(log_jacobian_term(1e300, lam(2.0)).unwrap().is_finite());
        assert!(log_jacobian_term(1e-300, lam(2.0)).unwrap().is_finite());
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(dpt(0.0, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(matches!(dpt(-1.0, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(matches!(dpt(f64::NAN, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(matches!(dpt(f64::INFINITY, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(matches!(log_jacobian_term(0.0, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(matches!(dpt_inv(f64::NAN, lam(0.5)), Err(PtfhError::Domain(_))));
        assert!(TransformParam::new(-0.1).is_err());
        assert!(TransformParam::new(f64::NAN).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        assert!(matches!(dpt_inv(800.0, lam(0.0)), Err(PtfhError::Overflow(_))));
        assert!(matches!(dpt_inv(1e200, lam(0.01)), Err(PtfhError::Overflow(_))));
        assert!(matches!(dpt(1e300, lam(2.0)), Err(PtfhError::Overflow(_))));
    }

    #[test]
    fn round_trip_grid() {
        for &x in &[1e-3, 0.1, 1.0, 10.0, 1e3] {
            for &l in &[0.0, 0.1, 0.5, 1.0, 2.0] {
                let back = dpt_inv(dpt(x, lam(l)).unwrap(), lam(l)).unwrap();
                assert_relative_eq!(back, x, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn lambda_continuity() {
        let l = lam(2.0 * EPS_LAMBDA);
        for i in 0..=100 {
            let x = 0.1 + 9.9 * i as f64 / 100.0;
            assert!((dpt(x, l).unwrap() - x.ln()).abs() < 1e-6);
            let t = -3.0 + 6.0 * i as f64 / 100.0;
            assert!((dpt_inv(t, l).unwrap() - t.exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        for &l in &[0.0, 0.3, 1.0, 2.0] {
            for i in 1..20 {
                let x = 0.2 + 0.25 * i as f64;
                let h = 1e-5 * x;
                let fd = (dpt(x + h, lam(l)).unwrap() - dpt(x - h, lam(l)).unwrap()) / (2.0 * h);
                let exact = dpt_derivative(x, lam(l)).unwrap();
                assert_relative_eq!(fd, exact, max_relative = 1e-6);
                // the jacobian term is log(2 h'(x))
                assert_relative_eq!(
                    log_jacobian_term(x, lam(l)).unwrap(),
                    (2.0 * exact).ln(),
                    max_relative = 1e-12,
                    epsilon = 1e-14
                );
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_x(a in 1e-3f64..1e3, b in 1e-3f64..1e3, l in 0.0f64..2.0) {
            prop_assume!((a - b).abs() > 1e-9 * a.max(b));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(dpt(lo, lam(l)).unwrap() < dpt(hi, lam(l)).unwrap());
        }

        #[test]
        fn antisymmetric_in_log_scale(x in 1e-3f64..1e3, l in 0.0f64..2.0) {
            let a = dpt(1.0 / x, lam(l)).unwrap();
            let b = dpt(x, lam(l)).unwrap();
            prop_assert!((a + b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn inverse_round_trip(t in -6.0f64..6.0, l in 0.0f64..2.0) {
            let x = dpt_inv(t, lam(l)).unwrap();
            prop_assert!(x > 0.0);
            let back = dpt(x, lam(l)).unwrap();
            prop_assert!((back - t).abs() <= 1e-10 * t.abs().max(1.0));
        }
    }
}
