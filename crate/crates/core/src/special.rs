//! The erf family and closed-form Gaussian expectations of erf expressions.
//!
//! Throughout, `G ~ N(0, gamma_sq)` and expectations are over `G`. erf itself
//! comes from `libm` (a port of the musl/FreeBSD implementation, within 1 ulp
//! on the real line).

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quad;

/// 2 / sqrt(pi)
pub const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

const ZETA_TOL: f64 = 1e-12;
/// Upper-tail cutoff for the zeta integral, in units of sqrt(1 + 2 gamma^2).
const ZETA_TAIL_SIGMAS: f64 = 8.0;

#[inline]
pub fn erf(u: f64) -> f64 {
    libm::erf(u)
}

/// erf'(u) = 2/sqrt(pi) exp(-u^2)
#[inline]
pub fn derf(u: f64) -> f64 {
    TWO_OVER_SQRT_PI * (-u * u).exp()
}

/// erf''(u) = -2u erf'(u)
#[inline]
pub fn dderf(u: f64) -> f64 {
    -2.0 * u * derf(u)
}

/// erf'''(u) = (4u^2 - 2) erf'(u)
#[inline]
pub fn ddderf(u: f64) -> f64 {
    (4.0 * u * u - 2.0) * derf(u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErfFamily {
    pub erf: f64,
    pub derf: f64,
    pub dderf: f64,
}

pub fn erf_family(u: f64) -> Result<ErfFamily> {
    if !u.is_finite() {
        return Err(Error::NonFinite("erf argument"));
    }
    let d = derf(u);
    Ok(ErfFamily {
        erf: erf(u),
        derf: d,
        dderf: -2.0 * u * d,
    })
}

/// Closed-form moments `E[h(t + G)]` for the erf expressions the risk needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussErfMoments {
    /// E[erf(t+G)]
    pub e_erf: f64,
    /// E[erf'(t+G)]
    pub e_derf: f64,
    /// E[erf''(t+G)]
    pub e_dderf: f64,
    /// E[erf'(t+G)^2]
    pub e_derf_sq: f64,
    /// E[erf(t+G) erf'(t+G)]
    pub e_erf_derf: f64,
}

fn check_args(t: f64, gamma_sq: f64) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::NonFinite("t"));
    }
    if !gamma_sq.is_finite() {
        return Err(Error::NonFinite("gamma_sq"));
    }
    if gamma_sq < 0.0 {
        return Err(invalid("gamma_sq", format!("must be >= 0, got {gamma_sq}")));
    }
    Ok(())
}

pub fn gauss_erf_moments(t: f64, gamma_sq: f64) -> Result<GaussErfMoments> {
    check_args(t, gamma_sq)?;
    let s1 = 1.0 + 2.0 * gamma_sq;
    let s2 = 1.0 + 4.0 * gamma_sq;
    let r1 = s1.sqrt();
    let u = t / r1;
    Ok(GaussErfMoments {
        e_erf: erf(u),
        e_derf: derf(u) / r1,
        e_dderf: dderf(u) / s1,
        e_derf_sq: TWO_OVER_SQRT_PI / s2.sqrt() * derf(std::f64::consts::SQRT_2 * t / s2.sqrt()),
        e_erf_derf: e_erf_derf_unchecked(t, gamma_sq),
    })
}

#[inline]
pub(crate) fn e_erf_derf_unchecked(t: f64, gamma_sq: f64) -> f64 {
    let s1 = 1.0 + 2.0 * gamma_sq;
    let s2 = 1.0 + 4.0 * gamma_sq;
    let r1 = s1.sqrt();
    erf(t / (s1 * s2).sqrt()) * derf(t / r1) / r1
}

/// E[erf(t+G) erf''(t+G)], obtained by differentiating the closed form of
/// E[erf erf'] in `t` and subtracting E[erf'^2].
pub fn gauss_erf_dderf_product(t: f64, gamma_sq: f64) -> Result<f64> {
    let m = gauss_erf_moments(t, gamma_sq)?;
    let s1 = 1.0 + 2.0 * gamma_sq;
    let s2 = 1.0 + 4.0 * gamma_sq;
    let r1 = s1.sqrt();
    let r12 = (s1 * s2).sqrt();
    let d_e_erf_derf =
        (derf(t / r12) / r12 * derf(t / r1) + erf(t / r12) * dderf(t / r1) / r1) / r1;
    Ok(d_e_erf_derf - m.e_derf_sq)
}

/// zeta(t, gamma^2) = E[erf^2(t+G)].
///
/// zeta is even in `t`, tends to 1 as |t| grows, and its `t`-derivative is
/// `2 E[erf erf'](t)` in closed form, so
/// `zeta(t) = 1 - int_{|t|}^inf 2 E[erf erf'](s) ds`, evaluated by composite
/// Gauss–Legendre quadrature. The integrand decays like
/// `exp(-s^2 / (1 + 2 gamma^2))`, so the upper limit is cut at
/// `|t| + 8 sqrt(1 + 2 gamma^2)`.
pub fn zeta(t: f64, gamma_sq: f64) -> Result<f64> {
    check_args(t, gamma_sq)?;
    if gamma_sq == 0.0 {
        let e = erf(t);
        return Ok(e * e);
    }
    let a = t.abs();
    let upper = a + ZETA_TAIL_SIGMAS * (1.0 + 2.0 * gamma_sq).sqrt();
    let tail = quad::integrate(
        |s| 2.0 * e_erf_derf_unchecked(s, gamma_sq),
        a,
        upper,
        ZETA_TOL,
    )?;
    Ok((1.0 - tail).clamp(0.0, 1.0))
}

/// d zeta / dt = 2 E[erf erf'](t).
pub fn dzeta_dt(t: f64, gamma_sq: f64) -> Result<f64> {
    Ok(2.0 * gauss_erf_moments(t, gamma_sq)?.e_erf_derf)
}

/// zeta(0, gamma^2) in closed form, (2/pi) asin(2 gamma^2 / (1 + 2 gamma^2)).
/// Used as a cross-check against the quadrature route.
pub fn zeta_at_zero_closed_form(gamma_sq: f64) -> f64 {
    2.0 / PI * (2.0 * gamma_sq / (1.0 + 2.0 * gamma_sq)).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Maclaurin series of erf, summed to convergence.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..64 {
            let n = n as f64;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        TWO_OVER_SQRT_PI * sum
    }

    #[test]
    fn erf_family_at_zero() {
        let f = erf_family(0.0).unwrap();
        assert_eq!(f.erf, 0.0);
        assert_eq!(f.derf, TWO_OVER_SQRT_PI);
        assert_eq!(f.dderf, 0.0);
    }

    #[test]
    fn erf_saturates() {
        assert_eq!(erf_family(40.0).unwrap().erf, 1.0);
        assert_eq!(erf_family(-40.0).unwrap().erf, -1.0);
    }

    #[test]
    fn erf_matches_series_at_one() {
        let f = erf_family(1.0).unwrap();
        assert!((f.erf - erf_series(1.0)).abs() < 1e-14);
    }

    #[test]
    fn erf_rejects_non_finite() {
        assert!(erf_family(f64::NAN).is_err());
        assert!(erf_family(f64::INFINITY).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for i in -30..=30 {
            let u = i as f64 * 0.1;
            let fd1 = (erf(u + h) - erf(u - h)) / (2.0 * h);
            let fd2 = (derf(u + h) - derf(u - h)) / (2.0 * h);
            let fd3 = (dderf(u + h) - dderf(u - h)) / (2.0 * h);
            assert!((fd1 - derf(u)).abs() < 1e-8, "erf' at {u}");
            assert!((fd2 - dderf(u)).abs() < 1e-8, "erf'' at {u}");
            assert!((fd3 - ddderf(u)).abs() < 1e-8, "erf''' at {u}");
            assert!(erf(u).abs() <= TWO_OVER_SQRT_PI * u.abs() + 1e-16);
        }
    }

    #[test]
    fn moments_degenerate_cases() {
        let m = gauss_erf_moments(0.0, 0.7).unwrap();
        assert_eq!(m.e_erf, 0.0);
        assert_eq!(m.e_erf_derf, 0.0);
        let m = gauss_erf_moments(0.7, 0.0).unwrap();
        assert_eq!(m.e_erf, erf(0.7));
        assert_eq!(m.e_derf, derf(0.7));
        assert!(gauss_erf_moments(0.1, -1e-3).is_err());
    }

    #[test]
    fn zeta_degenerate_cases() {
        assert_eq!(zeta(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(zeta(1.2, 0.0).unwrap(), erf(1.2).powi(2));
        assert!(zeta(0.0, -0.5).is_err());
    }

    #[test]
    fn zeta_at_zero_matches_arcsine_form() {
        for &g2 in &[1e-4, 0.01, 0.25, 0.5, 1.0, 4.0, 25.0] {
            let q = zeta(0.0, g2).unwrap();
            let c = zeta_at_zero_closed_form(g2);
            assert!((q - c).abs() < 1e-13, "g2={g2}: {q} vs {c}");
        }
    }

    #[test]
    fn dzeta_special_values() {
        assert_eq!(dzeta_dt(0.0, 0.3).unwrap(), 0.0);
        let t = 0.8;
        assert!((dzeta_dt(t, 0.0).unwrap() - 2.0 * erf(t) * derf(t)).abs() < 1e-15);
    }
}
