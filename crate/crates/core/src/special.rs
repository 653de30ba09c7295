//! Special functions used by the samplers, likelihoods and theory checks.
//!
//! Backed by `statrs`, with a Newton polish on the inverse error function
//! to hold absolute error below 1e-10 across the working range.

use crate::{Error, Result};
use statrs::function::beta::beta_reg;
use statrs::function::erf as statrs_erf;

pub use statrs::function::gamma::{digamma, ln_gamma};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6; // 2/sqrt(pi)

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpecialFn {
    Erf,
    ErfInv,
    LogGamma,
    /// Regularized incomplete beta `I_x(a, b)`.
    BetaReg { a: f64, b: f64 },
    NormalCdf,
    NormalQuantile,
    /// CDF of the symmetric Beta(lambda, lambda) distribution.
    SymBetaCdf { lambda: f64 },
}

/// Dispatch a special-function evaluation with domain validation.
pub fn special(spec: SpecialFn, x: f64) -> Result<f64> {
    match spec {
        SpecialFn::Erf => Ok(erf(x)),
        SpecialFn::ErfInv => {
            if !(-1.0 < x && x < 1.0) {
                return Err(Error::Domain(format!("erf_inv of {x} outside (-1, 1)")));
            }
            Ok(erf_inv(x))
        }
        SpecialFn::LogGamma => {
            if x <= 0.0 {
                return Err(Error::Domain(format!("log_gamma of non-positive {x}")));
            }
            Ok(ln_gamma(x))
        }
        SpecialFn::BetaReg { a, b } => reg_inc_beta(a, b, x),
        SpecialFn::NormalCdf => Ok(normal_cdf(x)),
        SpecialFn::NormalQuantile => normal_quantile(x),
        SpecialFn::SymBetaCdf { lambda } => {
            if lambda <= 0.0 {
                return Err(Error::Domain(format!("beta parameter {lambda} <= 0")));
            }
            reg_inc_beta(lambda, lambda, x)
        }
    }
}

pub fn erf(x: f64) -> f64 {
    statrs_erf::erf(x)
}

/// Inverse error function, polished by two Newton steps.
pub fn erf_inv(y: f64) -> f64 {
    debug_assert!((-1.0..=1.0).contains(&y));
    let mut x = statrs_erf::erf_inv(y);
    for _ in 0..2 {
        let err = erf(x) - y;
        // d/dx erf(x) = 2/sqrt(pi) * exp(-x^2)
        x -= err / (FRAC_2_SQRT_PI * (-x * x).exp());
    }
    x
}

pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::Domain(format!(
            "incomplete beta parameters must be positive, got ({a}, {b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("incomplete beta x {x} outside [0, 1]")));
    }
    Ok(beta_reg(a, b, x))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile of {p} outside (0, 1)")));
    }
    Ok(SQRT_2 * erf_inv(2.0 * p - 1.0))
}
