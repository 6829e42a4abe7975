//! Noncentral t and F distribution functions, central t quantiles.
//!
//! The noncentral t uses the mixture form `F(t; ν, δ) = E[Φ(tS - δ)]` with
//! `S = √(χ²_ν/ν)`. The log-integrand is concave in `s`, so it is located by
//! its mode, clipped where it drops 46 nats below the peak, and integrated
//! with adaptive Gauss–Kronrod. Everything is done relative to the peak, so
//! probabilities far below `1e-300` keep full relative accuracy in log form.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::quadrature::{bisect, integrate};
use crate::special::{inverse_mills, log_norm_cdf};

/// Depth below the peak (in nats) at which the integrand is cut off.
const LOG_DEPTH: f64 = 46.0;
const REL_TOL: f64 = 1e-13;
/// Poisson tail mass left out of the noncentral F series.
const POISSON_TAIL: f64 = 1e-12;

#[derive(Clone, Copy)]
enum Tail {
    Lower,
    Upper,
}

fn check_nu(nu: f64) -> Result<()> {
    if nu >= 1.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("degrees of freedom must be finite and at least 1, got {nu}")))
    }
}

fn log_density_s(s: f64, nu: f64, log_norm: f64) -> f64 {
    if s <= 0.0 {
        return if nu == 1.0 { log_norm } else { f64::NEG_INFINITY };
    }
    log_norm + (nu - 1.0) * s.ln() - 0.5 * nu * s * s
}

/// `ln P(T ≤ t)` (lower) or `ln P(T > t)` (upper) for `T ~ t(ν, δ)`.
fn nct_log_tail(t: f64, nu: f64, delta: f64, tail: Tail) -> Result<f64> {
    check_nu(nu)?;
    if !(t.is_finite() && delta.is_finite()) {
        return Err(Error::Numerical(format!("noncentral t arguments must be finite: t={t}, delta={delta}")));
    }
    let half = 0.5 * nu;
    let log_norm = LN_2 + half * half.ln() - ln_gamma(half);
    // Φ-argument is a·s + b.
    let (a, b) = match tail {
        Tail::Lower => (t, -delta),
        Tail::Upper => (-t, delta),
    };
    let log_h = |s: f64| log_norm_cdf(a * s + b) + log_density_s(s, nu, log_norm);
    let slope = |s: f64| a * inverse_mills(a * s + b) + (nu - 1.0) / s - nu * s;

    // mode of the concave log-integrand
    let mut hi = 1.0;
    while slope(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Numerical("noncentral t integrand has no interior mode".into()));
        }
    }
    let mode = if slope(1e-300) <= 0.0 { 0.0 } else { bisect(slope, 0.0, hi, 1e-15 * hi) };
    let peak = log_h(mode);
    let floor = peak - LOG_DEPTH;

    let left = if mode == 0.0 || log_h(0.0) >= floor {
        0.0
    } else {
        bisect(|s| log_h(s) - floor, 0.0, mode, 1e-14 * mode.max(1e-300))
    };
    let mut right = mode.max(1.0);
    while log_h(right) > floor {
        right *= 2.0;
    }
    let right = bisect(|s| log_h(s) - floor, mode, right, 1e-14 * right);

    let result = integrate(|s| (log_h(s) - peak).exp(), left, right, 0.0, REL_TOL)?;
    if !(result.value > 0.0) {
        return Err(Error::Numerical("noncentral t integral vanished".into()));
    }
    Ok((peak + result.value.ln()).min(0.0))
}

/// `ln F(t; ν, δ)`. The tail beyond `δ` is integrated directly and the
/// other side taken as its complement.
pub fn noncentral_t_log_cdf(t: f64, nu: f64, delta: f64) -> Result<f64> {
    if t >= delta {
        Ok((-nct_log_tail(t, nu, delta, Tail::Upper)?.exp()).ln_1p())
    } else {
        nct_log_tail(t, nu, delta, Tail::Lower)
    }
}

/// `ln (1 - F(t; ν, δ))`.
pub fn noncentral_t_log_sf(t: f64, nu: f64, delta: f64) -> Result<f64> {
    if t < delta {
        Ok((-nct_log_tail(t, nu, delta, Tail::Lower)?.exp()).ln_1p())
    } else {
        nct_log_tail(t, nu, delta, Tail::Upper)
    }
}

/// `F(t; ν, δ) = P(T ≤ t)` for a noncentral t with `ν` degrees of freedom.
///
/// The smaller of the two tails is integrated, so both ends are accurate.
pub fn noncentral_t_cdf(t: f64, nu: f64, delta: f64) -> Result<f64> {
    if t >= delta {
        Ok(-nct_log_tail(t, nu, delta, Tail::Upper)?.exp_m1())
    } else {
        Ok(nct_log_tail(t, nu, delta, Tail::Lower)?.exp())
    }
}

fn poisson_log_pmf(j: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    j as f64 * mean.ln() - mean - ln_gamma(j as f64 + 1.0)
}

/// Sums `Σ_j Pois(j; λ/2) term(j)` outward from the Poisson mode until the
/// neglected Poisson mass is below [`POISSON_TAIL`].
fn poisson_mixture(lambda: f64, mut term: impl FnMut(u64) -> f64) -> Result<f64> {
    let mean = 0.5 * lambda;
    let mode = mean.floor() as u64;
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut j = mode;
    loop {
        let w = poisson_log_pmf(j, mean).exp();
        mass += w;
        total += w * term(j);
        if j == 0 || (w < POISSON_TAIL * 1e-3 && j + 50 < mode) {
            break;
        }
        j -= 1;
    }
    let mut j = mode + 1;
    while 1.0 - mass > POISSON_TAIL {
        let w = poisson_log_pmf(j, mean).exp();
        if w == 0.0 && j > mode + 10 {
            break;
        }
        mass += w;
        total += w * term(j);
        j += 1;
        if j > mode + 100_000 {
            return Err(Error::Numerical("noncentral F series did not converge".into()));
        }
    }
    Ok(total)
}

/// `P(F ≤ x)` for a noncentral F with `(m, ν)` degrees of freedom and
/// noncentrality `λ`, via the Poisson mixture of regularized incomplete betas.
pub fn noncentral_f_cdf(x: f64, m: f64, nu: f64, lambda: f64) -> Result<f64> {
    check_nu(m)?;
    check_nu(nu)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Numerical(format!("noncentrality must be finite and nonnegative, got {lambda}")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let z = m * x / (m * x + nu);
    let v = poisson_mixture(lambda, |j| beta_reg(0.5 * m + j as f64, 0.5 * nu, z))?;
    Ok(v.clamp(0.0, 1.0))
}

/// `P(F > x)`, summed directly so small upper tails keep relative accuracy.
pub fn noncentral_f_sf(x: f64, m: f64, nu: f64, lambda: f64) -> Result<f64> {
    check_nu(m)?;
    check_nu(nu)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Numerical(format!("noncentrality must be finite and nonnegative, got {lambda}")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    let w = nu / (m * x + nu);
    let v = poisson_mixture(lambda, |j| beta_reg(0.5 * nu, 0.5 * m + j as f64, w))?;
    Ok(v.clamp(0.0, 1.0))
}

/// Central t distribution function.
pub fn t_cdf(t: f64, nu: f64) -> f64 {
    StudentsT::new(0.0, 1.0, nu).expect("valid degrees of freedom").cdf(t)
}

/// `t_p(ν)` by bisection on the central t distribution function.
pub fn t_quantile(p: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Numerical(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let dist = StudentsT::new(0.0, 1.0, nu).expect("valid degrees of freedom");
    let mut span = 8.0;
    while dist.cdf(span) < p || dist.cdf(-span) > p {
        span *= 2.0;
    }
    Ok(bisect(|x| dist.cdf(x) - p, -span, span, 1e-12))
}
