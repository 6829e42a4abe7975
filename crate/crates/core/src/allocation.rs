//! Allocation functions `g_n` and the numerical diagnostics for the three
//! admissibility conditions used by the family of procedures:
//!
//! * lagging arm favoured: `g_n(x) ≤ 1/2 ≤ g_n(-x)` for `x ≥ 0`;
//! * strong drift: `|1/2 - g_n(x_n)| / (|x_n|/n) → ∞` whenever `0 < |x_n|/n → 0`;
//! * vanishing bias: `g_n(x_n) → 1/2` whenever `x_n/n → 0`.
//!
//! The diagnostics sample sequences on a finite grid and are heuristics,
//! not proofs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imbalance::LAMBDA_TIE_TOL;
use crate::special::norm_cdf;

/// Base function `g` used by scaled allocation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseG {
    /// `clamp((1 - x)/2, 0, 1)`, with `g'(0) = -1/2`.
    #[default]
    Linear,
    /// `1 - Φ(x)`.
    NormalTail,
}

impl BaseG {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BaseG::Linear => ((1.0 - x) / 2.0).clamp(0.0, 1.0),
            BaseG::NormalTail => norm_cdf(-x),
        }
    }

    /// `g'(0)`.
    pub fn slope_at_zero(self) -> f64 {
        match self {
            BaseG::Linear => -0.5,
            BaseG::NormalTail => -crate::special::norm_pdf(0.0),
        }
    }
}

/// Allocation function `g_n` mapping `Imb^(1) - Imb^(2) = 4Λ` to the
/// probability of assigning arm 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocationFunction {
    /// Biased-coin step: `q` above zero, `1/2` at zero, `p` below.
    Step { p: f64 },
    /// `g(x / (n-1)^γ)`.
    Scaled {
        #[serde(default)]
        base: BaseG,
        gamma: f64,
    },
    /// Piecewise-linear `g` through `points`, flat outside, scaled like
    /// [`AllocationFunction::Scaled`].
    Tabulated { points: Vec<(f64, f64)>, gamma: f64 },
    /// `1 - Φ(sgn(x) √(|x|/n))`.
    SignedRootNormal,
}

impl AllocationFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            AllocationFunction::Step { p } => {
                if !(*p > 0.5 && *p < 1.0) {
                    return Err(Error::Config(format!("step allocation needs 1/2 < p < 1, got {p}")));
                }
            }
            AllocationFunction::Scaled { gamma, .. } => check_gamma(*gamma)?,
            AllocationFunction::Tabulated { points, gamma } => {
                check_gamma(*gamma)?;
                if points.len() < 2 {
                    return Err(Error::Config("tabulated allocation needs at least two points".into()));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0) || w[1].1 > w[0].1) {
                    return Err(Error::Config(
                        "tabulated allocation needs strictly increasing x and non-increasing g".into(),
                    ));
                }
                if points.iter().any(|&(x, y)| !x.is_finite() || !(0.0..=1.0).contains(&y)) {
                    return Err(Error::Config("tabulated allocation values must lie in [0, 1]".into()));
                }
                if (interpolate(points, 0.0) - 0.5).abs() > 1e-12 {
                    return Err(Error::Config("tabulated allocation must pass through g(0) = 1/2".into()));
                }
            }
            AllocationFunction::SignedRootNormal => {}
        }
        Ok(())
    }

    /// Exponent `γ` of the `(n-1)^γ` scaling, when the function has one.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            AllocationFunction::Step { .. } => Some(0.0),
            AllocationFunction::Scaled { gamma, .. } | AllocationFunction::Tabulated { gamma, .. } => Some(*gamma),
            AllocationFunction::SignedRootNormal => None,
        }
    }

    /// True when `g_n` does not depend on `n`.
    pub fn is_time_homogeneous(&self) -> bool {
        self.gamma() == Some(0.0)
    }

    /// `g_n(x)` for the `n`-th patient (`n ≥ 1`).
    pub fn eval(&self, x: f64, n: u64) -> f64 {
        if x.abs() <= 4.0 * LAMBDA_TIE_TOL || n <= 1 {
            return 0.5;
        }
        let prior = (n - 1) as f64;
        match self {
            AllocationFunction::Step { p } => {
                if x > 0.0 {
                    1.0 - p
                } else {
                    *p
                }
            }
            AllocationFunction::Scaled { base, gamma } => base.eval(x / prior.powf(*gamma)),
            AllocationFunction::Tabulated { points, gamma } => interpolate(points, x / prior.powf(*gamma)),
            AllocationFunction::SignedRootNormal => 1.0 - norm_cdf(x.signum() * (x.abs() / n as f64).sqrt()),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (x0, y0) = points[i - 1];
    let (x1, y1) = points[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Outcome of [`validate_allocation_function`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub favours_lagging_arm: bool,
    pub strong_drift: bool,
    pub vanishing_bias: bool,
    /// `g_n(x) + g_n(-x) = 1` on the grid.
    pub symmetric: bool,
    /// Smallest `|1/2 - g_n(x_n)| / (|x_n|/n)` at the largest `n`, over the test sequences.
    pub min_final_ratio: f64,
    /// Largest `|g_n(x_n) - 1/2|` at the largest `n`, over the test sequences.
    pub max_final_deviation: f64,
}

/// Growth exponents `a` of the test sequences `x_n = n^a`; all have `x_n / n → 0`.
pub const SEQUENCE_EXPONENTS: [f64; 3] = [0.0, 0.25, 0.5];
/// Strong drift requires the ratio to exceed this at the finest scale.
pub const RATIO_THRESHOLD: f64 = 1e3;
/// Vanishing bias requires the deviation from 1/2 to fall below this at the finest scale.
pub const DEVIATION_THRESHOLD: f64 = 1e-3;
/// How many of the largest grid points must show a non-decreasing ratio.
const MONOTONE_TAIL: usize = 4;

/// Default `n` grid: `10^2, 10^3, ..., 10^16`.
pub fn default_n_grid() -> Vec<f64> {
    (2..=16).map(|e| 10f64.powi(e)).collect()
}

/// Default `x` grid for the sign condition.
pub fn default_x_grid() -> Vec<f64> {
    let mut xs = vec![0.0];
    xs.extend((-6..=20).map(|e| 2f64.powi(e)));
    xs
}

/// Numerical check of the three conditions on finite grids.
pub fn validate_allocation_function(g: &AllocationFunction, n_grid: &[f64], x_grid: &[f64]) -> AllocationReport {
    let mut ns: Vec<f64> = n_grid.iter().copied().filter(|n| *n >= 2.0).collect();
    ns.sort_by(f64::total_cmp);
    let at = |x: f64, n: f64| g.eval(x, n as u64);

    let mut favours_lagging_arm = true;
    let mut symmetric = true;
    for &n in &ns {
        for &x in x_grid.iter().filter(|x| **x >= 0.0) {
            let (gp, gm) = (at(x, n), at(-x, n));
            if !(gp <= 0.5 + 1e-15 && gm >= 0.5 - 1e-15) {
                favours_lagging_arm = false;
            }
            if (gp + gm - 1.0).abs() > 1e-12 {
                symmetric = false;
            }
        }
    }

    let mut strong_drift = !ns.is_empty();
    let mut vanishing_bias = !ns.is_empty();
    let mut min_final_ratio = f64::INFINITY;
    let mut max_final_deviation: f64 = 0.0;
    for &a in &SEQUENCE_EXPONENTS {
        for sign in [1.0, -1.0] {
            let ratios: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let x = sign * n.powf(a);
                    (0.5 - at(x, n)).abs() / (x.abs() / n)
                })
                .collect();
            let tail = &ratios[ratios.len().saturating_sub(MONOTONE_TAIL)..];
            let monotone = tail.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
            let last = *ratios.last().unwrap_or(&0.0);
            min_final_ratio = min_final_ratio.min(last);
            if !(monotone && last > RATIO_THRESHOLD) {
                strong_drift = false;
            }
            if let Some(&n) = ns.last() {
                let dev = (at(sign * n.powf(a), n) - 0.5).abs();
                max_final_deviation = max_final_deviation.max(dev);
                if dev >= DEVIATION_THRESHOLD {
                    vanishing_bias = false;
                }
            }
        }
    }

    AllocationReport { favours_lagging_arm, strong_drift, vanishing_bias, symmetric, min_final_ratio, max_final_deviation }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(g: &AllocationFunction) -> AllocationReport {
        validate_allocation_function(g, &default_n_grid(), &default_x_grid())
    }

    #[test]
    fn step_classification() {
        let r = report(&AllocationFunction::Step { p: 2.0 / 3.0 });
        assert!(r.favours_lagging_arm && r.strong_drift && !r.vanishing_bias && r.symmetric, "{r:?}");
    }

    #[test]
    fn wei_classification() {
        let r = report(&AllocationFunction::Scaled { base: BaseG::Linear, gamma: 1.0 });
        assert!(r.favours_lagging_arm && !r.strong_drift && r.vanishing_bias, "{r:?}");
    }

    #[test]
    fn signed_root_normal_satisfies_all() {
        let r = report(&AllocationFunction::SignedRootNormal);
        assert!(r.favours_lagging_arm && r.strong_drift && r.vanishing_bias && r.symmetric, "{r:?}");
    }

    #[test]
    fn intermediate_gamma_satisfies_sign_and_growth() {
        for gamma in [0.25, 0.5, 0.75] {
            for base in [BaseG::Linear, BaseG::NormalTail] {
                let r = report(&AllocationFunction::Scaled { base, gamma });
                assert!(r.favours_lagging_arm && r.strong_drift, "gamma {gamma} {base:?}: {r:?}");
            }
        }
    }

    #[test]
    fn asymmetric_table_is_flagged() {
        let g = AllocationFunction::Tabulated { points: vec![(-1.0, 0.9), (0.0, 0.5), (1.0, 0.3)], gamma: 0.5 };
        g.validate().unwrap();
        assert!(!report(&g).symmetric);
    }

    #[test]
    fn step_case_map() {
        let g = AllocationFunction::Step { p: 2.0 / 3.0 };
        assert_eq!(g.eval(-4.0, 5), 2.0 / 3.0);
        assert!((g.eval(4.0, 5) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.eval(0.0, 5), 0.5);
    }

    #[test]
    fn scaled_linear_hand_value() {
        // Λ = 1, n - 1 = 16, γ = 1/2: g(4 / 16^{1/2}) = g(1) = 0
        let g = AllocationFunction::Scaled { base: BaseG::Linear, gamma: 0.5 };
        assert_eq!(g.eval(4.0, 17), 0.0);
        assert_eq!(g.eval(2.0, 17), 0.25);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(AllocationFunction::Step { p: 0.5 }.validate().is_err());
        assert!(AllocationFunction::Step { p: 1.0 }.validate().is_err());
        assert!(AllocationFunction::Scaled { base: BaseG::Linear, gamma: 1.5 }.validate().is_err());
        let bad = AllocationFunction::Tabulated { points: vec![(-1.0, 0.2), (1.0, 0.8)], gamma: 0.0 };
        assert!(bad.validate().is_err());
    }
}
