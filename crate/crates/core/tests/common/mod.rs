//! Reference computations for the integration tests, written independently
//! of the library's numerics.

#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

/// Composite Simpson rule with `panels` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let mut sum = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// `P(T ≤ t)` for `T = (Z + δ)/√(V/ν)`, integrating `Φ(t s/√ν - δ)` against
/// the χ_ν density of `s = √V`.
pub fn nct_cdf_reference(t: f64, nu: f64, delta: f64) -> f64 {
    let log_norm = (nu / 2.0 - 1.0) * std::f64::consts::LN_2 + ln_gamma(nu / 2.0);
    let density = |s: f64| {
        if s <= 0.0 {
            return if nu == 1.0 { (-log_norm).exp() } else { 0.0 };
        }
        ((nu - 1.0) * s.ln() - 0.5 * s * s - log_norm).exp()
    };
    let centre = nu.sqrt();
    let lo = (centre - 12.0).max(0.0);
    let hi = centre + 12.0;
    simpson(|s| phi(t * s / centre - delta) * density(s), lo, hi, 40_000)
}

/// `P(F ≤ x)` for the noncentral F by the Poisson mixture summed upward
/// from `j = 0`.
pub fn ncf_cdf_reference(x: f64, m: f64, nu: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = m * x / (m * x + nu);
    let half = lambda / 2.0;
    let last = (half + 60.0 * (half + 1.0).sqrt() + 60.0) as usize;
    let mut total = 0.0;
    for j in 0..=last {
        let log_w = if half == 0.0 {
            if j == 0 { 0.0 } else { f64::NEG_INFINITY }
        } else {
            -half + j as f64 * half.ln() - ln_gamma(j as f64 + 1.0)
        };
        if log_w > -800.0 {
            total += log_w.exp() * beta_reg(m / 2.0 + j as f64, nu / 2.0, y);
        }
    }
    total
}

/// `E[Var(X | level)]` for a density on `[lo, hi]` cut at `cuts`, by Simpson.
pub fn within_level_variance(density: impl Fn(f64) -> f64, lo: f64, hi: f64, cuts: &[f64]) -> f64 {
    let mut edges = vec![lo];
    edges.extend_from_slice(cuts);
    edges.push(hi);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let p = simpson(&density, a, b, 20_000);
        let m1 = simpson(|x| x * density(x), a, b, 20_000) / p;
        let m2 = simpson(|x| x * x * density(x), a, b, 20_000) / p;
        total += p * (m2 - m1 * m1);
    }
    total
}

/// `E exp(-c χ²_k / 2)` by Simpson in `u = sqrt(x)`.
pub fn chi_square_mgf_loss(c: f64, k: f64) -> f64 {
    let log_norm = -(k / 2.0) * std::f64::consts::LN_2 - ln_gamma(k / 2.0);
    // density of χ²_k at u², times the Jacobian 2u
    let f = |u: f64| {
        if u == 0.0 {
            return if k == 1.0 { 2.0 * log_norm.exp() } else { 0.0 };
        }
        let x = u * u;
        2.0 * u * (log_norm + (k / 2.0 - 1.0) * x.ln() - x / 2.0 - c * x / 2.0).exp()
    };
    simpson(f, 0.0, 12.0 + 2.0 * k.sqrt(), 40_000)
}

/// 50 `(t, ν, δ)` points covering both tails, small and large `ν`.
pub fn nct_grid() -> Vec<(f64, f64, f64)> {
    let mut pts = Vec::new();
    for &nu in &[1.0, 3.0, 10.0, 30.0, 397.0] {
        for &(t, delta) in &[
            (-2.0, 0.0),
            (0.5, 0.0),
            (1.0, 0.5),
            (2.0, 1.0),
            (1.6, 3.0),
            (4.0, 2.0),
            (-1.0, 1.5),
            (6.0, 5.0),
            (2.0, 5.0),
            (8.0, 4.0),
        ] {
            pts.push((t, nu, delta));
        }
    }
    pts
}

/// 50 `(x, m, ν, λ)` points.
pub fn ncf_grid() -> Vec<(f64, f64, f64, f64)> {
    let mut pts = Vec::new();
    for &(m, nu) in &[(1.0, 5.0), (1.0, 30.0), (2.0, 10.0), (3.0, 5.0), (5.0, 200.0)] {
        for &(x, lambda) in &[
            (0.5, 0.0),
            (2.0, 0.0),
            (1.0, 1.0),
            (2.0, 4.0),
            (4.0, 4.0),
            (3.0, 10.0),
            (10.0, 10.0),
            (8.0, 25.0),
            (20.0, 25.0),
            (40.0, 60.0),
        ] {
            pts.push((x, m, nu, lambda));
        }
    }
    pts
}

/// Two binary covariates in the model, both used for randomization.
pub const TWO_BINARY: &str = r#"
[model]
mu1 = 0.5
mu2 = 0.0
beta = [1.0, -0.5]
sigma_eps = 1.0

[[covariates]]
kind = "discrete"
levels = [[0.0, 0.5], [1.0, 0.5]]
cutpoints = [0.5]

[[covariates]]
kind = "discrete"
levels = [[0.0, 0.3], [1.0, 0.7]]
cutpoints = [0.5]
"#;

/// Every shipped procedure for two covariates.
pub const ALL_PROCEDURES: &str = r#"
[[procedures]]
kind = "complete"

[[procedures]]
kind = "efron"

[[procedures]]
kind = "wei"

[[procedures]]
kind = "permuted_block"

[[procedures]]
kind = "pocock_simon"

[[procedures]]
kind = "hu_hu"
weights = { overall = 0.3, margins = [0.2, 0.2], stratum = 0.3 }

[[procedures]]
kind = "family"
weights = { margins = [0.5, 0.5] }
allocation = { kind = "scaled", gamma = 0.5 }
"#;

pub fn config(header: &str) -> carct::config::ExperimentConfig {
    let text = format!("{header}\n{TWO_BINARY}\n{ALL_PROCEDURES}");
    carct::config::ExperimentConfig::from_toml_str(&text).expect("test config parses")
}
