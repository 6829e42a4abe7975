//! Conditional power of the treatment test and the relative loss of power.
//!
//! Given the realized design, the t statistic is noncentral t with
//! `ν = n - I - 2` and noncentrality `(μ / 2σ_ε) ℓ_n`, where
//! `ℓ_n = 2 / √(L (XᵀX)⁻¹ Lᵀ)` and
//! `ℓ_n² = n (1 - d²)² / (1 - d² + Q_n²/n)`, `d = D_n/n`,
//! `Q_n² = uᵀ (S_xx/n)⁻¹ u`, `u = (D^x - X̄ D_n)/√n`.
//! Type II errors are handled in logs because they reach `1e-90` and below
//! at the sample sizes of interest.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::distributions::{noncentral_t_log_cdf, t_quantile};
use super::ols::ResponseModel;
use crate::covariate::CovariateSet;
use crate::error::{Error, Result};
use crate::imbalance::ImbalanceState;
use crate::procedures::Procedure;
use crate::special::{log_diff_exp, log_norm_cdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    T,
    Z,
}

/// Right-sided (or two-sided) test of `μ₁ = μ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub sides: Sides,
    pub family: TestFamily,
    pub alpha: f64,
}

impl Default for TestSpec {
    fn default() -> Self {
        TestSpec { sides: Sides::One, family: TestFamily::T, alpha: 0.05 }
    }
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::Config(format!("alpha must lie in (0, 0.5], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Critical value for `ν` residual degrees of freedom.
    pub fn critical_value(&self, nu: f64) -> Result<f64> {
        let level = match self.sides {
            Sides::One => 1.0 - self.alpha,
            Sides::Two => 1.0 - 0.5 * self.alpha,
        };
        match self.family {
            TestFamily::T => t_quantile(level, nu),
            TestFamily::Z => Ok(norm_quantile(level)),
        }
    }

    pub fn rejects(&self, statistic: f64, critical: f64) -> bool {
        match self.sides {
            Sides::One => statistic > critical,
            Sides::Two => statistic.abs() > critical,
        }
    }

    /// `ln(1 - power)` at noncentrality `delta`.
    pub fn log_type2(&self, critical: f64, nu: f64, delta: f64) -> Result<f64> {
        match (self.family, self.sides) {
            (TestFamily::T, Sides::One) => noncentral_t_log_cdf(critical, nu, delta),
            (TestFamily::T, Sides::Two) => {
                let hi = noncentral_t_log_cdf(critical, nu, delta)?;
                let lo = noncentral_t_log_cdf(-critical, nu, delta)?;
                Ok(log_diff_exp(hi, lo))
            }
            (TestFamily::Z, Sides::One) => Ok(log_norm_cdf(critical - delta)),
            (TestFamily::Z, Sides::Two) => {
                Ok(log_diff_exp(log_norm_cdf(critical - delta), log_norm_cdf(-critical - delta)))
            }
        }
    }
}

/// `ν = n - I - 2`.
pub fn residual_df(n: u64, num_covariates: usize) -> Result<f64> {
    let p = num_covariates as u64 + 2;
    if n <= p {
        return Err(Error::DegenerateDesign(format!("n = {n} needs to exceed I + 2 = {p}")));
    }
    Ok((n - p) as f64)
}

/// `ℓ_n` from the imbalance state and the pooled within-arm `S_xx`.
pub fn ell_n(state: &ImbalanceState, s_xx: &DMatrix<f64>) -> Result<f64> {
    let n = state.n() as f64;
    let d = state.d_overall() as f64 / n;
    let one_minus = 1.0 - d * d;
    if !(one_minus > 0.0) {
        return Err(Error::DegenerateDesign("all patients are in one arm".into()));
    }
    let q_sq = q_squared(state, s_xx)?;
    Ok((n * one_minus * one_minus / (one_minus + q_sq / n)).sqrt())
}

/// `Q_n² = uᵀ (S_xx/n)⁻¹ u` with `u = (D^x - X̄ D)/√n`.
pub fn q_squared(state: &ImbalanceState, s_xx: &DMatrix<f64>) -> Result<f64> {
    let i = state.d_x().len();
    if s_xx.nrows() != i || s_xx.ncols() != i {
        return Err(Error::Numerical(format!("S_xx must be {i}×{i}")));
    }
    if i == 0 {
        return Ok(0.0);
    }
    let n = state.n() as f64;
    let d = state.d_overall() as f64;
    let u = DVector::from_iterator(
        i,
        state.d_x().iter().zip(state.sum_x()).map(|(dx, sx)| (dx - sx / n * d) / n.sqrt()),
    );
    let scaled = s_xx / n;
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("S_xx is singular".into()))?;
    Ok(u.dot(&chol.solve(&u)))
}

/// Conditional power given the design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalPower {
    pub ell_n: f64,
    pub power: f64,
    /// `ln(1 - power)`.
    pub log_type2: f64,
}

/// Quantities that depend only on `n`, shared by all trials of that size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCalibration {
    pub n: u64,
    pub nu: f64,
    pub critical: f64,
    /// `μ / (2σ_ε)`.
    pub effect_scale: f64,
    /// `ln(1 - β_{T,n}(μ|0))`, the type II error under perfect balance.
    pub log_type2_balanced: f64,
}

impl PowerCalibration {
    pub fn new(model: &ResponseModel, test: &TestSpec, n: u64, num_covariates: usize) -> Result<Self> {
        let nu = residual_df(n, num_covariates)?;
        let critical = test.critical_value(nu)?;
        let effect_scale = model.effect() / (2.0 * model.sigma_eps);
        let log_type2_balanced = test.log_type2(critical, nu, effect_scale * (n as f64).sqrt())?;
        Ok(PowerCalibration { n, nu, critical, effect_scale, log_type2_balanced })
    }

    pub fn conditional_power(&self, test: &TestSpec, ell: f64) -> Result<ConditionalPower> {
        let log_type2 = test.log_type2(self.critical, self.nu, self.effect_scale * ell)?;
        Ok(ConditionalPower { ell_n: ell, power: -log_type2.exp_m1(), log_type2 })
    }

    /// `LossP = (1 - β(μ|0)) / (1 - β(μ|X))`.
    pub fn loss_of_power(&self, cp: &ConditionalPower) -> f64 {
        (self.log_type2_balanced - cp.log_type2).exp().min(1.0)
    }
}

/// `β_{T,n}(μ|X)` and `ℓ_n` for the given design.
pub fn conditional_power(
    model: &ResponseModel,
    test: &TestSpec,
    state: &ImbalanceState,
    s_xx: &DMatrix<f64>,
) -> Result<ConditionalPower> {
    let cal = PowerCalibration::new(model, test, state.n(), state.d_x().len())?;
    cal.conditional_power(test, ell_n(state, s_xx)?)
}

/// `LossP_{T,n}(μ|X)`.
pub fn loss_of_power_ratio(
    model: &ResponseModel,
    test: &TestSpec,
    state: &ImbalanceState,
    s_xx: &DMatrix<f64>,
) -> Result<f64> {
    let cal = PowerCalibration::new(model, test, state.n(), state.d_x().len())?;
    let cp = cal.conditional_power(test, ell_n(state, s_xx)?)?;
    Ok(cal.loss_of_power(&cp))
}

/// Large-sample mean of `LossP` implied by which imbalances the procedure
/// keeps at `o(√n)`.
///
/// With `c = μ²/(4σ_ε²)`, each term of `V_n` that is asymptotically
/// `N(0, v)` contributes `(1 + c·v)^{-1/2}`: `v = 1` for an unbalanced overall
/// or covariate term, `v = σ_δ²/σ_x²` for a covariate whose margins are
/// balanced, and `v = 1/(1 - 4g'(0))` for the overall term under Wei's urn.
/// Returns `None` for rules without a known limit (scaled rules with `γ ≥ 1`).
pub fn predicted_loss_of_power(proc: &Procedure, covariates: &CovariateSet, model: &ResponseModel) -> Option<f64> {
    let c = model.effect().powi(2) / (4.0 * model.sigma_eps.powi(2));
    let term = |v: f64| (1.0 + c * v).powf(-0.5);
    if proc.is_complete() {
        return Some(term(1.0).powi(covariates.len() as i32 + 1));
    }
    if let Some(slope) = proc.wei_slope() {
        return Some(term(1.0 / (1.0 - 4.0 * slope)) * term(1.0).powi(covariates.len() as i32));
    }
    if proc.gamma().is_some_and(|g| g >= 1.0) {
        return None;
    }
    let w = proc.weights();
    let mut out = 1.0;
    for (k, (spec, moments)) in covariates.specs.iter().zip(&covariates.moments).enumerate() {
        let balanced = spec.is_randomized() && (w.margins[k] > 0.0 || w.stratum > 0.0);
        out *= term(if balanced { moments.cost_ratio() } else { 1.0 });
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariate::{PatientProfile, StratumIndex, StratumLayout};
    use crate::imbalance::Arm;

    fn state_with(d: i64, n: u64) -> ImbalanceState {
        let mut s = ImbalanceState::new(StratumLayout::new(vec![]));
        let empty = PatientProfile { raw: vec![], levels: StratumIndex(vec![]) };
        let ones = (n as i64 + d) / 2;
        for k in 0..n as i64 {
            s.apply_assignment(&empty, if k < ones { Arm::One } else { Arm::Two });
        }
        s
    }

    fn model(mu: f64) -> ResponseModel {
        ResponseModel { mu1: mu, mu2: 0.0, beta: vec![], sigma_eps: 1.0 }
    }

    #[test]
    fn balanced_state_has_full_ell_and_unit_loss() {
        let s = state_with(0, 100);
        let sxx = DMatrix::zeros(0, 0);
        let test = TestSpec::default();
        let cp = conditional_power(&model(1.0), &test, &s, &sxx).unwrap();
        assert_eq!(cp.ell_n, 10.0);
        assert_eq!(loss_of_power_ratio(&model(1.0), &test, &s, &sxx).unwrap(), 1.0);
    }

    #[test]
    fn null_effect_gives_size() {
        let s = state_with(6, 50);
        let sxx = DMatrix::zeros(0, 0);
        for test in [
            TestSpec::default(),
            TestSpec { sides: Sides::Two, family: TestFamily::T, alpha: 0.05 },
            TestSpec { sides: Sides::One, family: TestFamily::Z, alpha: 0.01 },
        ] {
            let cp = conditional_power(&model(0.0), &test, &s, &sxx).unwrap();
            assert!((cp.power - test.alpha).abs() < 1e-9, "{test:?}: {}", cp.power);
        }
    }

    #[test]
    fn imbalance_reduces_power() {
        let s = state_with(10, 100);
        let sxx = DMatrix::zeros(0, 0);
        let loss = loss_of_power_ratio(&model(0.5), &TestSpec::default(), &s, &sxx).unwrap();
        assert!(loss < 1.0 && loss > 0.0);
    }

    #[test]
    fn predicted_limits() {
        use crate::covariate::CovariateSpec;
        use crate::procedures::ProcedureConfig;
        let model = |i: usize| ResponseModel { mu1: 1.0, mu2: 0.0, beta: vec![1.0; i], sigma_eps: 1.0 };
        let binary = || CovariateSpec::discrete(&[(-1.0, 0.5), (1.0, 0.5)], vec![0.0]).unwrap();
        let two = CovariateSet::new(vec![binary(), binary()]).unwrap();
        let complete = Procedure::new(ProcedureConfig::Complete, 2).unwrap();
        let got = predicted_loss_of_power(&complete, &two, &model(2)).unwrap();
        assert!((got - 1.25f64.powf(-1.5)).abs() < 1e-15);
        let efron = Procedure::new(ProcedureConfig::Efron { p: 2.0 / 3.0 }, 2).unwrap();
        assert!((predicted_loss_of_power(&efron, &two, &model(2)).unwrap() - 0.8).abs() < 1e-15);
        let ps = Procedure::new(ProcedureConfig::PocockSimon { p: 2.0 / 3.0, margin_weights: None }, 2).unwrap();
        assert!((predicted_loss_of_power(&ps, &two, &model(2)).unwrap() - 1.0).abs() < 1e-15);

        let uniform = CovariateSet::new(vec![CovariateSpec::uniform(-1.0, 1.0, vec![0.0]).unwrap()]).unwrap();
        let ps = Procedure::new(ProcedureConfig::PocockSimon { p: 2.0 / 3.0, margin_weights: None }, 1).unwrap();
        let got = predicted_loss_of_power(&ps, &uniform, &model(1)).unwrap();
        assert!((got - (1.0 + 0.25 * 0.25f64).powf(-0.5)).abs() < 1e-12, "{got}");
    }
}
