//! Running imbalance bookkeeping.
//!
//! All count imbalances are integers. The squared sums behind `M_n` are kept
//! per level (overall, per covariate margin, strata) and updated with
//! `(d ± 1)² - d² = ±2d + 1`, so `M_n` is available in `O(I)` without drift.

use serde::{Deserialize, Serialize};

use crate::covariate::{PatientProfile, StratumLayout};
use crate::error::{Error, Result};

/// Values of `Λ` closer to zero than this are treated as exact ties.
pub const LAMBDA_TIE_TOL: f64 = 1e-12;

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    /// `2T - 1`: +1 for arm 1, -1 for arm 2.
    pub fn sign(self) -> i64 {
        match self {
            Arm::One => 1,
            Arm::Two => -1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

/// Weights on overall, marginal and within-stratum imbalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub overall: f64,
    #[serde(default)]
    pub margins: Vec<f64>,
    #[serde(default)]
    pub stratum: f64,
}

impl WeightConfig {
    pub fn new(overall: f64, margins: Vec<f64>, stratum: f64) -> Result<Self> {
        let w = WeightConfig { overall, margins, stratum };
        w.validate(w.margins.len())?;
        Ok(w)
    }

    pub fn overall_only(num_covariates: usize) -> Self {
        WeightConfig { overall: 1.0, margins: vec![0.0; num_covariates], stratum: 0.0 }
    }

    pub fn stratified(num_covariates: usize) -> Self {
        WeightConfig { overall: 0.0, margins: vec![0.0; num_covariates], stratum: 1.0 }
    }

    pub fn marginal(margins: Vec<f64>) -> Self {
        WeightConfig { overall: 0.0, margins, stratum: 0.0 }
    }

    pub fn validate(&self, num_covariates: usize) -> Result<()> {
        if self.margins.len() != num_covariates {
            return Err(Error::Config(format!(
                "expected {num_covariates} margin weights, got {}",
                self.margins.len()
            )));
        }
        let all = std::iter::once(self.overall).chain(self.margins.iter().copied()).chain([self.stratum]);
        let mut total = 0.0;
        for w in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("weights must be finite and nonnegative, got {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must sum to 1, got {total}")));
        }
        Ok(())
    }
}

/// Imbalance state after `n` assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceState {
    layout: StratumLayout,
    n: u64,
    n_arm1: u64,
    d_overall: i64,
    d_margin: Vec<i64>,
    d_stratum: Vec<i64>,
    d_x: Vec<f64>,
    sum_x: Vec<f64>,
    sq_margin: Vec<i64>,
    sq_stratum: i64,
}

impl ImbalanceState {
    pub fn new(layout: StratumLayout) -> Self {
        let i = layout.num_covariates();
        ImbalanceState {
            n: 0,
            n_arm1: 0,
            d_overall: 0,
            d_margin: vec![0; layout.num_margins()],
            d_stratum: vec![0; layout.num_strata()],
            d_x: vec![0.0; i],
            sum_x: vec![0.0; i],
            sq_margin: vec![0; i],
            sq_stratum: 0,
            layout,
        }
    }

    pub fn layout(&self) -> &StratumLayout {
        &self.layout
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn n_arm1(&self) -> u64 {
        self.n_arm1
    }

    pub fn n_arm2(&self) -> u64 {
        self.n - self.n_arm1
    }

    /// `D_n`.
    pub fn d_overall(&self) -> i64 {
        self.d_overall
    }

    /// `D_n(i; t_i)` with zero-based covariate and level.
    pub fn d_margin(&self, covariate: usize, level: usize) -> i64 {
        self.d_margin[self.layout.margin_index(covariate, level)]
    }

    /// `D_n(t)` by linear stratum index.
    pub fn d_stratum(&self, linear: usize) -> i64 {
        self.d_stratum[linear]
    }

    pub fn d_strata(&self) -> &[i64] {
        &self.d_stratum
    }

    /// `D_n^{x_k} = Σ (2T_i - 1) X_{i,k}`.
    pub fn d_x(&self) -> &[f64] {
        &self.d_x
    }

    /// `Σ X_{i,k}`.
    pub fn sum_x(&self) -> &[f64] {
        &self.sum_x
    }

    pub fn apply_assignment(&mut self, profile: &PatientProfile, arm: Arm) {
        let s = arm.sign();
        self.n += 1;
        if arm == Arm::One {
            self.n_arm1 += 1;
        }
        self.d_overall += s;
        for (k, &t) in profile.levels.0.iter().enumerate() {
            let m = self.layout.margin_index(k, t);
            self.sq_margin[k] += 2 * s * self.d_margin[m] + 1;
            self.d_margin[m] += s;
        }
        let lin = self.layout.linear(&profile.levels.0);
        self.sq_stratum += 2 * s * self.d_stratum[lin] + 1;
        self.d_stratum[lin] += s;
        let sf = s as f64;
        for (k, &x) in profile.raw.iter().enumerate() {
            self.d_x[k] += sf * x;
            self.sum_x[k] += x;
        }
    }

    /// Undoes the most recent [`apply_assignment`](Self::apply_assignment) of the
    /// same profile and arm. Used by the exact enumerator.
    pub fn revert_assignment(&mut self, profile: &PatientProfile, arm: Arm) {
        let s = -arm.sign();
        self.n -= 1;
        if arm == Arm::One {
            self.n_arm1 -= 1;
        }
        self.d_overall += s;
        for (k, &t) in profile.levels.0.iter().enumerate() {
            let m = self.layout.margin_index(k, t);
            self.sq_margin[k] += 2 * s * self.d_margin[m] + 1;
            self.d_margin[m] += s;
        }
        let lin = self.layout.linear(&profile.levels.0);
        self.sq_stratum += 2 * s * self.d_stratum[lin] + 1;
        self.d_stratum[lin] += s;
        let sf = s as f64;
        for (k, &x) in profile.raw.iter().enumerate() {
            self.d_x[k] += sf * x;
            self.sum_x[k] -= x;
        }
    }

    /// `Λ(t) = w_o D + Σ_i w_{m,i} D(i; t_i) + w_s D(t)` for the given stratum.
    pub fn lambda_at(&self, weights: &WeightConfig, levels: &[usize]) -> f64 {
        let mut lambda = weights.overall * self.d_overall as f64;
        for (k, &t) in levels.iter().enumerate() {
            lambda += weights.margins[k] * self.d_margin(k, t) as f64;
        }
        lambda + weights.stratum * self.d_stratum[self.layout.linear(levels)] as f64
    }

    /// `M_n`, the weighted sum of squared imbalances.
    pub fn imbalance_measure(&self, weights: &WeightConfig) -> f64 {
        let margins: f64 = weights.margins.iter().zip(&self.sq_margin).map(|(w, &q)| w * q as f64).sum();
        weights.overall * (self.d_overall * self.d_overall) as f64 + margins + weights.stratum * self.sq_stratum as f64
    }

    /// `M_n` recomputed from the raw counters.
    pub fn imbalance_measure_from_scratch(&self, weights: &WeightConfig) -> f64 {
        let strata: i64 = self.d_stratum.iter().map(|d| d * d).sum();
        let mut margins = 0.0;
        for (k, &m) in self.layout.levels().iter().enumerate() {
            let sq: i64 = (0..m).map(|t| self.d_margin(k, t).pow(2)).sum();
            margins += weights.margins[k] * sq as f64;
        }
        weights.overall * (self.d_overall * self.d_overall) as f64 + margins + weights.stratum * strata as f64
    }

    /// `V_n = (D_n/√n)² + Σ_k (D_n^{x_k}/√n)² / σ²_{x,k}` with population variances.
    pub fn v_statistic(&self, sigmas_x_sq: &[f64]) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::Numerical("V_n is undefined before the first patient".into()));
        }
        if sigmas_x_sq.len() != self.d_x.len() {
            return Err(Error::Config(format!(
                "expected {} covariate variances, got {}",
                self.d_x.len(),
                sigmas_x_sq.len()
            )));
        }
        if let Some(s) = sigmas_x_sq.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Numerical(format!("covariate variance must be positive, got {s}")));
        }
        let n = self.n as f64;
        let d = self.d_overall as f64;
        let cov: f64 = self.d_x.iter().zip(sigmas_x_sq).map(|(dx, s)| dx * dx / s).sum();
        Ok((d * d + cov) / n)
    }

    /// `Imb^(1) - Imb^(2)` computed from the potential differences directly.
    /// Equals `4 Λ(t)`.
    pub fn delta_imbalance_identity_check(&self, weights: &WeightConfig, levels: &[usize]) -> f64 {
        let imbalance_if = |delta: i64| {
            let sq = |d: i64| ((d + delta) * (d + delta)) as f64;
            let mut total = weights.overall * sq(self.d_overall);
            for (k, &t) in levels.iter().enumerate() {
                total += weights.margins[k] * sq(self.d_margin(k, t));
            }
            total + weights.stratum * sq(self.d_stratum[self.layout.linear(levels)])
        };
        imbalance_if(1) - imbalance_if(-1)
    }

    pub fn max_abs_margin(&self) -> i64 {
        self.d_margin.iter().map(|d| d.abs()).max().unwrap_or(0)
    }

    pub fn max_abs_stratum(&self) -> i64 {
        self.d_stratum.iter().map(|d| d.abs()).max().unwrap_or(0)
    }

    pub fn snapshot(&self, weights: &WeightConfig, sigmas_x_sq: &[f64]) -> Result<TrajectorySnapshot> {
        Ok(TrajectorySnapshot {
            n: self.n,
            d_overall: self.d_overall,
            m_n: self.imbalance_measure(weights),
            v_n: self.v_statistic(sigmas_x_sq)?,
            max_abs_margin: self.max_abs_margin(),
            max_abs_stratum: self.max_abs_stratum(),
        })
    }
}

/// One row of a trajectory: `n, D_n, M_n, V_n, max|D(i;t_i)|, max|D(t)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySnapshot {
    pub n: u64,
    pub d_overall: i64,
    pub m_n: f64,
    pub v_n: f64,
    pub max_abs_margin: i64,
    pub max_abs_stratum: i64,
}

impl TrajectorySnapshot {
    pub const CSV_HEADER: &'static str = "n,d_n,m_n,v_n,max_abs_margin,max_abs_stratum";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{},{}",
            self.n, self.d_overall, self.m_n, self.v_n, self.max_abs_margin, self.max_abs_stratum
        )
    }

    /// Inverse of [`TrajectorySnapshot::csv_row`].
    pub fn from_csv_row(row: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed trajectory row `{row}`"));
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(TrajectorySnapshot {
            n: f[0].parse().map_err(|_| bad())?,
            d_overall: f[1].parse().map_err(|_| bad())?,
            m_n: f[2].parse().map_err(|_| bad())?,
            v_n: f[3].parse().map_err(|_| bad())?,
            max_abs_margin: f[4].parse().map_err(|_| bad())?,
            max_abs_stratum: f[5].parse().map_err(|_| bad())?,
        })
    }
}
