//! Response model, least squares fit and the treatment t statistic.
//!
//! The design has columns `(T, 1 - T, X_1, ..., X_I)`. Fits are computed from
//! accumulated cross-products, so a single trajectory can be fitted at every
//! prefix length without storing the design.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariate::PatientProfile;
use crate::error::{Error, Result};
use crate::imbalance::Arm;

/// Pivots of the Cholesky factor smaller than this (relative to the column
/// scale) mark the design as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// `Y = μ₁ T + μ₂ (1 - T) + βᵀX + ε`, `ε ~ N(0, σ_ε²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseModel {
    pub mu1: f64,
    pub mu2: f64,
    #[serde(default)]
    pub beta: Vec<f64>,
    pub sigma_eps: f64,
}

impl ResponseModel {
    pub fn validate(&self, num_covariates: usize) -> Result<()> {
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::Config(format!("sigma_eps must be positive, got {}", self.sigma_eps)));
        }
        if self.beta.len() != num_covariates {
            return Err(Error::Config(format!(
                "model has {} coefficients for {num_covariates} covariates",
                self.beta.len()
            )));
        }
        Ok(())
    }

    /// `μ = μ₁ - μ₂`.
    pub fn effect(&self) -> f64 {
        self.mu1 - self.mu2
    }

    /// Mean response of one patient.
    pub fn mean(&self, arm: Arm, raw: &[f64]) -> f64 {
        let base = match arm {
            Arm::One => self.mu1,
            Arm::Two => self.mu2,
        };
        base + self.beta.iter().zip(raw).map(|(b, x)| b * x).sum::<f64>()
    }

    /// One response with a fresh normal error.
    pub fn draw<R: Rng + ?Sized>(&self, arm: Arm, raw: &[f64], rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.mean(arm, raw) + self.sigma_eps * eps
    }
}

/// Design matrix and responses of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl TrialData {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.x.ncols() - 2
    }
}

/// Draws responses for given assignments and covariates.
pub fn generate_responses<R: Rng + ?Sized>(
    model: &ResponseModel,
    assignments: &[Arm],
    profiles: &[PatientProfile],
    rng: &mut R,
) -> Result<TrialData> {
    if assignments.len() != profiles.len() {
        return Err(Error::Config(format!(
            "{} assignments for {} profiles",
            assignments.len(),
            profiles.len()
        )));
    }
    let n = assignments.len();
    let p = model.beta.len() + 2;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, (&arm, prof)) in assignments.iter().zip(profiles).enumerate() {
        if prof.raw.len() != model.beta.len() {
            return Err(Error::Config("profile and model disagree on the number of covariates".into()));
        }
        x[(i, 0)] = if arm == Arm::One { 1.0 } else { 0.0 };
        x[(i, 1)] = 1.0 - x[(i, 0)];
        for (k, &v) in prof.raw.iter().enumerate() {
            x[(i, k + 2)] = v;
        }
        y[i] = model.draw(arm, &prof.raw, rng);
    }
    Ok(TrialData { x, y })
}

/// Running `XᵀX`, `XᵀY`, `YᵀY` for the `(T, 1-T, X)` design.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProducts {
    p: usize,
    n: u64,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    row: Vec<f64>,
}

impl CrossProducts {
    pub fn new(num_covariates: usize) -> Self {
        let p = num_covariates + 2;
        CrossProducts { p, n: 0, xtx: vec![0.0; p * p], xty: vec![0.0; p], yty: 0.0, row: vec![0.0; p] }
    }

    pub fn from_data(data: &TrialData) -> Self {
        let mut cp = CrossProducts::new(data.num_covariates());
        for i in 0..data.n() {
            let row: Vec<f64> = data.x.row(i).iter().copied().collect();
            cp.add_row(&row, data.y[i]);
        }
        cp
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn num_params(&self) -> usize {
        self.p
    }

    /// Adds one patient.
    pub fn add(&mut self, arm: Arm, raw: &[f64], y: f64) {
        let mut row = std::mem::take(&mut self.row);
        row[0] = if arm == Arm::One { 1.0 } else { 0.0 };
        row[1] = 1.0 - row[0];
        row[2..].copy_from_slice(raw);
        self.add_row(&row, y);
        self.row = row;
    }

    fn add_row(&mut self, row: &[f64], y: f64) {
        let p = self.p;
        // upper triangle only; mirrored on use
        for a in 0..p {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..p {
                self.xtx[a * p + b] += ra * row[b];
            }
            self.xty[a] += ra * y;
        }
        self.yty += y * y;
        self.n += 1;
    }

    pub fn xtx(&self) -> DMatrix<f64> {
        let p = self.p;
        DMatrix::from_fn(p, p, |a, b| if a <= b { self.xtx[a * p + b] } else { self.xtx[b * p + a] })
    }

    pub fn xty(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xty)
    }

    /// Pooled within-arm cross-product matrix of the covariates,
    /// `Σ X Xᵀ - N₁ X̄₁ X̄₁ᵀ - N₂ X̄₂ X̄₂ᵀ`.
    pub fn pooled_within_sxx(&self) -> Result<DMatrix<f64>> {
        let full = self.xtx();
        let (n1, n2) = (full[(0, 0)], full[(1, 1)]);
        if n1 == 0.0 || n2 == 0.0 {
            return Err(Error::DegenerateDesign("one arm is empty".into()));
        }
        let i = self.p - 2;
        Ok(DMatrix::from_fn(i, i, |a, b| {
            let (s1a, s1b) = (full[(0, a + 2)], full[(0, b + 2)]);
            let (s2a, s2b) = (full[(1, a + 2)], full[(1, b + 2)]);
            full[(a + 2, b + 2)] - s1a * s1b / n1 - s2a * s2b / n2
        }))
    }
}

/// Least squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub gamma_hat: DVector<f64>,
    pub sigma_hat_sq: f64,
    /// `L (XᵀX)⁻¹ Lᵀ` with `L = (1, -1, 0, ..., 0)`.
    pub lxl: f64,
    pub df: f64,
}

/// Fits by Cholesky factorization of the normal equations.
pub fn ols_fit_cross(cp: &CrossProducts) -> Result<OlsFit> {
    let p = cp.p;
    if cp.n <= p as u64 {
        return Err(Error::DegenerateDesign(format!("n = {} leaves no residual degrees of freedom", cp.n)));
    }
    let xtx = cp.xtx();
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("XᵀX is not positive definite".into()))?;
    let l = chol.l();
    for a in 0..p {
        let scale = xtx[(a, a)].sqrt();
        if !(l[(a, a)] > SINGULAR_TOL * scale) {
            return Err(Error::DegenerateDesign(format!("column {} is collinear with the others", a + 1)));
        }
    }
    let xty = cp.xty();
    let gamma_hat = chol.solve(&xty);
    let rss = (cp.yty - gamma_hat.dot(&xty)).max(0.0);
    let df = (cp.n as usize - p) as f64;
    let mut lvec = DVector::zeros(p);
    lvec[0] = 1.0;
    lvec[1] = -1.0;
    let lxl = lvec.dot(&chol.solve(&lvec));
    Ok(OlsFit { gamma_hat, sigma_hat_sq: rss / df, lxl, df })
}

pub fn ols_fit(data: &TrialData) -> Result<OlsFit> {
    ols_fit_cross(&CrossProducts::from_data(data))
}

/// `T = L γ̂ / √(σ̂² L (XᵀX)⁻¹ Lᵀ)`.
pub fn t_statistic(fit: &OlsFit) -> Result<f64> {
    if !(fit.sigma_hat_sq > 0.0) {
        return Err(Error::DegenerateDesign(format!("residual variance estimate is {}", fit.sigma_hat_sq)));
    }
    Ok((fit.gamma_hat[0] - fit.gamma_hat[1]) / (fit.sigma_hat_sq * fit.lxl).sqrt())
}
