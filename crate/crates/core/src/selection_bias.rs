//! Guessing strategies and selection-bias estimates.
//!
//! `SB_n = 1/2 + (1/n) Σ E|p_m - 1/2|` for the optimal guesser, so averaging
//! `|p_m - 1/2|` gives an unbiased estimate with lower variance than counting
//! correct guesses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariate::PatientProfile;
use crate::error::{Error, Result};
use crate::imbalance::{Arm, ImbalanceState};

/// How the experimenter predicts the next assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Guesser {
    /// Arm 1 when `p_m > 1/2`, arm 2 when `p_m < 1/2`, a fair coin otherwise.
    Optimal,
    /// The same rule applied to `-Σ_{j ∈ subset} w_j D(j; t_j)`.
    MarginSubset { covariates: Vec<usize>, weights: Vec<f64> },
    /// Fair coin.
    Random,
}

impl Guesser {
    pub fn validate(&self, num_covariates: usize) -> Result<()> {
        if let Guesser::MarginSubset { covariates, weights } = self {
            if covariates.is_empty() {
                return Err(Error::Config("margin_subset guesser needs at least one covariate".into()));
            }
            if covariates.len() != weights.len() {
                return Err(Error::Config("margin_subset needs one weight per covariate".into()));
            }
            if let Some(k) = covariates.iter().find(|&&k| k >= num_covariates) {
                return Err(Error::Config(format!(
                    "margin_subset covariate index {k} out of range for {num_covariates} covariates"
                )));
            }
            if weights.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::Config("margin_subset weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            Guesser::Optimal => "optimal".into(),
            Guesser::Random => "random".into(),
            Guesser::MarginSubset { covariates, .. } => {
                let ids: Vec<String> = covariates.iter().map(|k| (k + 1).to_string()).collect();
                format!("margin_subset_{}", ids.join("_"))
            }
        }
    }
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> Arm {
    if rng.random::<bool>() {
        Arm::One
    } else {
        Arm::Two
    }
}

/// Guess for the next patient. `p_m` is the procedure's probability for them.
pub fn guess<R: Rng + ?Sized>(
    guesser: &Guesser,
    p_m: f64,
    state: &ImbalanceState,
    profile: &PatientProfile,
    rng: &mut R,
) -> Arm {
    let score = match guesser {
        Guesser::Optimal => p_m - 0.5,
        Guesser::Random => 0.0,
        Guesser::MarginSubset { covariates, weights } => -covariates
            .iter()
            .zip(weights)
            .map(|(&k, w)| w * state.d_margin(k, profile.levels.0[k]) as f64)
            .sum::<f64>(),
    };
    if score > 0.0 {
        Arm::One
    } else if score < 0.0 {
        Arm::Two
    } else {
        coin(rng)
    }
}

/// Mergeable guess counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GuessTally {
    pub n: u64,
    pub correct: u64,
    /// `Σ |p_m - 1/2|`.
    pub sum_abs_pm_half: f64,
}

impl GuessTally {
    pub fn record(&mut self, guessed: Arm, actual: Arm, p_m: f64) {
        self.n += 1;
        if guessed == actual {
            self.correct += 1;
        }
        self.sum_abs_pm_half += (p_m - 0.5).abs();
    }

    pub fn merge(&mut self, other: &GuessTally) {
        self.n += other.n;
        self.correct += other.correct;
        self.sum_abs_pm_half += other.sum_abs_pm_half;
    }
}

/// Point estimates from a tally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbEstimate {
    pub sb: f64,
    pub smith_u: f64,
    pub sb_rao_blackwell: f64,
}

pub fn sb_estimate(tally: &GuessTally) -> Result<SbEstimate> {
    if tally.n == 0 {
        return Err(Error::Numerical("selection bias needs at least one guess".into()));
    }
    let n = tally.n as f64;
    let sb = tally.correct as f64 / n;
    Ok(SbEstimate { sb, smith_u: 2.0 * sb - 1.0, sb_rao_blackwell: 0.5 + tally.sum_abs_pm_half / n })
}
