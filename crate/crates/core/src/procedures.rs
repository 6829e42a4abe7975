//! Randomization procedures behind one interface returning `p_m`, the
//! probability that the next patient goes to arm 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{AllocationFunction, BaseG};
use crate::covariate::{PatientProfile, StratumLayout};
use crate::error::{Error, Result};
use crate::imbalance::{Arm, ImbalanceState, WeightConfig};

/// Default biased-coin probability.
pub const DEFAULT_P: f64 = 2.0 / 3.0;
/// Default permuted block size.
pub const DEFAULT_BLOCK_SIZE: u32 = 4;

fn default_p() -> f64 {
    DEFAULT_P
}

fn default_block_size() -> u32 {
    DEFAULT_BLOCK_SIZE
}

/// A randomization rule as declared in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcedureConfig {
    Complete,
    Efron {
        #[serde(default = "default_p")]
        p: f64,
    },
    Wei {
        #[serde(default)]
        base: BaseG,
    },
    PermutedBlock {
        #[serde(default = "default_block_size")]
        block_size: u32,
    },
    PocockSimon {
        #[serde(default = "default_p")]
        p: f64,
        /// Uniform `1/I` when omitted.
        #[serde(default)]
        margin_weights: Option<Vec<f64>>,
    },
    HuHu {
        weights: WeightConfig,
        #[serde(default = "default_p")]
        p: f64,
    },
    Family {
        weights: WeightConfig,
        allocation: AllocationFunction,
    },
}

impl ProcedureConfig {
    /// Short machine name of the rule.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ProcedureConfig::Complete => "complete",
            ProcedureConfig::Efron { .. } => "efron",
            ProcedureConfig::Wei { .. } => "wei",
            ProcedureConfig::PermutedBlock { .. } => "permuted_block",
            ProcedureConfig::PocockSimon { .. } => "pocock_simon",
            ProcedureConfig::HuHu { .. } => "hu_hu",
            ProcedureConfig::Family { .. } => "family",
        }
    }
}

/// How `p_m` is computed once a config has been resolved.
#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Complete,
    /// `g(D / (n-1))` on overall imbalance.
    Wei(BaseG),
    /// Urn per stratum.
    Block(u32),
    /// `g_n(4Λ)`.
    Lambda(AllocationFunction),
}

/// A validated procedure for a fixed number of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    config: ProcedureConfig,
    weights: WeightConfig,
    rule: Rule,
}

impl Procedure {
    pub fn new(config: ProcedureConfig, num_covariates: usize) -> Result<Self> {
        let i = num_covariates;
        let step = |p: f64| {
            let g = AllocationFunction::Step { p };
            g.validate().map(|_| g)
        };
        let (weights, rule) = match &config {
            ProcedureConfig::Complete => (WeightConfig::overall_only(i), Rule::Complete),
            ProcedureConfig::Efron { p } => (WeightConfig::overall_only(i), Rule::Lambda(step(*p)?)),
            ProcedureConfig::Wei { base } => (WeightConfig::overall_only(i), Rule::Wei(*base)),
            ProcedureConfig::PermutedBlock { block_size } => {
                if *block_size == 0 || block_size % 2 != 0 {
                    return Err(Error::Config(format!(
                        "block_size must be a positive even integer, got {block_size}"
                    )));
                }
                (WeightConfig::stratified(i), Rule::Block(*block_size))
            }
            ProcedureConfig::PocockSimon { p, margin_weights } => {
                if i == 0 {
                    return Err(Error::Config("pocock_simon needs at least one covariate".into()));
                }
                let w = match margin_weights {
                    Some(w) => WeightConfig::marginal(w.clone()),
                    None => WeightConfig::marginal(vec![1.0 / i as f64; i]),
                };
                w.validate(i)?;
                (w, Rule::Lambda(step(*p)?))
            }
            ProcedureConfig::HuHu { weights, p } => {
                weights.validate(i)?;
                (weights.clone(), Rule::Lambda(step(*p)?))
            }
            ProcedureConfig::Family { weights, allocation } => {
                weights.validate(i)?;
                allocation.validate()?;
                (weights.clone(), Rule::Lambda(allocation.clone()))
            }
        };
        Ok(Procedure { config, weights, rule })
    }

    pub fn config(&self) -> &ProcedureConfig {
        &self.config
    }

    /// Weights of the unified view; these define `M_n` for the procedure.
    pub fn weights(&self) -> &WeightConfig {
        &self.weights
    }

    /// `(weights, g)` when `p_m = g(4Λ)` does not depend on `n`.
    ///
    /// Complete randomization is reported as `None`: it is not driven by `Λ`.
    pub fn homogeneous_rule(&self) -> Option<(&WeightConfig, &AllocationFunction)> {
        match &self.rule {
            Rule::Lambda(g) if g.is_time_homogeneous() => Some((&self.weights, g)),
            _ => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.rule == Rule::Complete
    }

    /// Allocation function of `Λ`-driven procedures.
    pub fn allocation(&self) -> Option<&AllocationFunction> {
        match &self.rule {
            Rule::Lambda(g) => Some(g),
            _ => None,
        }
    }

    /// Scaling exponent of the rule: 0 for step rules, 1 for Wei's urn.
    pub fn gamma(&self) -> Option<f64> {
        match &self.rule {
            Rule::Lambda(g) => g.gamma(),
            Rule::Wei(_) => Some(1.0),
            Rule::Complete | Rule::Block(_) => None,
        }
    }

    /// `g'(0)` of Wei's urn, the only rule whose imbalance stays of order `√n`.
    pub fn wei_slope(&self) -> Option<f64> {
        match self.rule {
            Rule::Wei(base) => Some(base.slope_at_zero()),
            _ => None,
        }
    }

    pub fn needs_block_state(&self) -> bool {
        matches!(self.rule, Rule::Block(_))
    }

    /// Fresh per-trial auxiliary state.
    pub fn new_block_state(&self, layout: &StratumLayout) -> Option<PermutedBlockState> {
        match self.rule {
            Rule::Block(b) => Some(PermutedBlockState::new(b, layout.num_strata())),
            _ => None,
        }
    }

    /// `p_m` for the next patient given the state after `n - 1` patients.
    pub fn assignment_probability(
        &self,
        state: &ImbalanceState,
        aux: Option<&PermutedBlockState>,
        profile: &PatientProfile,
    ) -> f64 {
        let n = state.n() + 1;
        match &self.rule {
            Rule::Complete => 0.5,
            Rule::Wei(base) => {
                if n == 1 {
                    0.5
                } else {
                    base.eval(state.d_overall() as f64 / (n - 1) as f64)
                }
            }
            Rule::Block(_) => {
                let aux = aux.expect("permuted block needs its block state");
                aux.probability(state.layout().linear(&profile.levels.0))
            }
            Rule::Lambda(g) => g.eval(4.0 * state.lambda_at(&self.weights, &profile.levels.0), n),
        }
    }

    /// Draws the arm for the next patient, updating nothing.
    pub fn assign<R: Rng + ?Sized>(
        &self,
        state: &ImbalanceState,
        aux: Option<&PermutedBlockState>,
        profile: &PatientProfile,
        rng: &mut R,
    ) -> (Arm, f64) {
        let p = self.assignment_probability(state, aux, profile);
        (draw_arm(p, rng), p)
    }
}

/// Bernoulli draw: arm 1 with probability `p`.
pub fn draw_arm<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Arm {
    let u: f64 = rng.random();
    if u < p {
        Arm::One
    } else {
        Arm::Two
    }
}

/// Remaining slots of the current block in each stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutedBlockState {
    block_size: u32,
    left: Vec<(u32, u32)>,
}

impl PermutedBlockState {
    pub fn new(block_size: u32, num_strata: usize) -> Self {
        let half = block_size / 2;
        PermutedBlockState { block_size, left: vec![(half, half); num_strata] }
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    /// `(arm1_left, arm2_left)` in a stratum.
    pub fn remaining(&self, stratum: usize) -> (u32, u32) {
        self.left[stratum]
    }

    /// Overrides the remaining counts of a stratum. Any nonempty urn no
    /// larger than a block is accepted.
    pub fn set_remaining(&mut self, stratum: usize, arm1_left: u32, arm2_left: u32) {
        assert!(arm1_left + arm2_left > 0 && arm1_left + arm2_left <= self.block_size);
        self.left[stratum] = (arm1_left, arm2_left);
    }

    pub fn probability(&self, stratum: usize) -> f64 {
        let (a, b) = self.left[stratum];
        a as f64 / (a + b) as f64
    }

    /// Records an assignment and refills the block when it is used up.
    pub fn record(&mut self, stratum: usize, arm: Arm) {
        let slot = &mut self.left[stratum];
        match arm {
            Arm::One => slot.0 -= 1,
            Arm::Two => slot.1 -= 1,
        }
        if *slot == (0, 0) {
            let half = self.block_size / 2;
            *slot = (half, half);
        }
    }
}
