//! Covariate distributions, their discretization into randomization levels,
//! and the analytic moments consumed by the power results.
//!
//! Every distribution is recentred to mean zero when a [`CovariateSpec`] is
//! built. The shift is kept so reports can show the original location.
//! Cutpoints are given on the original scale and move with the shift.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;

const NORMAL_SPAN_SD: f64 = 40.0;
const MOMENT_ABS_TOL: f64 = 1e-13;

/// One atom of a discrete covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Distribution family of a covariate (already centred once inside a spec).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Discrete { levels: Vec<Atom> },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Distribution {
    fn mean(&self) -> f64 {
        match self {
            Distribution::Discrete { levels } => levels.iter().map(|a| a.value * a.prob).sum(),
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Normal { mean, .. } => *mean,
        }
    }

    fn shifted(&self, by: f64) -> Distribution {
        match self {
            Distribution::Discrete { levels } => Distribution::Discrete {
                levels: levels
                    .iter()
                    .map(|a| Atom { value: a.value - by, prob: a.prob })
                    .collect(),
            },
            Distribution::Uniform { lo, hi } => Distribution::Uniform { lo: lo - by, hi: hi - by },
            Distribution::Normal { mean, sd } => Distribution::Normal { mean: mean - by, sd: *sd },
        }
    }
}

/// A covariate `X_k` together with its discretizer `d_k`.
///
/// An empty cutpoint list means the covariate is not used by the
/// randomization (a single level).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    dist: Distribution,
    cutpoints: Vec<f64>,
    shift: f64,
    cumulative: Vec<f64>,
}

impl CovariateSpec {
    pub fn new(dist: Distribution, cutpoints: Vec<f64>) -> Result<Self> {
        match &dist {
            Distribution::Discrete { levels } => {
                if levels.is_empty() {
                    return Err(Error::InvalidCovariate("discrete covariate needs at least one atom".into()));
                }
                if let Some(a) = levels.iter().find(|a| !(a.prob > 0.0) || !a.value.is_finite()) {
                    return Err(Error::InvalidCovariate(format!(
                        "atom {} has probability {}; all probabilities must be positive",
                        a.value, a.prob
                    )));
                }
                let total: f64 = levels.iter().map(|a| a.prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidCovariate(format!(
                        "discrete probabilities sum to {total}, expected 1"
                    )));
                }
            }
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                    return Err(Error::InvalidCovariate(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
                }
            }
            Distribution::Normal { mean, sd } => {
                if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                    return Err(Error::InvalidCovariate(format!("normal needs sd > 0, got {sd}")));
                }
            }
        }
        if cutpoints.iter().any(|c| !c.is_finite()) || cutpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidCovariate(format!(
                "cutpoints must be finite and strictly increasing: {cutpoints:?}"
            )));
        }
        let shift = dist.mean();
        let dist = dist.shifted(shift);
        let cutpoints: Vec<f64> = cutpoints.iter().map(|c| c - shift).collect();
        let cumulative = match &dist {
            Distribution::Discrete { levels } => levels
                .iter()
                .scan(0.0, |acc, a| {
                    *acc += a.prob;
                    Some(*acc)
                })
                .collect(),
            _ => Vec::new(),
        };
        let spec = CovariateSpec { dist, cutpoints, shift, cumulative };
        if spec.variance() <= 0.0 {
            return Err(Error::InvalidCovariate("covariate variance must be positive".into()));
        }
        Ok(spec)
    }

    pub fn discrete(levels: &[(f64, f64)], cutpoints: Vec<f64>) -> Result<Self> {
        let levels = levels.iter().map(|&(value, prob)| Atom { value, prob }).collect();
        Self::new(Distribution::Discrete { levels }, cutpoints)
    }

    pub fn uniform(lo: f64, hi: f64, cutpoints: Vec<f64>) -> Result<Self> {
        Self::new(Distribution::Uniform { lo, hi }, cutpoints)
    }

    pub fn normal(mean: f64, sd: f64, cutpoints: Vec<f64>) -> Result<Self> {
        Self::new(Distribution::Normal { mean, sd }, cutpoints)
    }

    /// The centred distribution.
    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    /// Centred cutpoints.
    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    /// Location removed at construction.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn num_levels(&self) -> usize {
        self.cutpoints.len() + 1
    }

    pub fn is_randomized(&self) -> bool {
        !self.cutpoints.is_empty()
    }

    /// Zero-based level of a centred value. Ties on a cutpoint go up.
    pub fn level_of(&self, x: f64) -> usize {
        self.cutpoints.partition_point(|&c| c <= x)
    }

    pub fn variance(&self) -> f64 {
        match &self.dist {
            Distribution::Discrete { levels } => levels.iter().map(|a| a.value * a.value * a.prob).sum(),
            Distribution::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Distribution::Normal { sd, .. } => sd * sd,
        }
    }

    /// Inverse-transform draw for a uniform `u` in `[0, 1)`. Discrete atoms
    /// are taken in declaration order.
    pub fn quantile_draw(&self, u: f64) -> f64 {
        match &self.dist {
            Distribution::Discrete { levels } => {
                let idx = self.cumulative.partition_point(|&c| c <= u).min(levels.len() - 1);
                levels[idx].value
            }
            Distribution::Uniform { lo, hi } => lo + u * (hi - lo),
            Distribution::Normal { sd, .. } => {
                let z = crate::quadrature::bisect(
                    |z| crate::special::norm_cdf(z) - u,
                    -NORMAL_SPAN_SD,
                    NORMAL_SPAN_SD,
                    1e-12,
                );
                sd * z
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.dist {
            Distribution::Normal { sd, .. } => {
                let z: f64 = rng.sample(StandardNormal);
                sd * z
            }
            _ => self.quantile_draw(rng.random::<f64>()),
        }
    }
}

/// Analytic moments of one covariate under its discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMoments {
    pub sigma_x_sq: f64,
    /// `E[Var(X | d(X))]`, the part of the variance the randomization cannot balance.
    pub sigma_delta_sq: f64,
    pub level_probs: Vec<f64>,
    /// `E[X | level]` per level.
    pub conditional_means: Vec<f64>,
}

impl CovariateMoments {
    /// `Var(E[X | level])`.
    pub fn between_level_variance(&self) -> f64 {
        self.level_probs
            .iter()
            .zip(&self.conditional_means)
            .map(|(p, m)| p * m * m)
            .sum()
    }

    /// `σ_δ² / σ_x²`, the share of the variance left unbalanced.
    pub fn cost_ratio(&self) -> f64 {
        self.sigma_delta_sq / self.sigma_x_sq
    }
}

/// Closed form for discrete covariates, adaptive quadrature otherwise.
pub fn covariate_moments(spec: &CovariateSpec) -> Result<CovariateMoments> {
    let m = spec.num_levels();
    let sigma_x_sq = spec.variance();
    let mut level_probs = vec![0.0; m];
    let mut conditional_means = vec![0.0; m];
    let mut sigma_delta_sq = 0.0;

    match spec.distribution() {
        Distribution::Discrete { levels } => {
            let mut sums = vec![0.0; m];
            for a in levels {
                let l = spec.level_of(a.value);
                level_probs[l] += a.prob;
                sums[l] += a.prob * a.value;
            }
            for l in 0..m {
                if level_probs[l] > 0.0 {
                    conditional_means[l] = sums[l] / level_probs[l];
                }
            }
            for a in levels {
                let l = spec.level_of(a.value);
                sigma_delta_sq += a.prob * (a.value - conditional_means[l]).powi(2);
            }
        }
        dist => {
            let (support_lo, support_hi, pdf): (f64, f64, Box<dyn Fn(f64) -> f64>) = match *dist {
                Distribution::Uniform { lo, hi } => (lo, hi, Box::new(move |_| 1.0 / (hi - lo))),
                Distribution::Normal { mean, sd } => (
                    mean - NORMAL_SPAN_SD * sd,
                    mean + NORMAL_SPAN_SD * sd,
                    Box::new(move |x| crate::special::norm_pdf((x - mean) / sd) / sd),
                ),
                Distribution::Discrete { .. } => unreachable!(),
            };
            let mut edges = vec![support_lo];
            edges.extend(spec.cutpoints().iter().map(|c| c.clamp(support_lo, support_hi)));
            edges.push(support_hi);
            for l in 0..m {
                let (a, b) = (edges[l], edges[l + 1]);
                if b <= a {
                    continue;
                }
                let p = integrate(&pdf, a, b, MOMENT_ABS_TOL, 1e-13)?.value;
                level_probs[l] = p;
                if p > 0.0 {
                    let first = integrate(|x| x * pdf(x), a, b, MOMENT_ABS_TOL, 1e-13)?.value;
                    let mean = first / p;
                    conditional_means[l] = mean;
                    sigma_delta_sq +=
                        integrate(|x| (x - mean).powi(2) * pdf(x), a, b, MOMENT_ABS_TOL, 1e-13)?.value;
                }
            }
        }
    }

    Ok(CovariateMoments { sigma_x_sq, sigma_delta_sq, level_probs, conditional_means })
}

/// Joint level index `(t_1, ..., t_I)`, zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StratumIndex(pub Vec<usize>);

/// Dense indexing of strata and margins for a fixed list of level counts.
///
/// Strata are linearized lexicographically with the last covariate varying
/// fastest. Margins `(i; t_i)` are packed covariate by covariate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumLayout {
    levels: Vec<usize>,
    strides: Vec<usize>,
    margin_offsets: Vec<usize>,
    num_strata: usize,
}

impl StratumLayout {
    pub fn new(levels: Vec<usize>) -> Self {
        let mut strides = vec![1; levels.len()];
        for i in (0..levels.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * levels[i + 1];
        }
        let num_strata = levels.iter().product();
        let mut margin_offsets = Vec::with_capacity(levels.len() + 1);
        let mut acc = 0;
        for &m in &levels {
            margin_offsets.push(acc);
            acc += m;
        }
        margin_offsets.push(acc);
        StratumLayout { levels, strides, margin_offsets, num_strata }
    }

    pub fn num_covariates(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn num_strata(&self) -> usize {
        self.num_strata
    }

    pub fn num_margins(&self) -> usize {
        *self.margin_offsets.last().unwrap_or(&0)
    }

    /// Packed index of margin `(i; level)`.
    pub fn margin_index(&self, covariate: usize, level: usize) -> usize {
        self.margin_offsets[covariate] + level
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(t, s)| t * s).sum()
    }

    pub fn decode(&self, mut linear: usize) -> StratumIndex {
        let mut out = vec![0; self.levels.len()];
        for (i, s) in self.strides.iter().enumerate() {
            out[i] = linear / s;
            linear %= s;
        }
        StratumIndex(out)
    }
}

/// One patient's covariates: raw (centred) values and their levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub raw: Vec<f64>,
    pub levels: StratumIndex,
}

impl PatientProfile {
    pub fn from_raw(specs: &[CovariateSpec], raw: Vec<f64>) -> Self {
        let levels = StratumIndex(specs.iter().zip(&raw).map(|(s, &x)| s.level_of(x)).collect());
        PatientProfile { raw, levels }
    }
}

/// Draws one patient. Covariates are independent.
pub fn sample_profile<R: Rng + ?Sized>(specs: &[CovariateSpec], rng: &mut R) -> PatientProfile {
    let raw = specs.iter().map(|s| s.sample(rng)).collect();
    PatientProfile::from_raw(specs, raw)
}

/// Re-samples into an existing profile without allocating.
pub fn sample_profile_into<R: Rng + ?Sized>(specs: &[CovariateSpec], rng: &mut R, out: &mut PatientProfile) {
    out.raw.resize(specs.len(), 0.0);
    out.levels.0.resize(specs.len(), 0);
    for (k, s) in specs.iter().enumerate() {
        let x = s.sample(rng);
        out.raw[k] = x;
        out.levels.0[k] = s.level_of(x);
    }
}

/// Stratum probabilities `p(t)` in layout order (product measure).
pub fn stratum_probabilities(specs: &[CovariateSpec]) -> Result<Vec<f64>> {
    let moments = specs.iter().map(covariate_moments).collect::<Result<Vec<_>>>()?;
    stratum_probabilities_from(specs, &moments)
}

pub(crate) fn stratum_probabilities_from(
    specs: &[CovariateSpec],
    moments: &[CovariateMoments],
) -> Result<Vec<f64>> {
    for (k, m) in moments.iter().enumerate() {
        if let Some(l) = m.level_probs.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::InvalidCovariate(format!(
                "covariate {} level {} has zero probability; every stratum must be reachable",
                k + 1,
                l + 1
            )));
        }
    }
    let layout = StratumLayout::new(specs.iter().map(|s| s.num_levels()).collect());
    Ok((0..layout.num_strata())
        .map(|lin| {
            let idx = layout.decode(lin);
            idx.0.iter().enumerate().map(|(k, &t)| moments[k].level_probs[t]).product()
        })
        .collect())
}

/// The full covariate set of an experiment with its derived quantities.
#[derive(Debug, Clone)]
pub struct CovariateSet {
    pub specs: Vec<CovariateSpec>,
    pub moments: Vec<CovariateMoments>,
    pub layout: StratumLayout,
    pub stratum_probs: Vec<f64>,
}

/// Upper bound on the number of strata accepted by [`CovariateSet::new`].
pub const MAX_STRATA: usize = 1_000_000;

impl CovariateSet {
    pub fn new(specs: Vec<CovariateSpec>) -> Result<Self> {
        let levels: Vec<usize> = specs.iter().map(|s| s.num_levels()).collect();
        let strata: f64 = levels.iter().map(|&m| m as f64).product();
        if strata > MAX_STRATA as f64 {
            return Err(Error::Config(format!("{strata} strata exceed the limit of {MAX_STRATA}")));
        }
        let moments = specs.iter().map(covariate_moments).collect::<Result<Vec<_>>>()?;
        let stratum_probs = stratum_probabilities_from(&specs, &moments)?;
        Ok(CovariateSet { layout: StratumLayout::new(levels), specs, moments, stratum_probs })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn sigmas_x_sq(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.sigma_x_sq).collect()
    }
}
