//! Exact small-instance computations.
//!
//! [`enumerate_exact`] walks every (stratum, arm) path of length `n` and
//! weights it by `Π p(t_m) · p_m^{T_m} (1 - p_m)^{1 - T_m}`. Only the strata
//! matter for `D_n`, `M_n` and `SB_n`, so covariates enter through their level
//! probabilities.
//!
//! [`chain_stationary`] solves for the invariant law of the imbalance chain of
//! a time-homogeneous procedure. The state is the vector of counters that
//! enter `Λ` (overall, weighted margins, strata), truncated at `|c| ≤ K`.
//! A move that would leave the box is replaced by the opposite arm, which
//! keeps the chain's period 2; the probability of such moves under the
//! solution is reported as the escape mass.

use std::collections::{BTreeMap, HashMap, VecDeque};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationFunction;
use crate::covariate::{CovariateSet, PatientProfile, StratumIndex};
use crate::error::{Error, Result};
use crate::imbalance::{Arm, ImbalanceState, WeightConfig};
use crate::procedures::Procedure;

/// Largest number of leaf paths [`enumerate_exact`] accepts.
pub const ENUMERATION_BUDGET: f64 = 1e7;
/// Escape mass above which a warning is logged.
pub const TRUNCATION_WARN: f64 = 1e-6;
/// Escape mass above which the solution is rejected.
pub const TRUNCATION_ERROR: f64 = 1e-3;
/// Largest phase class solved by dense LU; larger ones use power iteration.
pub const DENSE_LIMIT: usize = 2000;

/// Exact law of the trial after `n` patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub n: u64,
    /// `P(D_n = d)`.
    pub d_distribution: BTreeMap<i64, f64>,
    pub mean_m_n: f64,
    pub mean_m_n_sq: f64,
    pub mean_abs_d: f64,
    pub mean_d_sq: f64,
    /// `1/2 + (1/n) Σ_m E|p_m - 1/2|`.
    pub sb_n: f64,
    /// Total probability of all leaves (1 up to rounding).
    pub total_probability: f64,
}

struct Walker<'a> {
    proc: &'a Procedure,
    weights: &'a WeightConfig,
    profiles: Vec<PatientProfile>,
    probs: &'a [f64],
    n: u64,
    abs_dev: f64,
    leaves: ExactDistribution,
}

impl Walker<'_> {
    fn walk(&mut self, state: &mut ImbalanceState, aux: &mut Option<crate::procedures::PermutedBlockState>, prob: f64) {
        if state.n() == self.n {
            let d = state.d_overall();
            let m = state.imbalance_measure(self.weights);
            let leaves = &mut self.leaves;
            *leaves.d_distribution.entry(d).or_insert(0.0) += prob;
            leaves.mean_m_n += prob * m;
            leaves.mean_m_n_sq += prob * m * m;
            leaves.mean_abs_d += prob * d.abs() as f64;
            leaves.mean_d_sq += prob * (d * d) as f64;
            leaves.total_probability += prob;
            return;
        }
        for s in 0..self.profiles.len() {
            let ps = prob * self.probs[s];
            let profile = self.profiles[s].clone();
            let p = self.proc.assignment_probability(state, aux.as_ref(), &profile);
            self.abs_dev += ps * (p - 0.5).abs();
            for (arm, pa) in [(Arm::One, p), (Arm::Two, 1.0 - p)] {
                if pa == 0.0 {
                    continue;
                }
                let saved = aux.as_ref().map(|a| a.remaining(s));
                if let Some(a) = aux.as_mut() {
                    a.record(s, arm);
                }
                state.apply_assignment(&profile, arm);
                self.walk(state, aux, ps * pa);
                state.revert_assignment(&profile, arm);
                if let (Some(a), Some((x, y))) = (aux.as_mut(), saved) {
                    a.set_remaining(s, x, y);
                }
            }
        }
    }
}

/// Exact distribution of `D_n`, moments of `M_n` and `SB_n` by enumeration.
pub fn enumerate_exact(proc: &Procedure, covariates: &CovariateSet, n: u64) -> Result<ExactDistribution> {
    let strata = covariates.layout.num_strata();
    let required = (2.0 * strata as f64).powf(n as f64);
    if required > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { required, budget: ENUMERATION_BUDGET });
    }
    if n == 0 {
        return Err(Error::Config("enumeration needs n ≥ 1".into()));
    }
    // raw values are irrelevant for the enumerated quantities; use level means
    let profiles = (0..strata)
        .map(|s| {
            let idx = covariates.layout.decode(s);
            let raw = idx.0.iter().enumerate().map(|(k, &t)| covariates.moments[k].conditional_means[t]).collect();
            PatientProfile { raw, levels: StratumIndex(idx.0) }
        })
        .collect();
    let mut walker = Walker {
        proc,
        weights: proc.weights(),
        profiles,
        probs: &covariates.stratum_probs,
        n,
        abs_dev: 0.0,
        leaves: ExactDistribution {
            n,
            d_distribution: BTreeMap::new(),
            mean_m_n: 0.0,
            mean_m_n_sq: 0.0,
            mean_abs_d: 0.0,
            mean_d_sq: 0.0,
            sb_n: 0.0,
            total_probability: 0.0,
        },
    };
    let mut state = ImbalanceState::new(covariates.layout.clone());
    let mut aux = proc.new_block_state(&covariates.layout);
    walker.walk(&mut state, &mut aux, 1.0);
    let mut out = walker.leaves;
    out.sb_n = 0.5 + walker.abs_dev / n as f64;
    Ok(out)
}

/// Invariant law of the truncated imbalance chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStationary {
    /// Counter names, e.g. `D`, `D(1;2)`, `D(t=0)`.
    pub coordinates: Vec<String>,
    pub states: Vec<Vec<i64>>,
    /// Time-averaged invariant probabilities (mean of the two phases).
    pub pi: Vec<f64>,
    /// `1/2 + Σ_t p(t) E_π |g(4Λ(t)) - 1/2|`.
    pub sb_limit: f64,
    /// `E_π M`.
    pub mean_m: f64,
    /// `Σ_x π(x) P(x, leaves the box)`.
    pub escape_mass: f64,
    pub radius: i64,
}

struct ChainModel<'a> {
    weights: Vec<f64>,
    /// Counters touched by each stratum.
    touch: Vec<Vec<usize>>,
    probs: &'a [f64],
    g: &'a AllocationFunction,
    radius: i64,
}

impl ChainModel<'_> {
    fn lambda(&self, x: &[i64], s: usize) -> f64 {
        self.touch[s].iter().map(|&c| self.weights[c] * x[c] as f64).sum()
    }

    fn prob_one(&self, x: &[i64], s: usize) -> f64 {
        self.g.eval(4.0 * self.lambda(x, s), 2)
    }

    fn moved(&self, x: &[i64], s: usize, sign: i64) -> Option<Vec<i64>> {
        let mut y = x.to_vec();
        for &c in &self.touch[s] {
            y[c] += sign;
            if y[c].abs() > self.radius {
                return None;
            }
        }
        Some(y)
    }

    /// Transitions `(next, prob)` and the escape probability.
    fn transitions(&self, x: &[i64]) -> (Vec<(Vec<i64>, f64)>, f64) {
        let mut out: Vec<(Vec<i64>, f64)> = Vec::new();
        let mut escape = 0.0;
        for s in 0..self.touch.len() {
            let p = self.prob_one(x, s);
            let up = self.moved(x, s, 1);
            let down = self.moved(x, s, -1);
            let mut push = |y: Vec<i64>, w: f64| {
                if w > 0.0 {
                    match out.iter_mut().find(|(z, _)| *z == y) {
                        Some(e) => e.1 += w,
                        None => out.push((y, w)),
                    }
                }
            };
            let (pu, pd) = (self.probs[s] * p, self.probs[s] * (1.0 - p));
            match (up, down) {
                (Some(u), Some(d)) => {
                    push(u, pu);
                    push(d, pd);
                }
                (None, Some(d)) => {
                    escape += pu;
                    push(d, pu + pd);
                }
                (Some(u), None) => {
                    escape += pd;
                    push(u, pu + pd);
                }
                (None, None) => {
                    escape += pu + pd;
                    push(x.to_vec(), pu + pd);
                }
            }
        }
        (out, escape)
    }

    fn imbalance(&self, x: &[i64]) -> f64 {
        x.iter().zip(&self.weights).map(|(&v, w)| w * (v * v) as f64).sum()
    }
}

/// Stationary solution of the imbalance chain truncated at radius `k`.
pub fn chain_stationary(proc: &Procedure, covariates: &CovariateSet, k: i64) -> Result<ChainStationary> {
    if k < 5 {
        return Err(Error::Config(format!("truncation radius must be at least 5, got {k}")));
    }
    if proc.is_complete() {
        return Ok(ChainStationary {
            coordinates: vec!["D".into()],
            states: vec![vec![0]],
            pi: vec![1.0],
            sb_limit: 0.5,
            mean_m: f64::NAN,
            escape_mass: 0.0,
            radius: k,
        });
    }
    let (w, g) = proc.homogeneous_rule().ok_or_else(|| {
        Error::Config("chain_stationary needs a time-homogeneous (gamma = 0) imbalance-driven procedure".into())
    })?;
    let layout = &covariates.layout;
    let mut coordinates = Vec::new();
    let mut weights = Vec::new();
    let mut touch = vec![Vec::new(); layout.num_strata()];
    if w.overall > 0.0 {
        coordinates.push("D".to_string());
        weights.push(w.overall);
        for t in touch.iter_mut() {
            t.push(0);
        }
    }
    for (cov, &m) in layout.levels().iter().enumerate() {
        if w.margins[cov] > 0.0 {
            for level in 0..m {
                let c = coordinates.len();
                coordinates.push(format!("D({};{})", cov + 1, level + 1));
                weights.push(w.margins[cov]);
                for (s, t) in touch.iter_mut().enumerate() {
                    if layout.decode(s).0[cov] == level {
                        t.push(c);
                    }
                }
            }
        }
    }
    if w.stratum > 0.0 {
        for (s, t) in touch.iter_mut().enumerate() {
            t.push(coordinates.len());
            coordinates.push(format!("D(t={})", s + 1));
            weights.push(w.stratum);
        }
    }
    let model = ChainModel { weights, touch, probs: &covariates.stratum_probs, g, radius: k };

    // reachable states with their transitions
    let origin = vec![0i64; coordinates.len()];
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut states: Vec<Vec<i64>> = Vec::new();
    let mut phase: Vec<u8> = Vec::new();
    let mut trans: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut escape: Vec<f64> = Vec::new();
    let mut bipartite = true;
    index.insert(origin.clone(), 0);
    states.push(origin);
    phase.push(0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let (out, esc) = model.transitions(&states[i]);
        let mut row = Vec::with_capacity(out.len());
        for (y, p) in out {
            let j = match index.get(&y) {
                Some(&j) => j,
                None => {
                    let j = states.len();
                    index.insert(y.clone(), j);
                    states.push(y);
                    phase.push(1 - phase[i]);
                    queue.push_back(j);
                    j
                }
            };
            if phase[j] == phase[i] {
                bipartite = false;
            }
            row.push((j, p));
        }
        if trans.len() <= i {
            trans.resize(i + 1, Vec::new());
            escape.resize(i + 1, 0.0);
        }
        trans[i] = row;
        escape[i] = esc;
    }

    let pi = if bipartite { solve_periodic(&trans, &phase)? } else { solve_direct(&trans)? };

    let escape_mass: f64 = pi.iter().zip(&escape).map(|(p, e)| p * e).sum();
    if escape_mass > TRUNCATION_ERROR {
        return Err(Error::Truncation { mass: escape_mass, limit: TRUNCATION_ERROR });
    }
    if escape_mass > TRUNCATION_WARN {
        warn!("truncated chain leaks {escape_mass:.3e} per step at radius {k}");
    }
    let mut sb = 0.5;
    let mut mean_m = 0.0;
    for (x, &p) in states.iter().zip(&pi) {
        let dev: f64 = (0..model.touch.len()).map(|s| model.probs[s] * (model.prob_one(x, s) - 0.5).abs()).sum();
        sb += p * dev;
        mean_m += p * model.imbalance(x);
    }
    Ok(ChainStationary { coordinates, states, pi, sb_limit: sb, mean_m, escape_mass, radius: k })
}

/// Two-step chain on the phase-0 class, then `π₁ = π₀ P` and the average.
fn solve_periodic(trans: &[Vec<(usize, f64)>], phase: &[u8]) -> Result<Vec<f64>> {
    let even: Vec<usize> = (0..trans.len()).filter(|&i| phase[i] == 0).collect();
    let mut local = vec![usize::MAX; trans.len()];
    for (a, &i) in even.iter().enumerate() {
        local[i] = a;
    }
    let mut two_step: Vec<Vec<(usize, f64)>> = Vec::with_capacity(even.len());
    for &i in &even {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for &(j, p1) in &trans[i] {
            for &(k, p2) in &trans[j] {
                *acc.entry(local[k]).or_insert(0.0) += p1 * p2;
            }
        }
        let mut row: Vec<(usize, f64)> = acc.into_iter().collect();
        row.sort_by_key(|e| e.0);
        two_step.push(row);
    }
    let pi_even = stationary(&two_step)?;
    let mut pi = vec![0.0; trans.len()];
    for (a, &i) in even.iter().enumerate() {
        pi[i] += 0.5 * pi_even[a];
        for &(j, p) in &trans[i] {
            pi[j] += 0.5 * pi_even[a] * p;
        }
    }
    Ok(pi)
}

fn solve_direct(trans: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    stationary(trans)
}

/// Stationary vector of a sparse stochastic matrix given by rows.
fn stationary(rows: &[Vec<(usize, f64)>]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n <= DENSE_LIMIT {
        // πᵀ (P - I) = 0 with the last equation replaced by Σ π = 1
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for &(j, p) in row {
                a[(j, i)] += p;
            }
            a[(i, i)] -= 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("stationary equations are singular".into()))?;
        return Ok(x.iter().map(|v| v.max(0.0)).collect());
    }
    // lazy power iteration
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..200_000 {
        next.iter_mut().zip(&pi).for_each(|(v, p)| *v = 0.5 * p);
        for (i, row) in rows.iter().enumerate() {
            let half = 0.5 * pi[i];
            for &(j, p) in row {
                next[j] += half * p;
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < 1e-15 {
            return Ok(pi);
        }
    }
    Err(Error::Numerical("power iteration did not converge; reduce the truncation radius".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::BaseG;
    use crate::covariate::CovariateSpec;
    use crate::procedures::ProcedureConfig;

    fn no_covariates() -> CovariateSet {
        CovariateSet::new(vec![]).unwrap()
    }

    fn one_binary() -> CovariateSet {
        CovariateSet::new(vec![CovariateSpec::discrete(&[(-1.0, 0.5), (1.0, 0.5)], vec![0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn efron_two_patients_by_hand() {
        let proc = Procedure::new(ProcedureConfig::Efron { p: 2.0 / 3.0 }, 0).unwrap();
        let e = enumerate_exact(&proc, &no_covariates(), 2).unwrap();
        assert!((e.sb_n - 7.0 / 12.0).abs() < 1e-15);
        assert!((e.d_distribution[&0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((e.d_distribution[&2] - 1.0 / 6.0).abs() < 1e-15);
        assert!((e.d_distribution[&-2] - 1.0 / 6.0).abs() < 1e-15);
        assert!((e.mean_d_sq - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn complete_randomization_is_a_random_walk() {
        let proc = Procedure::new(ProcedureConfig::Complete, 1).unwrap();
        for n in 1..=6 {
            let e = enumerate_exact(&proc, &one_binary(), n).unwrap();
            assert_eq!(e.sb_n, 0.5);
            assert!((e.mean_d_sq - n as f64).abs() < 1e-12);
            assert!((e.total_probability - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let proc = Procedure::new(ProcedureConfig::Complete, 1).unwrap();
        match enumerate_exact(&proc, &one_binary(), 20) {
            Err(Error::BudgetExceeded { required, .. }) => assert!(required > 1e7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn efron_limit_matches_closed_form() {
        for p in [0.6, 2.0 / 3.0, 0.8] {
            let proc = Procedure::new(ProcedureConfig::Efron { p }, 0).unwrap();
            let c = chain_stationary(&proc, &no_covariates(), 80).unwrap();
            let want = 0.5 + (p - 0.5) / (2.0 * p);
            assert!((c.sb_limit - want).abs() < 1e-10, "p={p}: {} vs {want}", c.sb_limit);
            assert!((c.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_radius_converges() {
        let proc = Procedure::new(ProcedureConfig::Efron { p: 2.0 / 3.0 }, 0).unwrap();
        let a = chain_stationary(&proc, &no_covariates(), 10).unwrap();
        let b = chain_stationary(&proc, &no_covariates(), 20).unwrap();
        let c = chain_stationary(&proc, &no_covariates(), 40).unwrap();
        // reflection error shrinks like 2^-K for p = 2/3
        assert!((b.sb_limit - c.sb_limit).abs() < 2e-3 * (a.sb_limit - c.sb_limit).abs());
        assert!(c.escape_mass < 1e-12);
    }

    #[test]
    fn complete_limit_is_one_half() {
        let proc = Procedure::new(ProcedureConfig::Complete, 0).unwrap();
        assert_eq!(chain_stationary(&proc, &no_covariates(), 5).unwrap().sb_limit, 0.5);
    }

    #[test]
    fn pocock_simon_limit_exceeds_one_half() {
        let proc = Procedure::new(ProcedureConfig::PocockSimon { p: 2.0 / 3.0, margin_weights: None }, 1).unwrap();
        let c = chain_stationary(&proc, &one_binary(), 25).unwrap();
        assert!(c.sb_limit > 0.5);
        assert!(c.escape_mass < 1e-6);
    }

    #[test]
    fn non_homogeneous_procedures_are_rejected() {
        let proc = Procedure::new(ProcedureConfig::Wei { base: BaseG::Linear }, 0).unwrap();
        assert!(chain_stationary(&proc, &no_covariates(), 10).is_err());
    }
}
