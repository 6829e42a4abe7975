//! Monte Carlo engine.
//!
//! One trajectory of `max(n_grid)` patients is drawn per (procedure,
//! replication) and summarized at every evaluation point from its prefix.
//! Replications are processed in fixed-size chunks; each chunk is reduced
//! sequentially and chunks are merged in index order, so sums are
//! bit-identical for any number of workers.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InferenceLevel};
use crate::covariate::{sample_profile_into, CovariateSet, PatientProfile, StratumIndex};
use crate::error::{Error, Result};
use crate::imbalance::ImbalanceState;
use crate::inference::power::{residual_df, PowerCalibration};
use crate::inference::{ell_n, ols_fit_cross, t_statistic, CrossProducts};
use crate::procedures::{draw_arm, Procedure};
use crate::rng::{stream_rng, DESIGN_STREAM, GUESS_STREAM, RESPONSE_STREAM};
use crate::selection_bias::{guess, GuessTally};

/// Replications per reduction chunk. Part of the determinism contract.
pub const CHUNK: u64 = 64;
/// Version of the summary layout written to JSON.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Count, sum and sum of squares of a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Stats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Stats) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Aggregates for one (procedure, n) cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub procedure: String,
    pub n: u64,
    /// True when `n` belongs to `n_grid` (inference is evaluated there).
    pub on_grid: bool,
    pub m_n: Stats,
    pub v_n: Stats,
    pub abs_d: Stats,
    pub max_abs_margin: Stats,
    pub max_abs_stratum: Stats,
    /// Per-replication `1/2 + (1/n) Σ |p_m - 1/2|`.
    pub sb_rb: Stats,
    /// Per-replication fraction of correct guesses, one entry per guesser.
    pub sb_raw: Vec<Stats>,
    /// Distribution of `D_n` over replications.
    pub d_hist: BTreeMap<i64, u64>,
    pub tested: u64,
    pub rejections: u64,
    pub degenerate: u64,
    pub loss_p: Stats,
    pub log_loss_p: Stats,
    pub cond_power: Stats,
    pub ell_n: Stats,
}

impl CellSummary {
    fn new(procedure: &str, n: u64, on_grid: bool, guessers: usize) -> Self {
        CellSummary {
            procedure: procedure.to_string(),
            n,
            on_grid,
            sb_raw: vec![Stats::default(); guessers],
            ..Default::default()
        }
    }

    pub fn merge(&mut self, other: &CellSummary) {
        self.m_n.merge(&other.m_n);
        self.v_n.merge(&other.v_n);
        self.abs_d.merge(&other.abs_d);
        self.max_abs_margin.merge(&other.max_abs_margin);
        self.max_abs_stratum.merge(&other.max_abs_stratum);
        self.sb_rb.merge(&other.sb_rb);
        for (a, b) in self.sb_raw.iter_mut().zip(&other.sb_raw) {
            a.merge(b);
        }
        for (d, c) in &other.d_hist {
            *self.d_hist.entry(*d).or_insert(0) += c;
        }
        self.tested += other.tested;
        self.rejections += other.rejections;
        self.degenerate += other.degenerate;
        self.loss_p.merge(&other.loss_p);
        self.log_loss_p.merge(&other.log_loss_p);
        self.cond_power.merge(&other.cond_power);
        self.ell_n.merge(&other.ell_n);
    }

    /// Empirical rejection rate; degenerate trials count as non-rejections.
    pub fn rejection_rate(&self) -> f64 {
        if self.tested == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.tested as f64
        }
    }

    pub fn rejection_se(&self) -> f64 {
        let p = self.rejection_rate();
        (p * (1.0 - p) / self.tested as f64).sqrt()
    }

    /// `P(D_n = d)` estimated from the histogram.
    pub fn d_probability(&self, d: i64) -> f64 {
        let total: u64 = self.d_hist.values().sum();
        *self.d_hist.get(&d).unwrap_or(&0) as f64 / total as f64
    }
}

/// Merged results of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub replications: u64,
    pub procedures: Vec<String>,
    pub guessers: Vec<String>,
    /// Procedure-major, then ascending `n`.
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    pub fn cell(&self, procedure: &str, n: u64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.procedure == procedure && c.n == n)
    }

    /// `(n, cell)` pairs of one procedure in ascending `n`.
    pub fn series(&self, procedure: &str) -> Vec<&CellSummary> {
        self.cells.iter().filter(|c| c.procedure == procedure).collect()
    }

    fn merge(&mut self, other: &ExperimentSummary) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }
}

/// Everything derived from a config that the replications share.
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub covariates: CovariateSet,
    pub procedures: Vec<Procedure>,
    pub names: Vec<String>,
    pub eval_points: Vec<u64>,
    /// Calibration per `n_grid` point, when power is computed.
    calibrations: BTreeMap<u64, PowerCalibration>,
    /// Critical value per `n_grid` point, when the test is run.
    criticals: BTreeMap<u64, f64>,
}

impl PreparedExperiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let specs = config.covariates.iter().map(|c| c.build()).collect::<Result<Vec<_>>>()?;
        let covariates = CovariateSet::new(specs)?;
        let i = covariates.len();
        let procedures = config
            .procedures
            .iter()
            .map(|p| Procedure::new(p.procedure.clone(), i))
            .collect::<Result<Vec<_>>>()?;
        let mut calibrations = BTreeMap::new();
        let mut criticals = BTreeMap::new();
        if config.inference != InferenceLevel::None {
            if let Some(n) = config.n_grid.iter().find(|&&n| n <= i as u64 + 2) {
                return Err(Error::Config(format!(
                    "n_grid point {n} leaves no residual degrees of freedom with {i} covariates; \
                     drop it or set inference = \"none\""
                )));
            }
            for &n in &config.n_grid {
                criticals.insert(n, config.test.critical_value(residual_df(n, i)?)?);
                if config.inference == InferenceLevel::Power {
                    calibrations.insert(n, PowerCalibration::new(&config.model, &config.test, n, i)?);
                }
            }
        }
        Ok(PreparedExperiment {
            names: config.procedures.iter().map(|p| p.name()).collect(),
            eval_points: config.eval_points(),
            config: config.clone(),
            covariates,
            procedures,
            calibrations,
            criticals,
        })
    }

    fn empty_summary(&self) -> ExperimentSummary {
        let mut cells = Vec::new();
        for name in &self.names {
            for &n in &self.eval_points {
                let on_grid = self.config.n_grid.binary_search(&n).is_ok();
                cells.push(CellSummary::new(name, n, on_grid, self.config.guessers.len()));
            }
        }
        ExperimentSummary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            replications: 0,
            procedures: self.names.clone(),
            guessers: self.config.guessers.iter().map(|g| g.name()).collect(),
            cells,
        }
    }
}

/// Per-point record of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub n: u64,
    pub d_n: i64,
    pub m_n: f64,
    pub v_n: f64,
    pub max_abs_margin: i64,
    pub max_abs_stratum: i64,
    pub sb_rb: f64,
    pub sb_raw: Vec<f64>,
    pub test: Option<TestRecord>,
}

/// Inference outcome at an `n_grid` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestRecord {
    Degenerate,
    Done { rejected: bool, power: Option<PowerRecord> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRecord {
    pub ell_n: f64,
    pub cond_power: f64,
    pub loss_p: f64,
    pub log_loss_p: f64,
}

/// All outputs of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub points: Vec<PointRecord>,
}

/// Runs one replication of one procedure. Deterministic in
/// `(master seed, procedure index, replication)`.
pub fn run_trial(exp: &PreparedExperiment, proc_idx: usize, rep: u64) -> Result<TrialOutput> {
    let cfg = &exp.config;
    let proc = &exp.procedures[proc_idx];
    let cov = &exp.covariates;
    let coords = [proc_idx as u64, rep];
    let mut design = stream_rng(cfg.seed, &coords, DESIGN_STREAM);
    let mut responses = stream_rng(cfg.seed, &coords, RESPONSE_STREAM);
    let mut coins = stream_rng(cfg.seed, &coords, GUESS_STREAM);

    let i = cov.len();
    let sigmas = cov.sigmas_x_sq();
    let mut state = ImbalanceState::new(cov.layout.clone());
    let mut aux = proc.new_block_state(&cov.layout);
    let inference = cfg.inference != InferenceLevel::None;
    let mut cross = CrossProducts::new(i);
    let mut profile = PatientProfile { raw: vec![0.0; i], levels: StratumIndex(vec![0; i]) };
    let mut tallies = vec![GuessTally::default(); cfg.guessers.len()];
    let mut sum_abs = 0.0;

    let max_n = *exp.eval_points.last().expect("nonempty evaluation points");
    let mut points = Vec::with_capacity(exp.eval_points.len());
    let mut next = exp.eval_points.iter().peekable();
    for m in 1..=max_n {
        sample_profile_into(&cov.specs, &mut design, &mut profile);
        let p = proc.assignment_probability(&state, aux.as_ref(), &profile);
        let arm = draw_arm(p, &mut design);
        // guesses see only the pre-assignment state; their coins have their own stream
        for (t, g) in tallies.iter_mut().zip(&cfg.guessers) {
            t.record(guess(g, p, &state, &profile, &mut coins), arm, p);
        }
        sum_abs += (p - 0.5).abs();
        if let Some(a) = aux.as_mut() {
            a.record(cov.layout.linear(&profile.levels.0), arm);
        }
        if inference {
            let y = cfg.model.draw(arm, &profile.raw, &mut responses);
            cross.add(arm, &profile.raw, y);
        }
        state.apply_assignment(&profile, arm);

        if next.peek() == Some(&&m) {
            next.next();
            let on_grid = cfg.n_grid.binary_search(&m).is_ok();
            let test = if inference && on_grid { Some(evaluate_test(exp, &state, &cross)?) } else { None };
            points.push(PointRecord {
                n: m,
                d_n: state.d_overall(),
                m_n: state.imbalance_measure(proc.weights()),
                v_n: state.v_statistic(&sigmas)?,
                max_abs_margin: state.max_abs_margin(),
                max_abs_stratum: state.max_abs_stratum(),
                sb_rb: 0.5 + sum_abs / m as f64,
                sb_raw: tallies.iter().map(|t| t.correct as f64 / t.n as f64).collect(),
                test,
            });
        }
    }
    Ok(TrialOutput { points })
}

fn evaluate_test(exp: &PreparedExperiment, state: &ImbalanceState, cross: &CrossProducts) -> Result<TestRecord> {
    let fit = match ols_fit_cross(cross) {
        Ok(f) => f,
        Err(Error::DegenerateDesign(_)) => return Ok(TestRecord::Degenerate),
        Err(e) => return Err(e),
    };
    let stat = match t_statistic(&fit) {
        Ok(t) => t,
        Err(Error::DegenerateDesign(_)) => return Ok(TestRecord::Degenerate),
        Err(e) => return Err(e),
    };
    let test = &exp.config.test;
    let critical = exp.criticals[&state.n()];
    let rejected = test.rejects(stat, critical);
    let power = match exp.calibrations.get(&state.n()) {
        Some(cal) => {
            let sxx = cross.pooled_within_sxx()?;
            let ell = match ell_n(state, &sxx) {
                Ok(l) => l,
                Err(Error::DegenerateDesign(_)) => return Ok(TestRecord::Degenerate),
                Err(e) => return Err(e),
            };
            let cp = cal.conditional_power(test, ell)?;
            let log_loss = (cal.log_type2_balanced - cp.log_type2).min(0.0);
            Some(PowerRecord { ell_n: ell, cond_power: cp.power, loss_p: log_loss.exp(), log_loss_p: log_loss })
        }
        None => None,
    };
    Ok(TestRecord::Done { rejected, power })
}

fn accumulate(summary: &mut ExperimentSummary, proc_idx: usize, per_proc: usize, out: &TrialOutput) {
    for (k, rec) in out.points.iter().enumerate() {
        let cell = &mut summary.cells[proc_idx * per_proc + k];
        cell.m_n.push(rec.m_n);
        cell.v_n.push(rec.v_n);
        cell.abs_d.push(rec.d_n.abs() as f64);
        cell.max_abs_margin.push(rec.max_abs_margin as f64);
        cell.max_abs_stratum.push(rec.max_abs_stratum as f64);
        cell.sb_rb.push(rec.sb_rb);
        for (s, &v) in cell.sb_raw.iter_mut().zip(&rec.sb_raw) {
            s.push(v);
        }
        *cell.d_hist.entry(rec.d_n).or_insert(0) += 1;
        match rec.test {
            None => {}
            Some(TestRecord::Degenerate) => {
                cell.tested += 1;
                cell.degenerate += 1;
            }
            Some(TestRecord::Done { rejected, power }) => {
                cell.tested += 1;
                cell.rejections += rejected as u64;
                if let Some(p) = power {
                    cell.loss_p.push(p.loss_p);
                    cell.log_loss_p.push(p.log_loss_p);
                    cell.cond_power.push(p.cond_power);
                    cell.ell_n.push(p.ell_n);
                }
            }
        }
    }
}

/// Runs every procedure for every replication and merges the results.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let exp = PreparedExperiment::new(config)?;
    run_prepared(&exp)
}

pub fn run_prepared(exp: &PreparedExperiment) -> Result<ExperimentSummary> {
    let reps = exp.config.replications;
    let per_proc = exp.eval_points.len();
    let chunks: Vec<(usize, u64)> = (0..exp.procedures.len())
        .flat_map(|p| (0..reps.div_ceil(CHUNK)).map(move |c| (p, c)))
        .collect();
    let run_chunk = |&(p, c): &(usize, u64)| -> Result<ExperimentSummary> {
        let mut part = exp.empty_summary();
        for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
            accumulate(&mut part, p, per_proc, &run_trial(exp, p, rep)?);
        }
        Ok(part)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.config.workers)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let parts: Vec<Result<ExperimentSummary>> = pool.install(|| chunks.par_iter().map(run_chunk).collect());
    let mut summary = exp.empty_summary();
    for part in parts {
        summary.merge(&part?);
    }
    summary.replications = reps;
    let degenerate: u64 = summary.cells.iter().map(|c| c.degenerate).sum();
    if degenerate > 0 {
        warn!("{degenerate} degenerate trials were counted as non-rejections");
    }
    Ok(summary)
}

/// Least-squares slope of `log value` on `log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits `log(value) = a + slope·log(n)`. Nonpositive values are dropped
/// with a warning.
pub fn rate_estimate(series: &[(f64, f64)]) -> Result<RateEstimate> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(n, v)| {
            let keep = v > 0.0 && n > 0.0 && v.is_finite();
            if !keep {
                warn!("rate estimate drops point (n = {n}, value = {v})");
            }
            keep
        })
        .map(|&(n, v)| (n.ln(), v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Numerical(format!("rate estimate needs at least 3 positive points, got {}", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (k - 2.0) / sxx).sqrt();
    Ok(RateEstimate { slope, stderr, intercept, points: pts.len() })
}
