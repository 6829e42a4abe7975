//! Report tables and the files written for a run.
//!
//! Machine outputs (CSV and JSON) print reals with 17 significant digits so
//! that they re-parse to the same `f64`; human tables use 4.
//!
//! Files: `summary.csv`, `summary.json`, `series_<metric>.csv` (columns
//! `series,x,y,y_se`), extra tables as `<name>.csv` or `<name>.json`, and
//! `manifest.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allocation::AllocationReport;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::inference::predicted_loss_of_power;
use crate::oracle::{enumerate_exact, ExactDistribution};
use crate::selection_bias::{sb_estimate, GuessTally};
use crate::simulator::{rate_estimate, CellSummary, ExperimentSummary, PreparedExperiment, Stats};

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Text(String),
    Int(i64),
    Real(f64),
    Bool(bool),
    Missing,
}

impl Value {
    fn opt(x: Option<f64>) -> Value {
        x.map_or(Value::Missing, Value::Real)
    }

    fn machine(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Int(i) => i.to_string(),
            Value::Real(x) => format_machine(*x),
            Value::Bool(b) => b.to_string(),
            Value::Missing => String::new(),
        }
    }

    fn human(&self) -> String {
        match self {
            Value::Real(x) => format_human(*x),
            Value::Missing => "-".into(),
            other => other.machine(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Value::Text(s) => s.clone().into(),
            Value::Int(i) => (*i).into(),
            Value::Real(x) => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, Into::into),
            Value::Bool(b) => (*b).into(),
            Value::Missing => serde_json::Value::Null,
        }
    }
}

/// 17 significant digits.
pub fn format_machine(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// 4 significant digits.
pub fn format_human(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        format!("{x:.3e}")
    } else {
        format!("{x:.*}", (3 - mag).max(0) as usize)
    }
}

/// A named table with stable columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| csv_escape(&v.machine())).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Array of row objects.
    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> =
                    self.columns.iter().cloned().zip(row.iter().map(Value::json)).collect();
                serde_json::Value::Object(obj)
            })
            .collect()
    }

    /// Aligned text with 4 significant digits.
    pub fn to_human(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Value::human).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| cells.iter().map(|r| r[j].len()).chain([self.columns[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, items: &[String]| {
            let parts: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &self.columns);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn stat_mean(s: &Stats) -> Value {
    if s.count == 0 {
        Value::Missing
    } else {
        Value::Real(s.mean())
    }
}

fn stat_se(s: &Stats) -> Value {
    if s.count < 2 {
        Value::Missing
    } else {
        Value::Real(s.se())
    }
}

/// One row per (procedure, n).
pub fn summary_table(summary: &ExperimentSummary) -> Table {
    let mut cols: Vec<String> = [
        "procedure",
        "n",
        "on_grid",
        "replications",
        "mean_M_n",
        "se_M_n",
        "mean_V_n",
        "se_V_n",
        "mean_abs_D",
        "se_abs_D",
        "mean_max_abs_margin",
        "mean_max_abs_stratum",
        "sb_rb",
        "se_sb_rb",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for g in &summary.guessers {
        cols.push(format!("sb_{g}"));
        cols.push(format!("se_sb_{g}"));
    }
    cols.extend(
        [
            "tested",
            "rejections",
            "degenerate",
            "rejection_rate",
            "se_rejection_rate",
            "mean_LossP",
            "se_LossP",
            "mean_log_LossP",
            "mean_conditional_power",
            "mean_ell_n",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut t = Table { name: "summary".into(), columns: cols, rows: Vec::new() };
    for c in &summary.cells {
        let mut row = vec![
            Value::Text(c.procedure.clone()),
            Value::Int(c.n as i64),
            Value::Bool(c.on_grid),
            Value::Int(c.m_n.count as i64),
            stat_mean(&c.m_n),
            stat_se(&c.m_n),
            stat_mean(&c.v_n),
            stat_se(&c.v_n),
            stat_mean(&c.abs_d),
            stat_se(&c.abs_d),
            stat_mean(&c.max_abs_margin),
            stat_mean(&c.max_abs_stratum),
            stat_mean(&c.sb_rb),
            stat_se(&c.sb_rb),
        ];
        for s in &c.sb_raw {
            row.push(stat_mean(s));
            row.push(stat_se(s));
        }
        let tested = c.tested > 0;
        row.extend([
            Value::Int(c.tested as i64),
            Value::Int(c.rejections as i64),
            Value::Int(c.degenerate as i64),
            if tested { Value::Real(c.rejection_rate()) } else { Value::Missing },
            if tested { Value::Real(c.rejection_se()) } else { Value::Missing },
            stat_mean(&c.loss_p),
            stat_se(&c.loss_p),
            stat_mean(&c.log_loss_p),
            stat_mean(&c.cond_power),
            stat_mean(&c.ell_n),
        ]);
        t.push(row);
    }
    t
}

/// Plot series, one table per metric, rows `(series, x, y, y_se)`.
pub fn series_tables(summary: &ExperimentSummary) -> Vec<Table> {
    type Pick = fn(&CellSummary) -> Option<(f64, f64)>;
    fn of(s: &Stats) -> Option<(f64, f64)> {
        (s.count > 0).then(|| (s.mean(), if s.count > 1 { s.se() } else { f64::NAN }))
    }
    let metrics: [(&str, Pick); 7] = [
        ("M_n", |c| of(&c.m_n)),
        ("V_n", |c| of(&c.v_n)),
        ("abs_D", |c| of(&c.abs_d)),
        ("sb_rb", |c| of(&c.sb_rb)),
        ("LossP", |c| of(&c.loss_p)),
        ("conditional_power", |c| of(&c.cond_power)),
        ("rejection_rate", |c| (c.tested > 0).then(|| (c.rejection_rate(), c.rejection_se()))),
    ];
    metrics
        .iter()
        .filter_map(|(name, pick)| {
            let mut t = Table::new(&format!("series_{name}"), &["series", "x", "y", "y_se"]);
            for c in &summary.cells {
                if let Some((y, se)) = pick(c) {
                    t.push(vec![Value::Text(c.procedure.clone()), Value::Int(c.n as i64), Value::Real(y), Value::Real(se)]);
                }
            }
            (!t.rows.is_empty()).then_some(t)
        })
        .collect()
}

/// Loss of power on the `n_grid`, with the large-sample prediction.
pub fn power_table(exp: &PreparedExperiment, summary: &ExperimentSummary) -> Table {
    let mut t = Table::new(
        "power",
        &[
            "procedure",
            "n",
            "mean_LossP",
            "se_LossP",
            "predicted_LossP",
            "empirical_power",
            "se_empirical_power",
            "mean_conditional_power",
            "mean_V_n",
            "degenerate",
        ],
    );
    for (proc, name) in exp.procedures.iter().zip(&exp.names) {
        let predicted = predicted_loss_of_power(proc, &exp.covariates, &exp.config.model);
        for c in summary.series(name).into_iter().filter(|c| c.on_grid) {
            let tested = c.tested > 0;
            t.push(vec![
                Value::Text(name.clone()),
                Value::Int(c.n as i64),
                stat_mean(&c.loss_p),
                stat_se(&c.loss_p),
                Value::opt(predicted),
                if tested { Value::Real(c.rejection_rate()) } else { Value::Missing },
                if tested { Value::Real(c.rejection_se()) } else { Value::Missing },
                stat_mean(&c.cond_power),
                stat_mean(&c.v_n),
                Value::Int(c.degenerate as i64),
            ]);
        }
    }
    t
}

/// Selection bias per (procedure, n) for the first guesser.
pub fn selection_bias_table(exp: &PreparedExperiment, summary: &ExperimentSummary) -> Table {
    let mut t = Table::new("selection_bias", &["procedure", "gamma", "n", "sb_rb", "sb_raw", "smith_u", "mc_se"]);
    for (proc, name) in exp.procedures.iter().zip(&exp.names) {
        for c in summary.series(name) {
            let raw = c.sb_raw.first().filter(|s| s.count > 0).map(Stats::mean);
            t.push(vec![
                Value::Text(name.clone()),
                Value::opt(proc.gamma()),
                Value::Int(c.n as i64),
                stat_mean(&c.sb_rb),
                Value::opt(raw),
                Value::opt(raw.map(|r| 2.0 * r - 1.0)),
                stat_se(&c.sb_rb),
            ]);
        }
    }
    t
}

/// Log-log slopes of `SB_n - 1/2` and `E M_n` over the `n_grid`.
pub fn rate_table(exp: &PreparedExperiment, summary: &ExperimentSummary) -> Table {
    let mut t = Table::new(
        "rates",
        &[
            "procedure",
            "gamma",
            "sb_slope",
            "sb_slope_se",
            "sb_expected",
            "m_slope",
            "m_slope_se",
            "m_expected",
            "m_over_n_decreasing",
        ],
    );
    for (proc, name) in exp.procedures.iter().zip(&exp.names) {
        let cells: Vec<&CellSummary> = summary.series(name).into_iter().filter(|c| c.on_grid).collect();
        let sb: Vec<(f64, f64)> = cells.iter().map(|c| (c.n as f64, c.sb_rb.mean() - 0.5)).collect();
        let m: Vec<(f64, f64)> = cells.iter().map(|c| (c.n as f64, c.m_n.mean())).collect();
        let sb_fit = rate_estimate(&sb).ok();
        let m_fit = rate_estimate(&m).ok();
        let ratios: Vec<f64> = m.iter().map(|(n, v)| v / n).collect();
        let gamma = proc.gamma();
        t.push(vec![
            Value::Text(name.clone()),
            Value::opt(gamma),
            Value::opt(sb_fit.map(|f| f.slope)),
            Value::opt(sb_fit.map(|f| f.stderr)),
            Value::opt(gamma.filter(|g| *g > 0.0 && *g < 1.0).map(|g| -g / 2.0)),
            Value::opt(m_fit.map(|f| f.slope)),
            Value::opt(m_fit.map(|f| f.stderr)),
            Value::opt(gamma.filter(|g| *g > 0.0 && *g < 1.0)),
            Value::Bool(ratios.windows(2).all(|w| w[1] < w[0])),
        ]);
    }
    t
}

/// The three admissibility conditions of an allocation function.
pub fn allocation_table(report: &AllocationReport) -> Table {
    let mut t = Table::new("allocation", &["condition", "result", "statistic"]);
    let verdict = |ok: bool| Value::Text(if ok { "pass" } else { "fail" }.into());
    t.push(vec![Value::Text("favours_lagging_arm".into()), verdict(report.favours_lagging_arm), Value::Missing]);
    t.push(vec![
        Value::Text("strong_drift".into()),
        verdict(report.strong_drift),
        Value::Real(report.min_final_ratio),
    ]);
    t.push(vec![
        Value::Text("vanishing_bias".into()),
        verdict(report.vanishing_bias),
        Value::Real(report.max_final_deviation),
    ]);
    t.push(vec![Value::Text("symmetric".into()), verdict(report.symmetric), Value::Missing]);
    t
}

/// Exact enumeration against the Monte Carlo summary at every evaluation
/// point small enough to enumerate.
pub fn oracle_table(exp: &PreparedExperiment, summary: &ExperimentSummary) -> Result<Table> {
    let mut t = Table::new("oracle_check", &["procedure", "n", "quantity", "exact", "monte_carlo", "mc_se", "z", "within_3se"]);
    let reps = summary.replications as f64;
    for (proc, name) in exp.procedures.iter().zip(&exp.names) {
        for c in summary.series(name) {
            let exact = match enumerate_exact(proc, &exp.covariates, c.n) {
                Ok(e) => e,
                Err(Error::BudgetExceeded { .. }) => continue,
                Err(e) => return Err(e),
            };
            for (quantity, want, got, se) in oracle_rows(&exact, c, reps) {
                let z = if se > 0.0 {
                    (got - want) / se
                } else if (got - want).abs() <= 1e-12 * want.abs().max(1.0) {
                    0.0
                } else {
                    f64::INFINITY
                };
                t.push(vec![
                    Value::Text(name.clone()),
                    Value::Int(c.n as i64),
                    Value::Text(quantity),
                    Value::Real(want),
                    Value::Real(got),
                    Value::Real(se),
                    Value::Real(z),
                    Value::Bool(z.abs() <= 3.0),
                ]);
            }
        }
    }
    Ok(t)
}

fn oracle_rows(exact: &ExactDistribution, c: &CellSummary, reps: f64) -> Vec<(String, f64, f64, f64)> {
    let mut rows = vec![
        ("E[M_n]".to_string(), exact.mean_m_n, c.m_n.mean(), c.m_n.se()),
        ("SB_n".to_string(), exact.sb_n, c.sb_rb.mean(), c.sb_rb.se()),
    ];
    for (&d, &p) in &exact.d_distribution {
        let got = c.d_probability(d);
        // standard error under the exact probability, so zero-probability cells stay exact
        rows.push((format!("P(D_n={d})"), p, got, (p * (1.0 - p) / reps).sqrt()));
    }
    let unexpected: f64 = c.d_hist.keys().filter(|d| !exact.d_distribution.contains_key(d)).map(|&d| c.d_probability(d)).sum();
    if unexpected > 0.0 {
        rows.push(("P(D_n outside support)".to_string(), 0.0, unexpected, 0.0));
    }
    rows
}

/// SB estimates of a tally as a one-row table; used by tests and tools.
pub fn tally_table(name: &str, tally: &GuessTally) -> Result<Table> {
    let e = sb_estimate(tally)?;
    let mut t = Table::new(name, &["guesses", "sb", "smith_u", "sb_rb"]);
    t.push(vec![Value::Int(tally.n as i64), Value::Real(e.sb), Value::Real(e.smith_u), Value::Real(e.sb_rao_blackwell)]);
    Ok(t)
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub schema_version: u32,
    /// Not part of the reproducibility contract.
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, wall_time_seconds: f64) -> Self {
        Manifest {
            tool: "carct".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            schema_version: crate::simulator::SUMMARY_SCHEMA_VERSION,
            wall_time_seconds,
            outputs: Vec::new(),
            config: config.clone(),
        }
    }
}

/// Output format of the extra tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn io_context(e: std::io::Error, what: &str, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("cannot {what} {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| io_context(e, "write", &path))?;
    files.push(path);
    Ok(())
}

/// Writes the summary, series, extra tables and the manifest into `out_dir`.
pub fn emit_report(
    out_dir: &Path,
    summary: &ExperimentSummary,
    extra: &[Table],
    format: Format,
    mut manifest: Manifest,
) -> Result<ReportBundle> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| io_context(e, "create", out_dir))?;
    let mut files = Vec::new();
    write(out_dir, "summary.csv", &summary_table(summary).to_csv(), &mut files)?;
    write(out_dir, "summary.json", &(serde_json::to_string_pretty(summary)? + "\n"), &mut files)?;
    for t in series_tables(summary) {
        write(out_dir, &format!("{}.csv", t.name), &t.to_csv(), &mut files)?;
    }
    for t in extra {
        match format {
            Format::Csv => write(out_dir, &format!("{}.csv", t.name), &t.to_csv(), &mut files)?,
            Format::Json => {
                write(out_dir, &format!("{}.json", t.name), &(serde_json::to_string_pretty(&t.to_json())? + "\n"), &mut files)?
            }
        }
    }
    manifest.outputs = files.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect();
    manifest.outputs.push("manifest.json".into());
    write(out_dir, "manifest.json", &(serde_json::to_string_pretty(&manifest)? + "\n"), &mut files)?;
    Ok(ReportBundle { out_dir: out_dir.to_path_buf(), files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn machine_numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 0.715_541_752_799_932_9, 1e-300, -2.5e17] {
            let s = format_machine(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn human_numbers_have_four_digits() {
        assert_eq!(format_human(0.715_541_75), "0.7155");
        assert_eq!(format_human(12.345_67), "12.35");
        assert_eq!(format_human(1234.5), "1234");
        assert_eq!(format_human(0.0), "0");
        assert_eq!(format_human(1.5e-7), "1.500e-7");
    }

    #[test]
    fn csv_quotes_when_needed() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![Value::Text("x,y".into()), Value::Real(0.5)]);
        assert_eq!(t.to_csv(), "a,b\n\"x,y\",5.0000000000000000e-1\n");
        assert_eq!(t.to_json()[0]["b"], 0.5);
    }
}
