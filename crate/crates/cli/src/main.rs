//! `carct`: batch runner for covariate-adaptive randomization experiments.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for numerical or
//! i/o failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use carct::allocation::{default_n_grid, default_x_grid, validate_allocation_function, AllocationFunction, BaseG};
use carct::config::{ExperimentConfig, InferenceLevel};
use carct::report::{
    allocation_table, emit_report, oracle_table, power_table, rate_table, selection_bias_table, Format, Manifest,
    Table,
};
use carct::simulator::{run_prepared, PreparedExperiment};
use carct::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

/// Environment variable that overrides `--workers`.
const WORKERS_ENV: &str = "CARCT_WORKERS";

#[derive(Parser)]
#[command(name = "carct", version, about = "Simulate covariate-adaptive randomization procedures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long, global = true)]
    replications: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "carct-out")]
    out_dir: PathBuf,
    /// Worker threads (CARCT_WORKERS takes precedence).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Format of stdout and of the command's extra tables.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write the summary files.
    Simulate { config: PathBuf },
    /// Loss of power against its large-sample prediction.
    Power { config: PathBuf },
    /// Selection bias per n and log-log rate fits.
    SelectionBias { config: PathBuf },
    /// Check the admissibility conditions of an allocation function.
    ///
    /// SPEC is one of `step:<p>`, `scaled:<linear|normal_tail>:<gamma>`,
    /// `wei` (scaled linear with gamma 1) or `sqrt-normal`.
    ValidateG { spec: String },
    /// Exact enumeration against Monte Carlo for small n.
    OracleCheck { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { config } => experiment(cli, "simulate", config, None, |_, _| Ok(vec![])),
        Command::Power { config } => {
            experiment(cli, "power", config, Some(InferenceLevel::Power), |exp, s| Ok(vec![power_table(exp, s)]))
        }
        Command::SelectionBias { config } => experiment(cli, "selection-bias", config, Some(InferenceLevel::None), |exp, s| {
            Ok(vec![selection_bias_table(exp, s), rate_table(exp, s)])
        }),
        Command::OracleCheck { config } => {
            experiment(cli, "oracle-check", config, Some(InferenceLevel::None), |exp, s| Ok(vec![oracle_table(exp, s)?]))
        }
        Command::ValidateG { spec } => {
            let g = parse_allocation(spec)?;
            let report = validate_allocation_function(&g, &default_n_grid(), &default_x_grid());
            print_tables(&[allocation_table(&report)], cli.format)
        }
    }
}

/// Loads the config, applies overrides, runs it and writes the report.
fn experiment(
    cli: &Cli,
    command: &str,
    path: &Path,
    inference: Option<InferenceLevel>,
    tables: impl Fn(&PreparedExperiment, &carct::simulator::ExperimentSummary) -> Result<Vec<Table>>,
) -> Result<()> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(r) = cli.replications {
        config.replications = r;
    }
    if let Some(w) = workers_override(cli.workers)? {
        config.workers = w;
    }
    if let Some(level) = inference {
        config.inference = level;
    }
    config.validate()?;

    let start = Instant::now();
    let exp = PreparedExperiment::new(&config)?;
    info!(
        "{command}: {} procedures, {} replications, {} workers",
        exp.procedures.len(),
        config.replications,
        config.workers
    );
    let summary = run_prepared(&exp)?;
    let extra = tables(&exp, &summary)?;
    let manifest = Manifest::new(command, &config, start.elapsed().as_secs_f64());
    let bundle = emit_report(&cli.out_dir, &summary, &extra, cli.format.into(), manifest)?;
    info!("wrote {} files to {}", bundle.files.len(), bundle.out_dir.display());

    if extra.is_empty() {
        print_tables(&[carct::report::summary_table(&summary)], cli.format)
    } else {
        print_tables(&extra, cli.format)
    }
}

fn workers_override(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(flag),
    }
}

/// Writes tables to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_tables(tables: &[Table], format: FormatArg) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let written = tables.iter().try_for_each(|t| match format {
        FormatArg::Csv => write!(out, "# {}\n{}", t.name, t.to_human()),
        FormatArg::Json => writeln!(out, "{:#}", t.to_json()),
    });
    match written.and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e)),
        _ => Ok(()),
    }
}

/// Parses the `validate-g` shorthand.
fn parse_allocation(spec: &str) -> Result<AllocationFunction> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Config(format!("`{s}` in allocation spec `{spec}` is not a number")))
    };
    let g = match parts.as_slice() {
        ["step", p] => AllocationFunction::Step { p: num(p)? },
        ["scaled", base, gamma] => {
            let base = match *base {
                "linear" => BaseG::Linear,
                "normal_tail" => BaseG::NormalTail,
                other => return Err(Error::Config(format!("unknown base `{other}`; expected `linear` or `normal_tail`"))),
            };
            AllocationFunction::Scaled { base, gamma: num(gamma)? }
        }
        ["wei"] => AllocationFunction::Scaled { base: BaseG::Linear, gamma: 1.0 },
        ["sqrt-normal"] => AllocationFunction::SignedRootNormal,
        _ => {
            return Err(Error::Config(format!(
                "cannot parse allocation spec `{spec}`; expected step:<p>, scaled:<base>:<gamma>, wei or sqrt-normal"
            )))
        }
    };
    g.validate()?;
    Ok(g)
}
