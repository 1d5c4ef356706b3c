use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scr_core::estimator::{Estimator, MultiplicityEvidence};
use scr_core::evolution::load_grid;
use scr_core::export::{export, write_jsonl, Format};
use scr_core::harness::{
    figure_sweep, monte_carlo, run_seed, simulate_period, table1, ExperimentConfig, Table1Options,
    Termination, Trace,
};
use scr_core::model::{DegreeDistribution, SystemConfig};
use scr_core::Error;

/// Simulation and analysis of scheduled random access with SIC.
#[derive(Parser)]
#[command(name = "scr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic p_R*, T*, beta* and p_U curves.
    DeSweep(DeSweepArgs),
    /// Monte Carlo contention periods for one configuration.
    Simulate(SimulateArgs),
    /// Finite-length table for K in {1,2,4,8}.
    Table1(Table1Args),
    /// Replays a recorded slot trace through the MAP estimator.
    EstimateDemo(EstimateDemoArgs),
}

#[derive(Args)]
struct DeSweepArgs {
    #[arg(long = "pA", default_value_t = 0.2)]
    p_a: f64,
    #[arg(long = "K", value_delimiter = ',', default_value = "1,2,4,8")]
    k: Vec<usize>,
    /// M/N grid step.
    #[arg(long, default_value_t = 0.005)]
    grid: f64,
    /// Largest M/N on the grid.
    #[arg(long, default_value_t = 0.5)]
    grid_max: f64,
    #[arg(long, default_value_t = 100)]
    beta_max: usize,
    /// Curves output (.csv or .jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Optional per-(K, M/N, beta) rows.
    #[arg(long)]
    rows_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Slot degrees to scan; overrides beta_grid in the config.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "H")]
    h: Option<f64>,
    /// Per-run records.
    #[arg(long)]
    out: PathBuf,
    /// Per-degree aggregates.
    #[arg(long)]
    aggregates_out: Option<PathBuf>,
    /// Slot trace of the first run at the best degree.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long, default_value_t = 500)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    aggregates_out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateDemoArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    seed: u64,
    runs: usize,
    beta_grid: &'a [usize],
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "M_max")]
    m_max: usize,
    beta_star: f64,
    #[serde(rename = "T_mean")]
    t_mean: f64,
    #[serde(rename = "f_RE_mean")]
    f_re_mean: f64,
    #[serde(rename = "f_RA_mean")]
    f_ra_mean: f64,
}

#[derive(Serialize)]
struct DemoStep {
    j: usize,
    admitted: bool,
    n_hat: usize,
    score: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io { .. } => 2,
                _ => 1,
            })
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::DeSweep(a) => de_sweep(a),
        Command::Simulate(a) => simulate(a),
        Command::Table1(a) => run_table1(a),
        Command::EstimateDemo(a) => estimate_demo(a),
    }
}

fn de_sweep(a: DeSweepArgs) -> Result<(), Error> {
    if !(a.grid > 0.0 && a.grid_max >= a.grid) {
        return Err(Error::Config(
            "grid step must be positive and not exceed --grid-max".into(),
        ));
    }
    let (curves, rows) = figure_sweep(a.p_a, &a.k, &load_grid(a.grid, a.grid_max), a.beta_max)?;
    export(&curves, &a.out, Format::from_path(&a.out))?;
    if let Some(p) = &a.rows_out {
        export(&rows, p, Format::from_path(p))?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_json_file(&a.config)?;
    if !a.beta.is_empty() {
        cfg.beta_grid = a.beta;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(h) = a.h {
        cfg.h = h;
    }
    cfg.validate()?;
    let summary = monte_carlo(&cfg)?;
    export(&summary.records, &a.out, Format::from_path(&a.out))?;
    if let Some(p) = &a.aggregates_out {
        export(&summary.per_beta, p, Format::from_path(p))?;
    }
    if let Some(p) = &a.trace_out {
        let beta = cfg.beta_grid.get(summary.best).copied();
        let system = match beta {
            Some(b) => cfg.system.with_constant_degree(b)?,
            None => cfg.system.clone(),
        };
        let termination = Termination {
            h: Some(cfg.h),
            m_max: cfg.m_max,
            m_min: cfg.m_min,
        };
        let mut slots = Vec::new();
        simulate_period(
            &system,
            &Estimator::new(&system),
            termination,
            run_seed(cfg.seed, beta, 0),
            Some(&mut slots),
        );
        let trace = Trace {
            n: system.n,
            p_a: system.p_a,
            slots,
        };
        write_json(p, &trace)?;
    }
    let best = summary.best();
    let out = SimulateSummary {
        seed: cfg.seed,
        runs: cfg.runs,
        beta_grid: &cfg.beta_grid,
        h: cfg.h,
        m_max: cfg.m_max,
        beta_star: best.beta,
        t_mean: best.t_mean,
        f_re_mean: best.f_re_mean,
        f_ra_mean: best.f_ra_mean,
    };
    println!(
        "{}",
        serde_json::to_string(&out).expect("summary serializes")
    );
    Ok(())
}

fn run_table1(a: Table1Args) -> Result<(), Error> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be at least 1".into()));
    }
    let opts = Table1Options {
        runs: a.runs,
        seed: a.seed,
        ..Table1Options::default()
    };
    let (rows, aggregates) = table1(&opts)?;
    export(&rows, &a.out, Format::from_path(&a.out))?;
    if let Some(p) = &a.aggregates_out {
        export(&aggregates, p, Format::from_path(p))?;
    }
    let stdout = std::io::stdout();
    write_jsonl(&rows, stdout.lock()).map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn estimate_demo(a: EstimateDemoArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&a.trace).map_err(|e| Error::Io {
        path: a.trace.clone(),
        source: e,
    })?;
    let trace: Trace = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: a.trace.clone(),
        message: e.to_string(),
    })?;
    // K, K_max and the degree law do not enter the estimator.
    let system = SystemConfig::new(trace.n, trace.p_a, 1, 1, DegreeDistribution::constant(1)?)?;
    let estimator = Estimator::new(&system);
    let mut evidence = MultiplicityEvidence::new(trace.n);
    let mut steps = Vec::with_capacity(trace.slots.len());
    for s in &trace.slots {
        let admitted = !s.clipped;
        if admitted {
            evidence
                .admit(s.d_s, s.reported)
                .map_err(|e| Error::Format {
                    path: a.trace.clone(),
                    message: format!("slot {}: {e}", s.j),
                })?;
        }
        let est = estimator.map_estimate(&evidence, 0);
        steps.push(DemoStep {
            j: s.j,
            admitted,
            n_hat: est.n_hat,
            score: est.score,
        });
    }
    write_jsonl(&steps, std::io::stdout().lock()).map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(io)?;
    w.flush().map_err(io)
}
