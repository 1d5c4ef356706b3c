//! Contention periods with adaptive termination, Monte Carlo aggregation and
//! the asymptotic sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contention::{activate, observe_slot};
use crate::decoder::ResolutionState;
use crate::error::{Error, Result};
use crate::estimator::{Estimator, MultiplicityEvidence};
use crate::evolution::{evolution_grid, load_grid, EvolutionRow, Objective};
use crate::export::CsvSchema;
use crate::model::{DegreeDistribution, RunRecord, SystemConfig};
use crate::scheduler::Schedule;

/// Default number of Monte Carlo runs per slot degree.
pub const DEFAULT_RUNS: usize = 500;
/// Minimum slots before a zero estimate with nothing resolved ends a run.
pub const DEFAULT_M_MIN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// Termination threshold on `N_R / N_E`.
    pub h: f64,
    pub m_max: usize,
    pub m_min: usize,
    pub runs: usize,
    pub seed: u64,
    /// Constant slot degrees to evaluate; empty means "use Ω as configured".
    pub beta_grid: Vec<usize>,
    pub objective: Objective,
}

#[derive(Deserialize)]
struct RawExperimentConfig {
    #[serde(flatten)]
    system: SystemConfig,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "M_max")]
    m_max: Option<usize>,
    m_min: Option<usize>,
    runs: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    beta_grid: Vec<usize>,
    #[serde(default)]
    objective: Objective,
}

impl ExperimentConfig {
    /// Defaults: `M_max = 10·N/K`, 500 runs, seed 0, Ω as configured.
    pub fn new(system: SystemConfig, h: f64) -> Result<Self> {
        let m_max = default_m_max(&system);
        let cfg = Self {
            system,
            h,
            m_max,
            m_min: DEFAULT_M_MIN,
            runs: DEFAULT_RUNS,
            seed: 0,
            beta_grid: Vec::new(),
            objective: Objective::Throughput,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::config(format!(
                "H must lie in (0,1], got {}",
                self.h
            )));
        }
        if self.m_max == 0 || self.runs == 0 {
            return Err(Error::config("M_max and runs must be at least 1"));
        }
        if let Some(&b) = self
            .beta_grid
            .iter()
            .find(|&&b| b == 0 || b > self.system.n)
        {
            return Err(Error::config(format!("beta {b} outside [1, N]")));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        let cfg = Self {
            m_max: raw.m_max.unwrap_or_else(|| default_m_max(&raw.system)),
            m_min: raw.m_min.unwrap_or(DEFAULT_M_MIN),
            runs: raw.runs.unwrap_or(DEFAULT_RUNS),
            seed: raw.seed.unwrap_or(0),
            system: raw.system,
            h: raw.h,
            beta_grid: raw.beta_grid,
            objective: raw.objective,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    fn degree_plans(&self) -> Vec<Option<usize>> {
        if self.beta_grid.is_empty() {
            vec![None]
        } else {
            self.beta_grid.iter().copied().map(Some).collect()
        }
    }
}

fn default_m_max(cfg: &SystemConfig) -> usize {
    (10 * cfg.n / cfg.k).max(1)
}

/// When a contention period stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Termination {
    /// Threshold on `f_RE`; `None` runs exactly `m_max` slots.
    pub h: Option<f64>,
    pub m_max: usize,
    pub m_min: usize,
}

impl Termination {
    pub fn fixed_length(slots: usize) -> Self {
        Self {
            h: None,
            m_max: slots,
            m_min: 0,
        }
    }
}

/// Per-slot record of what the AP observed, for replaying the estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSlot {
    pub j: usize,
    #[serde(rename = "d_S")]
    pub d_s: usize,
    pub reported: usize,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "p_A")]
    pub p_a: f64,
    pub slots: Vec<TraceSlot>,
}

/// SplitMix64 finalizer, used to derive independent run seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` at slot degree `beta` under master seed `seed`.
pub fn run_seed(seed: u64, beta: Option<usize>, run: usize) -> u64 {
    mix_seed(mix_seed(seed, beta.map_or(0, |b| b as u64 + 1)), run as u64)
}

/// Simulates one contention period of `cfg`, reusing a prepared estimator.
///
/// Each slot is scheduled, observed, ingested and peeled; newly exact
/// multiplicities feed the evidence and the MAP estimate is refreshed.
pub fn simulate_period(
    cfg: &SystemConfig,
    estimator: &Estimator,
    termination: Termination,
    seed: u64,
    mut trace: Option<&mut Vec<TraceSlot>>,
) -> RunRecord {
    let mut activation_rng = ChaCha8Rng::seed_from_u64(seed);
    activation_rng.set_stream(u64::MAX);
    let outcome = activate(cfg, &mut activation_rng);

    let mut schedule = Schedule::new(seed);
    let mut decoder = ResolutionState::new(cfg.k);
    let mut evidence = MultiplicityEvidence::new(cfg.n);
    let mut m = 0;
    let mut n_e = 0;
    let mut truncated = false;
    loop {
        let slot = schedule.extend(cfg);
        let obs = observe_slot(slot, &outcome, cfg);
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceSlot {
                j: obs.slot_index,
                d_s: obs.degree(),
                reported: obs.reported_multiplicity,
                clipped: obs.clipped,
            });
        }
        m += 1;
        decoder.ingest(obs).expect("slot indices are fresh");
        decoder.peel();
        for e in decoder.take_newly_exact() {
            evidence
                .admit(e.degree, e.multiplicity)
                .expect("exact multiplicities never exceed the slot degree");
        }
        let n_r = decoder.n_resolved();
        match termination.h {
            Some(h) => {
                n_e = estimator.map_estimate(&evidence, n_r).n_hat;
                if n_e == 0 && n_r == 0 {
                    if m >= termination.m_min {
                        break;
                    }
                } else if n_r as f64 / n_e.max(1) as f64 >= h {
                    break;
                }
            }
            None if m >= termination.m_max => {
                n_e = estimator.map_estimate(&evidence, n_r).n_hat;
            }
            None => {}
        }
        if m >= termination.m_max {
            truncated = termination.h.is_some();
            break;
        }
    }
    RunRecord::from_counts(
        seed,
        cfg.k,
        cfg.omega.mean(),
        m,
        outcome.n_active(),
        decoder.n_resolved(),
        n_e,
        truncated,
    )
}

/// One contention period at constant slot degree `beta`.
pub fn run_contention_period(
    expcfg: &ExperimentConfig,
    beta: usize,
    seed: u64,
) -> Result<RunRecord> {
    let cfg = expcfg.system.with_constant_degree(beta)?;
    let estimator = Estimator::new(&cfg);
    Ok(simulate_period(
        &cfg,
        &estimator,
        termination_of(expcfg),
        seed,
        None,
    ))
}

fn termination_of(expcfg: &ExperimentConfig) -> Termination {
    Termination {
        h: Some(expcfg.h),
        m_max: expcfg.m_max,
        m_min: expcfg.m_min,
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len();
        if n == 0 {
            return Self::default();
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub runs_used: usize,
    pub truncation_count: usize,
    #[serde(rename = "f_RE_mean")]
    pub f_re_mean: f64,
    #[serde(rename = "f_RE_se")]
    pub f_re_se: f64,
    #[serde(rename = "f_RA_mean")]
    pub f_ra_mean: f64,
    #[serde(rename = "f_RA_se")]
    pub f_ra_se: f64,
    #[serde(rename = "T_mean")]
    pub t_mean: f64,
    #[serde(rename = "T_se")]
    pub t_se: f64,
    #[serde(rename = "delta_nE_mean")]
    pub delta_ne_mean: f64,
    #[serde(rename = "delta_nE_se")]
    pub delta_ne_se: f64,
    #[serde(rename = "abs_delta_nE_mean")]
    pub abs_delta_ne_mean: f64,
    #[serde(rename = "abs_delta_nE_se")]
    pub abs_delta_ne_se: f64,
    #[serde(rename = "M_mean")]
    pub m_mean: f64,
}

impl AggregateMetrics {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let stat = |f: fn(&RunRecord) -> f64| Stat::of(records.iter().map(f));
        let (f_re, f_ra, t) = (stat(|r| r.f_re), stat(|r| r.f_ra), stat(|r| r.t));
        let (d, ad, m) = (
            stat(|r| r.delta_ne),
            stat(|r| r.abs_delta_ne),
            stat(|r| r.m as f64),
        );
        Self {
            k: records.first().map_or(0, |r| r.k),
            beta: records.first().map_or(0.0, |r| r.beta),
            runs_used: records.len(),
            truncation_count: records.iter().filter(|r| r.truncated).count(),
            f_re_mean: f_re.mean,
            f_re_se: f_re.se,
            f_ra_mean: f_ra.mean,
            f_ra_se: f_ra.se,
            t_mean: t.mean,
            t_se: t.se,
            delta_ne_mean: d.mean,
            delta_ne_se: d.se,
            abs_delta_ne_mean: ad.mean,
            abs_delta_ne_se: ad.se,
            m_mean: m.mean,
        }
    }
}

impl CsvSchema for AggregateMetrics {
    const HEADER: &'static [&'static str] = &[
        "K",
        "beta",
        "runs_used",
        "truncation_count",
        "f_RE_mean",
        "f_RE_se",
        "f_RA_mean",
        "f_RA_se",
        "T_mean",
        "T_se",
        "delta_nE_mean",
        "delta_nE_se",
        "abs_delta_nE_mean",
        "abs_delta_nE_se",
        "M_mean",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    /// One entry per evaluated slot degree, in grid order.
    pub per_beta: Vec<AggregateMetrics>,
    /// Index into `per_beta` of the best entry.
    pub best: usize,
    pub records: Vec<RunRecord>,
}

impl MonteCarloSummary {
    pub fn best(&self) -> &AggregateMetrics {
        &self.per_beta[self.best]
    }

    pub fn beta_star(&self) -> f64 {
        self.best().beta
    }
}

/// Runs every grid degree `runs` times and picks the best mean (throughput
/// by default, ties to the smaller degree).
pub fn monte_carlo(expcfg: &ExperimentConfig) -> Result<MonteCarloSummary> {
    expcfg.validate()?;
    let plans = expcfg.degree_plans();
    let mut configs = Vec::with_capacity(plans.len());
    for &plan in &plans {
        let cfg = match plan {
            Some(beta) => expcfg.system.with_constant_degree(beta)?,
            None => expcfg.system.clone(),
        };
        let estimator = Estimator::new(&cfg);
        configs.push((cfg, estimator));
    }
    let termination = termination_of(expcfg);
    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..expcfg.runs).map(move |r| (p, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .into_par_iter()
        .map(|(p, r)| {
            let (cfg, est) = &configs[p];
            simulate_period(
                cfg,
                est,
                termination,
                run_seed(expcfg.seed, plans[p], r),
                None,
            )
        })
        .collect();
    let per_beta: Vec<AggregateMetrics> = records
        .chunks(expcfg.runs)
        .map(AggregateMetrics::from_records)
        .collect();
    let value = |a: &AggregateMetrics| match expcfg.objective {
        Objective::Throughput => a.t_mean,
        Objective::Resolution => a.f_ra_mean,
    };
    let mut best = 0;
    for (i, agg) in per_beta.iter().enumerate() {
        if value(agg) > value(&per_beta[best]) {
            best = i;
        }
    }
    Ok(MonteCarloSummary {
        per_beta,
        best,
        records,
    })
}

/// Best point of the asymptotic sweep at one `(K, M/N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M_over_N")]
    pub m_over_n: f64,
    pub beta_star: usize,
    #[serde(rename = "p_R_star")]
    pub p_r_star: f64,
    #[serde(rename = "T_star")]
    pub t_star: f64,
    #[serde(rename = "p_U")]
    pub p_u: f64,
}

impl CsvSchema for CurvePoint {
    const HEADER: &'static [&'static str] =
        &["K", "M_over_N", "beta_star", "p_R_star", "T_star", "p_U"];
}

/// Reduces a density-evolution grid to the p_R-maximizing degree per
/// `(K, M/N)`, smallest degree on ties.
pub fn curves_from_rows(rows: &[EvolutionRow]) -> Vec<CurvePoint> {
    let mut best: BTreeMap<(usize, u64), &EvolutionRow> = BTreeMap::new();
    let mut order = Vec::new();
    for row in rows {
        let key = (row.k, row.m_over_n.to_bits());
        match best.get(&key) {
            None => {
                order.push(key);
                best.insert(key, row);
            }
            Some(cur) if row.p_r > cur.p_r || (row.p_r == cur.p_r && row.beta < cur.beta) => {
                best.insert(key, row);
            }
            Some(_) => {}
        }
    }
    order
        .into_iter()
        .map(|key| {
            let r = best[&key];
            CurvePoint {
                k: r.k,
                m_over_n: r.m_over_n,
                beta_star: r.beta,
                p_r_star: r.p_r,
                t_star: r.t,
                p_u: r.p_u,
            }
        })
        .collect()
}

/// Asymptotic curves `p_R*`, `T*`, `β*`, `p_U(β*)` over `(K, M/N)`.
pub fn figure_sweep(
    p_a: f64,
    k_list: &[usize],
    loads: &[f64],
    beta_max: usize,
) -> Result<(Vec<CurvePoint>, Vec<EvolutionRow>)> {
    let rows = evolution_grid(p_a, k_list, loads, 1..=beta_max)?;
    Ok((curves_from_rows(&rows), rows))
}

/// Asymptotic reference degree for the finite-length scan: β* at the load
/// maximizing T* on the default grid.
pub fn asymptotic_reference_beta(p_a: f64, k: usize, beta_max: usize) -> Result<usize> {
    let (curves, _) = figure_sweep(p_a, &[k], &load_grid(0.005, 1.0), beta_max)?;
    curves
        .iter()
        .fold(None::<&CurvePoint>, |acc, c| match acc {
            Some(b) if b.t_star >= c.t_star => Some(b),
            _ => Some(c),
        })
        .map(|c| c.beta_star)
        .ok_or_else(|| Error::domain("empty sweep"))
}

/// Integer grid `[round(β·(1−w)), round(β·(1+w))] ∩ [1, N]`.
pub fn beta_window(center: usize, half_width: f64, population: usize) -> Vec<usize> {
    let lo = ((center as f64 * (1.0 - half_width)).round() as usize).max(1);
    let hi = ((center as f64 * (1.0 + half_width)).round() as usize).min(population);
    (lo..=hi).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    #[serde(rename = "K")]
    pub k: usize,
    pub beta_star: f64,
    pub runs: usize,
    pub beta_lo: usize,
    pub beta_hi: usize,
    #[serde(rename = "f_RE")]
    pub f_re: f64,
    #[serde(rename = "f_RA")]
    pub f_ra: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "T_se")]
    pub t_se: f64,
    #[serde(rename = "delta_nE")]
    pub delta_ne: f64,
    #[serde(rename = "abs_delta_nE")]
    pub abs_delta_ne: f64,
    #[serde(rename = "M_mean")]
    pub m_mean: f64,
    pub truncations: usize,
}

impl CsvSchema for Table1Row {
    const HEADER: &'static [&'static str] = &[
        "K",
        "beta_star",
        "runs",
        "beta_lo",
        "beta_hi",
        "f_RE",
        "f_RA",
        "T",
        "T_se",
        "delta_nE",
        "abs_delta_nE",
        "M_mean",
        "truncations",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Options {
    pub n: usize,
    pub p_a: f64,
    pub k_max: usize,
    pub h: f64,
    pub k_list: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Relative half-width of the degree scan around the asymptotic β*.
    pub beta_half_width: f64,
}

impl Default for Table1Options {
    fn default() -> Self {
        Self {
            n: 1000,
            p_a: 0.2,
            k_max: 10,
            h: 0.7,
            k_list: vec![1, 2, 4, 8],
            runs: DEFAULT_RUNS,
            seed: 0,
            beta_half_width: 0.5,
        }
    }
}

/// Finite-length performance at the throughput-optimal constant degree for
/// each K, together with every per-degree aggregate.
pub fn table1(opts: &Table1Options) -> Result<(Vec<Table1Row>, Vec<AggregateMetrics>)> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &k in &opts.k_list {
        let center = asymptotic_reference_beta(opts.p_a, k, 100)?;
        let grid = beta_window(center, opts.beta_half_width, opts.n);
        let system = SystemConfig::new(
            opts.n,
            opts.p_a,
            k,
            opts.k_max,
            DegreeDistribution::constant(grid[0])?,
        )?;
        let mut expcfg = ExperimentConfig::new(system, opts.h)?;
        expcfg.runs = opts.runs;
        expcfg.seed = mix_seed(opts.seed, k as u64);
        expcfg.beta_grid = grid.clone();
        let summary = monte_carlo(&expcfg)?;
        let b = summary.best();
        rows.push(Table1Row {
            k,
            beta_star: b.beta,
            runs: b.runs_used,
            beta_lo: grid[0],
            beta_hi: *grid.last().expect("nonempty grid"),
            f_re: b.f_re_mean,
            f_ra: b.f_ra_mean,
            t: b.t_mean,
            t_se: b.t_se,
            delta_ne: b.delta_ne_mean,
            abs_delta_ne: b.abs_delta_ne_mean,
            m_mean: b.m_mean,
            truncations: b.truncation_count,
        });
        all.extend(summary.per_beta);
    }
    Ok((rows, all))
}
