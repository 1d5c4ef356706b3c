//! And-or tree density evolution of the peeling decoder as `N → ∞`.
//!
//! Two probabilities are iterated from `y = 1`:
//!
//! * `r`: an active edge at a slot node survives the slot step, which happens
//!   when at least `K` of the slot's other active edges are still present,
//!   `r = Σ_d ψ_d · P[Bin(d − 1, y) ≥ K]`;
//! * `y`: an edge at a user node survives the user step, i.e. none of the
//!   user's other edges was removed, `y = exp(−(1 + ε)β(1 − r))` for
//!   Poisson user degrees with mean `(M/N)·β`.
//!
//! The resolution probability is `1 − y` at the fixed point.

use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ln_choose, poisson_truncation_point, slot_active_degree_distribution, SystemConfig,
};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Where the edge-perspective active-degree distribution comes from.
#[derive(Debug, Clone, Copy)]
pub enum ActiveDegreeSource<'a> {
    /// Every slot has degree `beta`, activation probability `p_a`.
    Constant { beta: usize, p_a: f64 },
    /// Finite-N Ψ of a general configuration, edge-reweighted.
    General(&'a SystemConfig),
}

/// ψ as a vector: entry `i` is the probability of active degree `i + 1`.
pub fn edge_active_distribution(source: ActiveDegreeSource<'_>) -> Result<Vec<f64>> {
    match source {
        ActiveDegreeSource::Constant { beta, p_a } => {
            if beta < 1 {
                return Err(Error::domain("slot degree beta must be at least 1"));
            }
            if !(0.0..=1.0).contains(&p_a) {
                return Err(Error::domain(format!("p_A={p_a} outside [0,1]")));
            }
            let n = beta - 1;
            Ok((0..=n).map(|j| binomial_pmf(n, j, p_a)).collect())
        }
        ActiveDegreeSource::General(cfg) => {
            let psi_node = slot_active_degree_distribution(cfg);
            let weighted: Vec<f64> = psi_node
                .iter()
                .enumerate()
                .skip(1)
                .map(|(d, &p)| d as f64 * p)
                .collect();
            let total: f64 = weighted.iter().sum();
            if total <= 0.0 {
                return Err(Error::domain("no slot can hold an active user"));
            }
            Ok(weighted.into_iter().map(|w| w / total).collect())
        }
    }
}

fn binomial_pmf(n: usize, j: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if j == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, j) + j as f64 * p.ln() + (n - j) as f64 * (-p).ln_1p()).exp()
}

/// `P[Bin(n, y) ≥ k]`, summing whichever tail is shorter.
fn binomial_upper_tail(n: usize, k: usize, y: f64) -> f64 {
    if k > n || y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    let (ly, lq) = (y.ln(), (-y).ln_1p());
    let term = |j: usize| (ln_choose(n, j) + j as f64 * ly + (n - j) as f64 * lq).exp();
    if n - k < k {
        (k..=n).map(term).sum::<f64>().min(1.0)
    } else {
        (1.0 - (0..k).map(term).sum::<f64>()).max(0.0)
    }
}

/// Slot-node step: probability that an active edge is not removed.
///
/// The per-degree survival is the complementary form of
/// `1 − Σ_{h=1}^{min(d,K)} C(d−1, h−1) y^{h−1}(1−y)^{d−h}`, so degrees
/// `d ≤ K` contribute exactly zero.
pub fn slot_update(y: f64, psi: &[f64], k: usize) -> f64 {
    psi.iter()
        .enumerate()
        .filter(|&(_, &w)| w > 0.0)
        .map(|(i, &w)| w * binomial_upper_tail(i, k, y))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// How the user-node step is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UserUpdate {
    /// `exp(−(1+ε)β(1−r))`.
    #[default]
    Exponential,
    /// `Σ_d λ_d r^{d−1}` with Poisson Λ, truncated at tail mass 1e-12.
    PoissonSeries,
    /// Finite population: user degree `Bin(Mβ, 1/N)`, giving
    /// `(1 − (1−r)/N)^{Mβ−1}`.
    Binomial { population: usize },
}

/// User-node step with the exponential form.
pub fn user_update(r: f64, beta: f64, epsilon: f64) -> f64 {
    (-(1.0 + epsilon) * beta * (1.0 - r)).exp()
}

/// User-node step as the truncated edge-perspective Poisson series.
pub fn user_update_series(r: f64, beta: f64, epsilon: f64) -> f64 {
    let mean = (1.0 + epsilon) * beta;
    if mean <= 0.0 {
        return 1.0;
    }
    // λ_d = d Λ_d / mean = Poisson(d − 1; mean)
    let top = poisson_truncation_point(mean);
    let mut term = (-mean).exp();
    let mut total = term;
    for j in 1..=top {
        term *= mean * r / j as f64;
        total += term;
    }
    total
}

fn user_update_binomial(r: f64, beta: f64, epsilon: f64, population: usize) -> f64 {
    let transmissions = (1.0 + epsilon) * beta * population as f64;
    if transmissions <= 1.0 {
        return 1.0;
    }
    (1.0 - (1.0 - r) / population as f64).powf(transmissions - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub p_a: f64,
    pub k: usize,
    /// Mean slot degree E[|s|].
    pub beta: f64,
    /// Load parameter, `1 + ε = M/N`.
    pub epsilon: f64,
    pub psi: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub user_update: UserUpdate,
    pub record_trajectory: bool,
}

impl EvolutionParams {
    /// Constant slot degree `beta` at load `M/N = m_over_n`.
    pub fn constant_degree(p_a: f64, k: usize, beta: usize, m_over_n: f64) -> Result<Self> {
        let psi = edge_active_distribution(ActiveDegreeSource::Constant { beta, p_a })?;
        let params = Self {
            p_a,
            k,
            beta: beta as f64,
            epsilon: m_over_n - 1.0,
            psi,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            user_update: UserUpdate::Exponential,
            record_trajectory: false,
        };
        params.validate()?;
        Ok(params)
    }

    /// General Ω from a finite configuration.
    pub fn from_config(cfg: &SystemConfig, m_over_n: f64) -> Result<Self> {
        let psi = edge_active_distribution(ActiveDegreeSource::General(cfg))?;
        let params = Self {
            p_a: cfg.p_a,
            k: cfg.k,
            beta: cfg.omega.mean(),
            epsilon: m_over_n - 1.0,
            psi,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            user_update: UserUpdate::Exponential,
            record_trajectory: false,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn m_over_n(&self) -> f64 {
        1.0 + self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_nan() || self.beta < 1.0 {
            return Err(Error::domain(format!("beta={} must be >= 1", self.beta)));
        }
        if self.epsilon.is_nan() || 1.0 + self.epsilon <= 0.0 {
            return Err(Error::domain(format!(
                "1+epsilon={} must be positive",
                1.0 + self.epsilon
            )));
        }
        if self.k == 0 {
            return Err(Error::domain("K must be positive"));
        }
        let total: f64 = self.psi.iter().sum();
        if (total - 1.0).abs() > 1e-10 || self.psi.iter().any(|&p| p < 0.0) {
            return Err(Error::domain(format!("psi sums to {total}, expected 1")));
        }
        Ok(())
    }

    fn user_step(&self, r: f64) -> f64 {
        match self.user_update {
            UserUpdate::Exponential => user_update(r, self.beta, self.epsilon),
            UserUpdate::PoissonSeries => user_update_series(r, self.beta, self.epsilon),
            UserUpdate::Binomial { population } => {
                user_update_binomial(r, self.beta, self.epsilon, population)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionResult {
    pub p_r: f64,
    pub t: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(r(l), y(l))` for `l = 1, 2, …` when requested.
    pub trajectory: Option<Vec<(f64, f64)>>,
}

/// Iterates the slot and user steps from `y(0) = 1` until `|Δy| < tol`.
pub fn evolve(params: &EvolutionParams) -> EvolutionResult {
    let mut y = 1.0;
    let mut trajectory = params.record_trajectory.then(Vec::new);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let r = slot_update(y, &params.psi, params.k);
        let next = params.user_step(r);
        if let Some(t) = trajectory.as_mut() {
            t.push((r, next));
        }
        let delta = (next - y).abs();
        y = next;
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    let p_r = 1.0 - y;
    EvolutionResult {
        p_r,
        t: asymptotic_throughput(p_r, params.p_a, params.epsilon, params.k),
        iterations,
        converged,
        trajectory,
    }
}

/// `p_R · p_A / ((1 + ε) K)`.
pub fn asymptotic_throughput(p_r: f64, p_a: f64, epsilon: f64, k: usize) -> f64 {
    p_r * p_a / ((1.0 + epsilon) * k as f64)
}

/// `1 − exp(−Mβ/N)`: every user that transmits at least once is resolved.
pub fn resolution_upper_bound(m: f64, n: f64, beta: f64) -> f64 {
    -(-m * beta / n).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Resolution,
    Throughput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSweep {
    pub beta_star: usize,
    pub p_r_star: f64,
    pub t_star: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Best constant slot degree over `betas`; ties go to the smallest degree.
pub fn sweep_beta(
    p_a: f64,
    k: usize,
    epsilon: f64,
    betas: RangeInclusive<usize>,
    objective: Objective,
) -> Result<BetaSweep> {
    let mut best: Option<(f64, BetaSweep)> = None;
    for beta in betas {
        let res = evolve(&EvolutionParams::constant_degree(
            p_a,
            k,
            beta,
            1.0 + epsilon,
        )?);
        let value = match objective {
            Objective::Resolution => res.p_r,
            Objective::Throughput => res.t,
        };
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((
                value,
                BetaSweep {
                    beta_star: beta,
                    p_r_star: res.p_r,
                    t_star: res.t,
                    converged: res.converged,
                    iterations: res.iterations,
                },
            ));
        }
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::domain("empty beta range"))
}

/// One evaluated point of a density-evolution grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRow {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M_over_N")]
    pub m_over_n: f64,
    pub beta: usize,
    #[serde(rename = "p_R")]
    pub p_r: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "p_U")]
    pub p_u: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `step, 2·step, …` up to `max` inclusive, rounded to 1e-9.
pub fn load_grid(step: f64, max: f64) -> Vec<f64> {
    let count = (max / step + 1e-9).floor() as usize;
    (1..=count)
        .map(|i| (i as f64 * step * 1e9).round() / 1e9)
        .collect()
}

/// Evaluates every `(K, M/N, β)` combination; rows ordered by K, load, β.
pub fn evolution_grid(
    p_a: f64,
    k_list: &[usize],
    loads: &[f64],
    betas: RangeInclusive<usize>,
) -> Result<Vec<EvolutionRow>> {
    let points: Vec<(usize, f64, usize)> = k_list
        .iter()
        .flat_map(|&k| {
            let betas = betas.clone();
            loads
                .iter()
                .flat_map(move |&l| betas.clone().map(move |b| (k, l, b)))
        })
        .collect();
    points
        .into_par_iter()
        .map(|(k, load, beta)| {
            let res = evolve(&EvolutionParams::constant_degree(p_a, k, beta, load)?);
            Ok(EvolutionRow {
                k,
                m_over_n: load,
                beta,
                p_r: res.p_r,
                t: res.t,
                p_u: resolution_upper_bound(load, 1.0, beta as f64),
                converged: res.converged,
                iterations: res.iterations,
            })
        })
        .collect()
}
