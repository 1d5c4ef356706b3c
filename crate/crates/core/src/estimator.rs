//! MAP estimation of the number of active users from exactly known slot
//! multiplicities.
//!
//! Given slots with degree `d_j` and exact active count `a_j`, the log
//! posterior of `N_A = n` is, up to an `n`-independent constant,
//!
//! ```text
//! F(m, n) = Σ_j ln p(a_j | d_j, n) + ln p(n)
//! ```
//!
//! with the hypergeometric `p(a | d, n)`. Since
//! `ln C(n, a) = ln n! − ln a! − ln (n − a)!`, the data term only depends on
//! the histograms of `a_j` and of `b_j = d_j − a_j`, which is what
//! [`MultiplicityEvidence`] keeps.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::model::{ln_activation_prior, ln_choose, PriorForm, SystemConfig};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exactly known `(d_S, a)` pairs of one contention period.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityEvidence {
    population: usize,
    pairs: Vec<(usize, usize)>,
    active_hist: Vec<u64>,
    inactive_hist: Vec<u64>,
    sum_active: u64,
    sum_inactive: u64,
    ln_norm: f64,
}

impl MultiplicityEvidence {
    pub fn new(population: usize) -> Self {
        Self {
            population,
            pairs: Vec::new(),
            active_hist: Vec::new(),
            inactive_hist: Vec::new(),
            sum_active: 0,
            sum_inactive: 0,
            ln_norm: 0.0,
        }
    }

    pub fn from_pairs(population: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut ev = Self::new(population);
        for &(d, a) in pairs {
            ev.admit(d, a)?;
        }
        Ok(ev)
    }

    /// Adds one slot of degree `degree` holding exactly `active` active users.
    pub fn admit(&mut self, degree: usize, active: usize) -> Result<()> {
        if active > degree || degree > self.population {
            return Err(Error::domain(format!(
                "evidence pair (d_S={degree}, a={active}) invalid for N={}",
                self.population
            )));
        }
        let inactive = degree - active;
        bump(&mut self.active_hist, active);
        bump(&mut self.inactive_hist, inactive);
        self.sum_active += active as u64;
        self.sum_inactive += inactive as u64;
        self.ln_norm += ln_choose(self.population, degree);
        self.pairs.push((degree, active));
        Ok(())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn population(&self) -> usize {
        self.population
    }

    /// `Σ a_j`.
    pub fn sum_active(&self) -> u64 {
        self.sum_active
    }

    /// `Σ (d_j − a_j)`.
    pub fn sum_inactive(&self) -> u64 {
        self.sum_inactive
    }

    pub fn max_active(&self) -> usize {
        self.active_hist.len().saturating_sub(1)
    }

    pub fn max_inactive(&self) -> usize {
        self.inactive_hist.len().saturating_sub(1)
    }
}

fn bump(hist: &mut Vec<u64>, at: usize) {
    if hist.len() <= at {
        hist.resize(at + 1, 0);
    }
    hist[at] += 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub n_hat: usize,
    pub score: f64,
    pub feasible_range: (usize, usize),
}

/// Scoring context for one population: prior and a log-factorial table.
#[derive(Debug, Clone)]
pub struct Estimator {
    population: usize,
    p_a: f64,
    prior: PriorForm,
    ln_fact: Vec<f64>,
    ln_prior: Vec<f64>,
}

impl Estimator {
    pub fn new(cfg: &SystemConfig) -> Self {
        Self::with_prior(cfg, PriorForm::Binomial)
    }

    pub fn with_prior(cfg: &SystemConfig, prior: PriorForm) -> Self {
        let population = cfg.n;
        let ln_fact = (0..=population as u64).map(ln_factorial).collect();
        let ln_prior = (0..=population)
            .map(|n| ln_activation_prior(n, population, cfg.p_a, prior))
            .collect();
        Self {
            population,
            p_a: cfg.p_a,
            prior,
            ln_fact,
            ln_prior,
        }
    }

    pub fn prior(&self) -> PriorForm {
        self.prior
    }

    /// `F(m, n)`; `-inf` when some pair is impossible with `n` active users.
    pub fn score(&self, n: usize, ev: &MultiplicityEvidence) -> f64 {
        debug_assert_eq!(ev.population, self.population);
        let big_n = self.population;
        if n > big_n || n < ev.max_active() || big_n - n < ev.max_inactive() {
            return f64::NEG_INFINITY;
        }
        let lf = &self.ln_fact;
        let mut total = self.ln_prior[n] - ev.ln_norm;
        for (a, &count) in ev.active_hist.iter().enumerate() {
            if count > 0 {
                total += count as f64 * (lf[n] - lf[a] - lf[n - a]);
            }
        }
        let rest = big_n - n;
        for (b, &count) in ev.inactive_hist.iter().enumerate() {
            if count > 0 {
                total += count as f64 * (lf[rest] - lf[b] - lf[rest - b]);
            }
        }
        total
    }

    /// Feasible search interval `[max(max a_j, lower_bound), N − max b_j]`.
    pub fn feasible_range(&self, ev: &MultiplicityEvidence, lower_bound: usize) -> (usize, usize) {
        let lo = ev.max_active().max(lower_bound);
        let hi = self.population.saturating_sub(ev.max_inactive());
        (lo, hi)
    }

    /// Exact argmax of `F` over the feasible range, smallest `n` on ties.
    ///
    /// `F` is a sum of log-concave terms in `n`, so a ternary search finds
    /// the peak; the result is checked against a ±2 window and recomputed by
    /// a full scan if the check fails.
    pub fn map_estimate(&self, ev: &MultiplicityEvidence, lower_bound: usize) -> EstimateResult {
        let (lo, hi) = self.feasible_range(ev, lower_bound);
        if lo > hi {
            return EstimateResult {
                n_hat: lo.min(self.population),
                score: f64::NEG_INFINITY,
                feasible_range: (lo, hi),
            };
        }
        let f = |n: usize| self.score(n, ev);
        let (mut a, mut b) = (lo, hi);
        while b - a > 2 {
            let m1 = a + (b - a) / 3;
            let m2 = b - (b - a) / 3;
            if f(m1) < f(m2) {
                a = m1 + 1;
            } else {
                b = m2;
            }
        }
        let (mut best, mut best_score) = (a, f(a));
        for n in a + 1..=b {
            let s = f(n);
            if s > best_score {
                best = n;
                best_score = s;
            }
        }
        let window_ok = (best.saturating_sub(2).max(lo)..=(best + 2).min(hi)).all(|n| {
            let s = f(n);
            if n < best {
                s < best_score
            } else {
                s <= best_score
            }
        });
        if !window_ok {
            (best, best_score) = self.full_scan(ev, lo, hi);
        }
        EstimateResult {
            n_hat: best,
            score: best_score,
            feasible_range: (lo, hi),
        }
    }

    fn full_scan(&self, ev: &MultiplicityEvidence, lo: usize, hi: usize) -> (usize, f64) {
        let mut best = (lo, f64::NEG_INFINITY);
        for n in lo..=hi {
            let s = self.score(n, ev);
            if s > best.1 {
                best = (n, s);
            }
        }
        best
    }

    /// Left side of the stationarity condition `∂F/∂n = 0` in its continuous
    /// relaxation (Poisson prior, harmonic sum for the digamma term).
    pub fn stationarity_residual(&self, n: usize, ev: &MultiplicityEvidence) -> Result<f64> {
        stationarity_residual_parts(n, self.population, self.p_a, ev)
    }
}

fn stationarity_residual_parts(
    n: usize,
    population: usize,
    p_a: f64,
    ev: &MultiplicityEvidence,
) -> Result<f64> {
    if n == 0 || n >= population {
        return Err(Error::domain(format!(
            "stationarity residual needs 1 <= n <= N-1, got n={n} N={population}"
        )));
    }
    let alpha = p_a * population as f64;
    let harmonic: f64 = (1..=n).map(|h| 1.0 / h as f64).sum();
    Ok(
        ev.sum_active as f64 / n as f64 - ev.sum_inactive as f64 / (population - n) as f64
            + alpha.ln()
            - harmonic
            + EULER_GAMMA,
    )
}

/// `F(m, n)` with the exact binomial prior.
pub fn score(n: usize, ev: &MultiplicityEvidence, cfg: &SystemConfig) -> f64 {
    Estimator::new(cfg).score(n, ev)
}

pub fn map_estimate(
    ev: &MultiplicityEvidence,
    cfg: &SystemConfig,
    n_resolved_lower_bound: usize,
) -> EstimateResult {
    Estimator::new(cfg).map_estimate(ev, n_resolved_lower_bound)
}

pub fn stationarity_residual(
    n: usize,
    ev: &MultiplicityEvidence,
    cfg: &SystemConfig,
) -> Result<f64> {
    stationarity_residual_parts(n, cfg.n, cfg.p_a, ev)
}
