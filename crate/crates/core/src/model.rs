//! Shared domain types and the closed-form probability mass functions of the
//! access model.
//!
//! Users are identified by integers `1..=N`. A contention period consists of
//! slots; every slot schedules `d_S` users drawn uniformly without replacement,
//! and the number of active users among them, `d_A`, is what the access point
//! observes through the indicator symbol of the signature sum.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{Error, Result};

/// User identifier in `1..=N`.
pub type UserId = u32;

/// Tail mass below which infinite supports are truncated.
pub const TAIL_MASS: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Natural log of the binomial coefficient; `-inf` when `k > n`.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    ln_binomial(n as u64, k as u64)
}

/// Slot degree distribution Ω over `d_S ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct DegreeDistribution {
    support: Vec<(usize, f64)>,
}

impl DegreeDistribution {
    pub fn new(support: Vec<(usize, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::config("degree distribution has empty support"));
        }
        let mut total = 0.0;
        let mut prev = 0usize;
        for &(degree, mass) in &support {
            if degree == 0 {
                return Err(Error::config("slot degrees must be at least 1"));
            }
            if degree <= prev {
                return Err(Error::config(format!(
                    "slot degrees must be strictly increasing ({prev} then {degree})"
                )));
            }
            if mass.is_nan() || mass < 0.0 || !mass.is_finite() {
                return Err(Error::config(format!(
                    "invalid mass {mass} at degree {degree}"
                )));
            }
            total += mass;
            prev = degree;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::config(format!(
                "degree masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { support })
    }

    /// Every slot has exactly `beta` scheduled users.
    pub fn constant(beta: usize) -> Result<Self> {
        Self::new(vec![(beta, 1.0)])
    }

    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn mass(&self, degree: usize) -> f64 {
        self.support
            .iter()
            .find(|&&(d, _)| d == degree)
            .map_or(0.0, |&(_, m)| m)
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|&(d, m)| d as f64 * m).sum()
    }

    pub fn max_degree(&self) -> usize {
        self.support.last().map_or(0, |&(d, _)| d)
    }

    /// Degree for a uniform variate `u ∈ [0, 1)` by inverse CDF.
    pub(crate) fn quantile(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for &(degree, mass) in &self.support {
            acc += mass;
            if u < acc {
                return degree;
            }
        }
        // rounding in the cumulative sum may leave u just above the last step
        self.support
            .iter()
            .rev()
            .find(|&&(_, m)| m > 0.0)
            .map_or(self.max_degree(), |&(d, _)| d)
    }
}

impl TryFrom<Vec<(usize, f64)>> for DegreeDistribution {
    type Error = Error;

    fn try_from(v: Vec<(usize, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DegreeDistribution> for Vec<(usize, f64)> {
    fn from(d: DegreeDistribution) -> Self {
        d.support
    }
}

/// Population and receiver parameters of one contention period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemConfig", into = "RawSystemConfig")]
pub struct SystemConfig {
    /// Number of users N.
    pub n: usize,
    /// Activation probability p_A.
    pub p_a: f64,
    /// Multiuser detection bound K.
    pub k: usize,
    /// Saturation point of the multiplicity counter.
    pub k_max: usize,
    pub omega: DegreeDistribution,
}

#[derive(Serialize, Deserialize)]
struct RawSystemConfig {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "p_A")]
    p_a: f64,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "K_max")]
    k_max: usize,
    omega: DegreeDistribution,
}

impl TryFrom<RawSystemConfig> for SystemConfig {
    type Error = Error;

    fn try_from(raw: RawSystemConfig) -> Result<Self> {
        SystemConfig::new(raw.n, raw.p_a, raw.k, raw.k_max, raw.omega)
    }
}

impl From<SystemConfig> for RawSystemConfig {
    fn from(c: SystemConfig) -> Self {
        RawSystemConfig {
            n: c.n,
            p_a: c.p_a,
            k: c.k,
            k_max: c.k_max,
            omega: c.omega,
        }
    }
}

impl SystemConfig {
    pub fn new(
        n: usize,
        p_a: f64,
        k: usize,
        k_max: usize,
        omega: DegreeDistribution,
    ) -> Result<Self> {
        let cfg = Self {
            n,
            p_a,
            k,
            k_max,
            omega,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("N must be positive"));
        }
        if !(self.p_a > 0.0 && self.p_a < 1.0) {
            return Err(Error::config(format!(
                "p_A must lie in (0,1), got {}",
                self.p_a
            )));
        }
        if self.k == 0 || self.k > self.k_max || self.k_max > self.n {
            return Err(Error::config(format!(
                "require 1 <= K <= K_max <= N, got K={} K_max={} N={}",
                self.k, self.k_max, self.n
            )));
        }
        if self.omega.max_degree() > self.n {
            return Err(Error::config(format!(
                "slot degree {} exceeds N={}",
                self.omega.max_degree(),
                self.n
            )));
        }
        Ok(())
    }

    /// Expected number of active users, `p_A·N`.
    pub fn alpha(&self) -> f64 {
        self.p_a * self.n as f64
    }

    /// Same population and receiver, every slot of degree `beta`.
    pub fn with_constant_degree(&self, beta: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.omega = DegreeDistribution::constant(beta)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }
}

/// Form of the activation prior p(n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorForm {
    /// Exact binomial pmf.
    #[default]
    Binomial,
    /// Poisson approximation with mean α.
    Poisson,
}

/// `ln p(n)`; `-inf` outside `[0, N]`.
pub fn ln_activation_prior(n: usize, population: usize, p_a: f64, form: PriorForm) -> f64 {
    if n > population {
        return f64::NEG_INFINITY;
    }
    match form {
        PriorForm::Binomial => {
            ln_choose(population, n)
                + n as f64 * p_a.ln()
                + (population - n) as f64 * (-p_a).ln_1p()
        }
        PriorForm::Poisson => {
            let alpha = p_a * population as f64;
            n as f64 * alpha.ln() - alpha - ln_factorial(n as u64)
        }
    }
}

/// Probability that exactly `n` of the N users are active.
pub fn activation_prior_pmf(n: usize, cfg: &SystemConfig, form: PriorForm) -> Result<f64> {
    if n > cfg.n {
        return Err(Error::domain(format!("n={n} outside [0, {}]", cfg.n)));
    }
    Ok(ln_activation_prior(n, cfg.n, cfg.p_a, form).exp())
}

/// `ln p(d_A | d_S, n)` without argument validation; `-inf` off the support.
pub fn ln_conditional_active_pmf(d_a: usize, d_s: usize, n: usize, population: usize) -> f64 {
    if d_a > d_s || d_a > n || d_s - d_a > population - n {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, d_a) + ln_choose(population - n, d_s - d_a) - ln_choose(population, d_s)
}

/// Hypergeometric probability that `d_a` of the `d_s` scheduled users are
/// active when `n` of the `population` users are.
pub fn conditional_active_pmf(d_a: usize, d_s: usize, n: usize, population: usize) -> Result<f64> {
    if d_a > d_s {
        return Err(Error::domain(format!("d_A={d_a} exceeds d_S={d_s}")));
    }
    if d_s > population || n > population {
        return Err(Error::domain(format!(
            "require d_S <= N and n <= N, got d_S={d_s} n={n} N={population}"
        )));
    }
    Ok(ln_conditional_active_pmf(d_a, d_s, n, population).exp())
}

/// Active-degree distribution Ψ of a slot, indexed by `d_A` from 0 to the
/// largest slot degree.
///
/// The outer sum runs over `n = 0..=N` so the distribution is normalized.
pub fn slot_active_degree_distribution(cfg: &SystemConfig) -> Vec<f64> {
    let max_d = cfg.omega.max_degree();
    let mut psi = vec![0.0; max_d + 1];
    for n in 0..=cfg.n {
        let ln_prior = ln_activation_prior(n, cfg.n, cfg.p_a, PriorForm::Binomial);
        if ln_prior < -745.0 {
            continue;
        }
        for &(d_s, mass) in cfg.omega.support() {
            if mass == 0.0 {
                continue;
            }
            let ln_mass = mass.ln() + ln_prior;
            for (d_a, slot) in psi.iter_mut().enumerate().take(d_s + 1) {
                let ln_cond = ln_conditional_active_pmf(d_a, d_s, n, cfg.n);
                if ln_cond.is_finite() {
                    *slot += (ln_cond + ln_mass).exp();
                }
            }
        }
    }
    psi
}

/// Ψ_{d_A}: probability that a slot holds exactly `d_a` active users.
pub fn slot_active_degree_pmf(d_a: usize, cfg: &SystemConfig) -> Result<f64> {
    if d_a > cfg.n {
        return Err(Error::domain(format!("d_A={d_a} outside [0, {}]", cfg.n)));
    }
    let psi = slot_active_degree_distribution(cfg);
    Ok(psi.get(d_a).copied().unwrap_or(0.0))
}

/// Λ_{d_U}: Poisson approximation of the number of slots a user is scheduled
/// in, with mean `M·β/N`.
pub fn user_degree_pmf(d_u: usize, slots: usize, beta: f64, population: usize) -> f64 {
    let mean = slots as f64 * beta / population as f64;
    if mean == 0.0 {
        return if d_u == 0 { 1.0 } else { 0.0 };
    }
    (d_u as f64 * mean.ln() - mean - ln_factorial(d_u as u64)).exp()
}

/// Smallest degree `D` such that the Poisson tail mass above `D` is below
/// [`TAIL_MASS`].
pub fn poisson_truncation_point(mean: f64) -> usize {
    let mut cdf = 0.0;
    let mut d = 0usize;
    loop {
        cdf += (d as f64 * mean.ln() - mean - ln_factorial(d as u64)).exp();
        if 1.0 - cdf < TAIL_MASS || d > 10_000 + (20.0 * mean) as usize {
            return d;
        }
        d += 1;
    }
}

/// Integer-adder channel output of one slot as seen through the oracle: the
/// sum of the active users' signatures, possibly with some already cancelled.
///
/// The member identities are only revealed by a successful decode, which
/// succeeds when at most `K` signatures remain in the sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureSum {
    members: Vec<UserId>,
}

impl SignatureSum {
    pub(crate) fn new(mut members: Vec<UserId>) -> Self {
        members.sort_unstable();
        Self { members }
    }

    /// Decode attempt with a `K`-user detector.
    pub fn try_decode(&self, k: usize) -> Option<&[UserId]> {
        (self.members.len() <= k).then_some(self.members.as_slice())
    }

    /// Subtract a resolved user's signature. Returns whether it was present.
    pub(crate) fn cancel(&mut self, user: UserId) -> bool {
        match self.members.binary_search(&user) {
            Ok(pos) => {
                self.members.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// Oracle-side view for verification code.
    pub fn residual_members(&self) -> &[UserId] {
        &self.members
    }
}

/// What the access point records for one slot.
#[derive(Debug, Clone)]
pub struct SlotObservation {
    pub slot_index: usize,
    /// Users scheduled in the slot, sorted.
    pub scheduled: Vec<UserId>,
    /// `min(|A_j|, K_max)`.
    pub reported_multiplicity: usize,
    /// Counter saturated: only `|A_j| >= K_max` is known.
    pub clipped: bool,
    sum: SignatureSum,
}

impl SlotObservation {
    pub fn new(
        slot_index: usize,
        mut scheduled: Vec<UserId>,
        active_hidden: Vec<UserId>,
        k_max: usize,
    ) -> Result<Self> {
        scheduled.sort_unstable();
        if scheduled.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain(format!(
                "slot {slot_index}: repeated user in schedule"
            )));
        }
        if let Some(u) = active_hidden
            .iter()
            .find(|u| scheduled.binary_search(u).is_err())
        {
            return Err(Error::domain(format!(
                "slot {slot_index}: active user {u} is not scheduled"
            )));
        }
        let count = active_hidden.len();
        Ok(Self {
            slot_index,
            scheduled,
            reported_multiplicity: count.min(k_max),
            clipped: count >= k_max,
            sum: SignatureSum::new(active_hidden),
        })
    }

    pub fn degree(&self) -> usize {
        self.scheduled.len()
    }

    /// Exact multiplicity if the counter did not saturate.
    pub fn exact_multiplicity(&self) -> Option<usize> {
        (!self.clipped).then_some(self.reported_multiplicity)
    }

    /// Oracle-side ground truth. Not for decoder or estimator logic.
    pub fn active_hidden(&self) -> &[UserId] {
        self.sum.residual_members()
    }

    pub(crate) fn into_sum(self) -> (Vec<UserId>, usize, bool, SignatureSum) {
        (
            self.scheduled,
            self.reported_multiplicity,
            self.clipped,
            self.sum,
        )
    }
}

/// Outcome of one contention period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N_A")]
    pub n_a: usize,
    #[serde(rename = "N_R")]
    pub n_r: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    #[serde(rename = "f_RE")]
    pub f_re: f64,
    #[serde(rename = "f_RA")]
    pub f_ra: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "delta_nE")]
    pub delta_ne: f64,
    #[serde(skip)]
    pub abs_delta_ne: f64,
    #[serde(skip)]
    pub truncated: bool,
}

impl RunRecord {
    /// Derives the ratio fields from the raw counts.
    ///
    /// `f_RE` uses `max(N_E, 1)` in the denominator; with no active users
    /// `f_RA` is 1 and the estimation error is taken relative to 1.
    #[allow(clippy::too_many_arguments)]
    pub fn from_counts(
        seed: u64,
        k: usize,
        beta: f64,
        m: usize,
        n_a: usize,
        n_r: usize,
        n_e: usize,
        truncated: bool,
    ) -> Self {
        let f_re = if n_e == 0 && n_r == 0 {
            1.0
        } else {
            n_r as f64 / n_e.max(1) as f64
        };
        let f_ra = if n_a == 0 {
            1.0
        } else {
            n_r as f64 / n_a as f64
        };
        let denom = n_a.max(1) as f64;
        let delta_ne = (n_e as f64 - n_a as f64) / denom;
        Self {
            seed,
            k,
            beta,
            m,
            n_a,
            n_r,
            n_e,
            f_re,
            f_ra,
            t: n_r as f64 / (m as f64 * k as f64),
            delta_ne,
            abs_delta_ne: delta_ne.abs(),
            truncated,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, p_a: f64, omega: DegreeDistribution) -> SystemConfig {
        SystemConfig::new(n, p_a, 1, 1, omega).unwrap()
    }

    #[test]
    fn degree_distribution_rejects_bad_support() {
        assert!(DegreeDistribution::new(vec![]).is_err());
        assert!(DegreeDistribution::new(vec![(0, 1.0)]).is_err());
        assert!(DegreeDistribution::new(vec![(3, 0.5), (2, 0.5)]).is_err());
        assert!(DegreeDistribution::new(vec![(2, 0.5), (3, 0.4)]).is_err());
        assert!(DegreeDistribution::new(vec![(2, -0.1), (3, 1.1)]).is_err());
        assert!(DegreeDistribution::new(vec![(2, 0.25), (5, 0.75)]).is_ok());
    }

    #[test]
    fn config_invariants() {
        let om = DegreeDistribution::constant(5).unwrap();
        assert!(SystemConfig::new(10, 0.0, 1, 1, om.clone()).is_err());
        assert!(SystemConfig::new(10, 1.0, 1, 1, om.clone()).is_err());
        assert!(SystemConfig::new(10, 0.2, 3, 2, om.clone()).is_err());
        assert!(SystemConfig::new(10, 0.2, 0, 2, om.clone()).is_err());
        assert!(SystemConfig::new(4, 0.2, 1, 2, om.clone()).is_err());
        let c = SystemConfig::new(1000, 0.2, 2, 10, om).unwrap();
        assert_eq!(c.alpha(), 200.0);
    }

    #[test]
    fn config_json_schema() {
        let c = SystemConfig::from_json_str(
            r#"{"N": 1000, "p_A": 0.2, "K": 2, "K_max": 10, "omega": [[21, 1.0]]}"#,
        )
        .unwrap();
        assert_eq!(c.n, 1000);
        assert_eq!(c.k_max, 10);
        assert_eq!(c.omega.max_degree(), 21);
        let back: SystemConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(SystemConfig::from_json_str(
            r#"{"N": 10, "p_A": 0.2, "K": 2, "K_max": 1, "omega": [[2, 1.0]]}"#
        )
        .is_err());
    }

    #[test]
    fn prior_support_and_value() {
        let c = cfg(1000, 0.2, DegreeDistribution::constant(1).unwrap());
        assert!(activation_prior_pmf(1001, &c, PriorForm::Binomial).is_err());
        let p = activation_prior_pmf(200, &c, PriorForm::Binomial).unwrap();
        assert!((p - 0.0315).abs() < 5e-5, "{p}");
        let total: f64 = (0..=1000)
            .map(|n| activation_prior_pmf(n, &c, PriorForm::Binomial).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn prior_poisson_close_to_binomial() {
        let c = cfg(1000, 0.2, DegreeDistribution::constant(1).unwrap());
        let tv: f64 = (0..=1000)
            .map(|n| {
                (activation_prior_pmf(n, &c, PriorForm::Binomial).unwrap()
                    - activation_prior_pmf(n, &c, PriorForm::Poisson).unwrap())
                .abs()
            })
            .sum::<f64>()
            / 2.0;
        // frozen from an independent scipy evaluation: 0.0539375
        assert!((tv - 0.053_937_5).abs() < 1e-5, "{tv}");
    }

    #[test]
    fn conditional_pmf_cases() {
        assert!(conditional_active_pmf(3, 2, 5, 10).is_err());
        assert_eq!(conditional_active_pmf(3, 4, 2, 10).unwrap(), 0.0);
        assert!((conditional_active_pmf(1, 2, 3, 6).unwrap() - 0.6).abs() < 1e-12);
        for d_a in 0..=6 {
            let p = conditional_active_pmf(d_a, 6, 4, 6).unwrap();
            let want = if d_a == 4 { 1.0 } else { 0.0 };
            assert!((p - want).abs() < 1e-12);
        }
        // N - n < d_S - d_A branch
        assert_eq!(conditional_active_pmf(0, 3, 5, 6).unwrap(), 0.0);
    }

    #[test]
    fn user_degree_pmf_cases() {
        assert!((user_degree_pmf(0, 300, 15.0, 1000) - (-4.5f64).exp()).abs() < 1e-15);
        assert_eq!(user_degree_pmf(0, 0, 15.0, 1000), 1.0);
        assert_eq!(user_degree_pmf(3, 0, 15.0, 1000), 0.0);
    }

    #[test]
    fn slot_observation_flags() {
        let obs = SlotObservation::new(0, vec![1, 2, 3, 4], vec![], 2).unwrap();
        assert_eq!(obs.reported_multiplicity, 0);
        assert!(!obs.clipped);
        let obs = SlotObservation::new(0, (1..=10).collect(), (1..=5).collect(), 2).unwrap();
        assert_eq!(obs.reported_multiplicity, 2);
        assert!(obs.clipped);
        let obs = SlotObservation::new(0, (1..=10).collect(), (1..=2).collect(), 2).unwrap();
        assert!(
            obs.clipped,
            "equality with K_max is indistinguishable from overflow"
        );
        assert!(SlotObservation::new(0, vec![1, 2], vec![3], 2).is_err());
        assert!(SlotObservation::new(0, vec![1, 1], vec![], 2).is_err());
    }

    #[test]
    fn run_record_ratios() {
        let r = RunRecord::from_counts(7, 2, 21.0, 100, 200, 164, 198, false);
        assert!((r.t - 0.82).abs() < 1e-12);
        assert!((r.f_ra - 0.82).abs() < 1e-12);
        assert!((r.delta_ne + 0.01).abs() < 1e-12);
        let z = RunRecord::from_counts(7, 2, 21.0, 10, 0, 0, 0, false);
        assert_eq!(z.f_re, 1.0);
        assert_eq!(z.t, 0.0);
    }
}
