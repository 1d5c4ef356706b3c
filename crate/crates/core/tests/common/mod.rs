//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use scr_core::model::SlotObservation;

/// `ln n!` by direct summation.
pub fn ln_fact(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

pub fn ln_binom(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

/// Normalized posterior over `n = 0..=N` from scratch: binomial prior times
/// a hypergeometric likelihood per `(d, a)` pair.
pub fn exhaustive_posterior(population: usize, p_a: f64, pairs: &[(usize, usize)]) -> Vec<f64> {
    let log: Vec<f64> = (0..=population)
        .map(|n| {
            let mut s = ln_binom(population, n)
                + n as f64 * p_a.ln()
                + (population - n) as f64 * (1.0 - p_a).ln();
            for &(d, a) in pairs {
                s += ln_binom(n, a) + ln_binom(population - n, d - a) - ln_binom(population, d);
            }
            s
        })
        .collect();
    let top = log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Draws `slots` hypergeometric observations `(d, a)` given `n` actives.
pub fn draw_evidence(
    rng: &mut impl Rng,
    population: usize,
    n: usize,
    slots: usize,
    max_d: usize,
) -> Vec<(usize, usize)> {
    (0..slots)
        .map(|_| {
            let d = rng.gen_range(1..=max_d.min(population));
            let a = rand::seq::index::sample(rng, population, d)
                .into_iter()
                .filter(|&u| u < n)
                .count();
            (d, a)
        })
        .collect()
}

/// A random bipartite instance: per-slot scheduled sets and the active set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub k: usize,
    pub k_max: usize,
    pub active: BTreeSet<u32>,
    pub slots: Vec<Vec<u32>>,
}

impl Instance {
    pub fn random(rng: &mut impl Rng, max_n: u32, max_m: usize) -> Self {
        let n = rng.gen_range(1..=max_n);
        let m = rng.gen_range(1..=max_m);
        let p = rng.gen_range(0.05..0.9);
        let active = (0..n).filter(|_| rng.gen_bool(p)).collect();
        let slots = (0..m)
            .map(|_| {
                let d = rng.gen_range(1..=n.min(8));
                rand::seq::index::sample(rng, n as usize, d as usize)
                    .into_iter()
                    .map(|u| u as u32)
                    .collect()
            })
            .collect();
        Self {
            k: rng.gen_range(1..=3),
            k_max: rng.gen_range(1..=5),
            active,
            slots,
        }
    }

    pub fn observations(&self) -> Vec<SlotObservation> {
        self.slots
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let hidden = s
                    .iter()
                    .copied()
                    .filter(|u| self.active.contains(u))
                    .collect();
                SlotObservation::new(j, s.clone(), hidden, self.k_max).unwrap()
            })
            .collect()
    }

    /// Brute-force fixed point: sweep every slot until no slot's residual
    /// active set is nonempty with at most K members.
    pub fn fixed_point(&self) -> BTreeSet<u32> {
        let mut resolved = BTreeSet::new();
        loop {
            let mut changed = false;
            for s in &self.slots {
                let residual: Vec<u32> = s
                    .iter()
                    .copied()
                    .filter(|u| self.active.contains(u) && !resolved.contains(u))
                    .collect();
                if !residual.is_empty() && residual.len() <= self.k {
                    resolved.extend(residual);
                    changed = true;
                }
            }
            if !changed {
                return resolved;
            }
        }
    }
}

/// `P[Bin(n, p) = j]` by direct evaluation.
pub fn binom_pmf(n: usize, j: usize, p: f64) -> f64 {
    if j > n {
        return 0.0;
    }
    (ln_binom(n, j) + j as f64 * p.ln() + (n - j) as f64 * (1.0 - p).ln()).exp()
}
