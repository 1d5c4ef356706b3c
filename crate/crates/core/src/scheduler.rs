//! AP-side transmission schedules.
//!
//! Slot `j` of a schedule is a pure function of `(seed, j, Ω, N)`: its degree
//! and user subset are drawn from a ChaCha stream keyed by the master seed
//! and selected by the slot index, so any slot can be regenerated on its own
//! and slots can be generated in parallel.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{DegreeDistribution, SystemConfig, UserId};

/// Draws one slot degree from Ω.
pub fn draw_slot_degree<R: Rng + ?Sized>(omega: &DegreeDistribution, rng: &mut R) -> usize {
    if let [(d, _)] = omega.support() {
        return *d;
    }
    omega.quantile(rng.gen::<f64>())
}

/// Uniform random `count`-subset of `1..=population`, returned sorted.
///
/// Partial Fisher-Yates over a virtual identity permutation; only swapped
/// positions are materialized, so the cost is O(count).
pub fn sample_users<R: Rng + ?Sized>(population: usize, count: usize, rng: &mut R) -> Vec<UserId> {
    assert!(
        count <= population,
        "cannot draw {count} of {population} users"
    );
    let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(2 * count);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let j = rng.gen_range(i..population);
        let at_j = *swapped.get(&j).unwrap_or(&j);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        swapped.insert(j, at_i);
        out.push(at_j as UserId + 1);
    }
    out.sort_unstable();
    out
}

/// RNG stream dedicated to slot `slot_index` under `seed`.
pub fn slot_rng(seed: u64, slot_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot_index as u64);
    rng
}

/// Slot contents for `(seed, slot_index)`; independent of any other slot.
pub fn generate_slot(seed: u64, slot_index: usize, cfg: &SystemConfig) -> ScheduledSlot {
    let mut rng = slot_rng(seed, slot_index);
    let degree = draw_slot_degree(&cfg.omega, &mut rng);
    ScheduledSlot {
        j: slot_index,
        users: sample_users(cfg.n, degree, &mut rng),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSlot {
    pub j: usize,
    pub users: Vec<UserId>,
}

/// Append-only schedule of a rateless contention period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    seed: u64,
    slots: Vec<ScheduledSlot>,
}

impl Schedule {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            slots: Vec::new(),
        }
    }

    /// First `count` slots, generated concurrently and merged in index order.
    pub fn generate(seed: u64, cfg: &SystemConfig, count: usize) -> Self {
        use rayon::prelude::*;
        let slots = (0..count)
            .into_par_iter()
            .map(|j| generate_slot(seed, j, cfg))
            .collect();
        Self { seed, slots }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slots(&self) -> &[ScheduledSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends the next slot and returns it.
    pub fn extend(&mut self, cfg: &SystemConfig) -> &ScheduledSlot {
        let slot = generate_slot(self.seed, self.slots.len(), cfg);
        self.slots.push(slot);
        self.slots.last().expect("just pushed")
    }

    /// Replica count per user; entry `i` belongs to user `i + 1`.
    pub fn user_degrees(&self, population: usize) -> Vec<usize> {
        let mut degrees = vec![0usize; population];
        for slot in &self.slots {
            for &u in &slot.users {
                degrees[u as usize - 1] += 1;
            }
        }
        degrees
    }

    /// One JSON object per slot: `{"j": int, "users": [int...]}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for slot in &self.slots {
            serde_json::to_writer(&mut out, slot)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, beta: usize) -> SystemConfig {
        SystemConfig::new(n, 0.2, 1, 1, DegreeDistribution::constant(beta).unwrap()).unwrap()
    }

    #[test]
    fn constant_degree_always_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let om = DegreeDistribution::constant(15).unwrap();
        assert!((0..1000).all(|_| draw_slot_degree(&om, &mut rng) == 15));
        let om = DegreeDistribution::constant(1).unwrap();
        assert!((0..1000).all(|_| draw_slot_degree(&om, &mut rng) == 1));
    }

    #[test]
    fn full_population_slot() {
        let s = generate_slot(3, 0, &cfg(12, 12));
        assert_eq!(s.users, (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn slots_have_distinct_users_and_right_size() {
        let c = cfg(50, 20);
        let sched = Schedule::generate(9, &c, 200);
        for s in sched.slots() {
            assert_eq!(s.users.len(), 20);
            assert!(s.users.windows(2).all(|w| w[0] < w[1]));
            assert!(s.users.iter().all(|&u| (1..=50).contains(&u)));
        }
    }

    #[test]
    fn extend_matches_parallel_generation() {
        let c = cfg(100, 7);
        let mut a = Schedule::new(42);
        for _ in 0..30 {
            a.extend(&c);
        }
        assert_eq!(a, Schedule::generate(42, &c, 30));
        assert_ne!(a, Schedule::generate(43, &c, 30));
    }

    #[test]
    fn degree_identities() {
        assert!(Schedule::new(0).user_degrees(10).iter().all(|&d| d == 0));
        let c = cfg(1000, 15);
        let sched = Schedule::generate(5, &c, 300);
        let degrees = sched.user_degrees(1000);
        assert_eq!(degrees.iter().sum::<usize>(), 300 * 15);
        let mean = degrees.iter().sum::<usize>() as f64 / 1000.0;
        assert!((mean - 4.5).abs() < 1e-12);
    }

    #[test]
    fn jsonl_export() {
        let c = cfg(10, 3);
        let sched = Schedule::generate(1, &c, 2);
        let mut buf = Vec::new();
        sched.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: ScheduledSlot = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back, sched.slots()[1]);
        assert!(lines[0].starts_with("{\"j\":0,\"users\":["));
    }
}
