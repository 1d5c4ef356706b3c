//! Batch activation and per-slot channel observations.
//!
//! Physical-layer network coding over the Gaussian MAC is replaced by a
//! lossless integer-adder channel: the AP obtains the signature sum of the
//! active scheduled users and an indicator count saturated at `K_max`.

use rand::Rng;

use crate::model::{SlotObservation, SystemConfig, UserId};
use crate::scheduler::ScheduledSlot;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationOutcome {
    active: Vec<UserId>,
    mask: Vec<bool>,
}

impl ActivationOutcome {
    pub fn from_active(population: usize, mut active: Vec<UserId>) -> Self {
        active.sort_unstable();
        active.dedup();
        let mut mask = vec![false; population + 1];
        for &u in &active {
            mask[u as usize] = true;
        }
        Self { active, mask }
    }

    /// Active user ids, sorted.
    pub fn active(&self) -> &[UserId] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, user: UserId) -> bool {
        self.mask.get(user as usize).copied().unwrap_or(false)
    }
}

/// Activates each user independently with probability `p_A`.
pub fn activate<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ActivationOutcome {
    let active = (1..=cfg.n as UserId)
        .filter(|_| rng.gen_bool(cfg.p_a))
        .collect();
    ActivationOutcome::from_active(cfg.n, active)
}

/// Channel output of one scheduled slot.
pub fn observe_slot(
    slot: &ScheduledSlot,
    outcome: &ActivationOutcome,
    cfg: &SystemConfig,
) -> SlotObservation {
    let active_hidden = slot
        .users
        .iter()
        .copied()
        .filter(|&u| outcome.is_active(u))
        .collect();
    SlotObservation::new(slot.j, slot.users.clone(), active_hidden, cfg.k_max)
        .expect("scheduled users are distinct and the active set is a subset")
}

/// Approximate signature length `K·log2(N)` bits of a K-out-of-N code.
pub fn signature_length_bits(k: usize, population: usize) -> f64 {
    k as f64 * (population as f64).log2()
}
