//! Iterative resolution of stored signature sums.
//!
//! The decoder sees, per slot, the scheduled users, the reported multiplicity
//! and the clipped flag. Hidden identities are only revealed through
//! [`SignatureSum::try_decode`], which succeeds once at most `K` signatures
//! remain in the sum. A successful decode resolves those users, and every
//! other replica of a resolved user is cancelled from the slots that schedule
//! it; the touched slots are re-examined until nothing changes.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SignatureSum, SlotObservation, UserId};

/// One slot decoded during ingestion (`iteration` 0) or peeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionEvent {
    pub slot: usize,
    /// Users whose signatures this decode revealed (possibly none).
    pub resolved: Vec<UserId>,
    pub iteration: usize,
}

/// A slot whose original active multiplicity became exactly known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactMultiplicity {
    pub slot: usize,
    pub degree: usize,
    pub multiplicity: usize,
}

#[derive(Debug, Clone)]
struct SlotState {
    slot_index: usize,
    scheduled: Vec<UserId>,
    sum: SignatureSum,
    cancelled: usize,
    reported: usize,
    clipped: bool,
    resolved: bool,
}

#[derive(Debug, Clone)]
pub struct ResolutionState {
    k: usize,
    slots: Vec<SlotState>,
    position: HashMap<usize, usize>,
    user_slots: HashMap<UserId, Vec<usize>>,
    resolved_active: Vec<UserId>,
    resolved_set: HashSet<UserId>,
    known_inactive: HashSet<UserId>,
    pending: VecDeque<(usize, usize)>,
    queued: Vec<bool>,
    newly_exact: Vec<ExactMultiplicity>,
}

impl ResolutionState {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "detector bound must be positive");
        Self {
            k,
            slots: Vec::new(),
            position: HashMap::new(),
            user_slots: HashMap::new(),
            resolved_active: Vec::new(),
            resolved_set: HashSet::new(),
            known_inactive: HashSet::new(),
            pending: VecDeque::new(),
            queued: Vec::new(),
            newly_exact: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Stores a slot and attempts to decode it right away.
    ///
    /// Replicas of users resolved earlier are cancelled on arrival. Slots
    /// touched by a successful decode are queued for [`peel`](Self::peel).
    pub fn ingest(&mut self, obs: SlotObservation) -> Result<Option<ResolutionEvent>> {
        let slot_index = obs.slot_index;
        if self.position.contains_key(&slot_index) {
            return Err(Error::Usage(format!("slot {slot_index} ingested twice")));
        }
        let (scheduled, reported, clipped, mut sum) = obs.into_sum();
        let pos = self.slots.len();
        let mut cancelled = 0;
        for &u in &scheduled {
            self.user_slots.entry(u).or_default().push(pos);
            if self.resolved_set.contains(&u) {
                let present = sum.cancel(u);
                debug_assert!(present, "a resolved user transmits in every scheduled slot");
                cancelled += 1;
            }
        }
        if !clipped {
            self.newly_exact.push(ExactMultiplicity {
                slot: slot_index,
                degree: scheduled.len(),
                multiplicity: reported,
            });
        }
        self.position.insert(slot_index, pos);
        self.slots.push(SlotState {
            slot_index,
            scheduled,
            sum,
            cancelled,
            reported,
            clipped,
            resolved: false,
        });
        self.queued.push(false);
        Ok(self.try_resolve(pos, 0))
    }

    /// Drains the work queue in FIFO order until no slot changes.
    pub fn peel(&mut self) -> Vec<ResolutionEvent> {
        let mut events = Vec::new();
        while let Some((pos, wave)) = self.pending.pop_front() {
            self.queued[pos] = false;
            events.extend(self.try_resolve(pos, wave));
        }
        events
    }

    /// Like [`peel`](Self::peel), but picks the next queued slot at random.
    pub fn peel_random_order<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<ResolutionEvent> {
        let mut events = Vec::new();
        while !self.pending.is_empty() {
            let i = rng.gen_range(0..self.pending.len());
            let (pos, wave) = self.pending.swap_remove_back(i).expect("index in range");
            self.queued[pos] = false;
            events.extend(self.try_resolve(pos, wave));
        }
        events
    }

    fn try_resolve(&mut self, pos: usize, wave: usize) -> Option<ResolutionEvent> {
        let slot = &mut self.slots[pos];
        if slot.resolved {
            return None;
        }
        let revealed = slot.sum.try_decode(self.k)?.to_vec();
        slot.resolved = true;
        let slot_index = slot.slot_index;
        if slot.clipped {
            self.newly_exact.push(ExactMultiplicity {
                slot: slot_index,
                degree: slot.scheduled.len(),
                multiplicity: slot.cancelled + revealed.len(),
            });
        }
        for &u in &revealed {
            if !self.resolved_set.insert(u) {
                continue;
            }
            self.resolved_active.push(u);
            self.known_inactive.remove(&u);
            for &other in &self.user_slots[&u] {
                let s = &mut self.slots[other];
                if s.sum.cancel(u) {
                    s.cancelled += 1;
                }
                if !s.resolved && !self.queued[other] {
                    self.queued[other] = true;
                    self.pending.push_back((other, wave + 1));
                }
            }
        }
        for &u in &self.slots[pos].scheduled {
            if !self.resolved_set.contains(&u) {
                self.known_inactive.insert(u);
            }
        }
        Some(ResolutionEvent {
            slot: slot_index,
            resolved: revealed,
            iteration: wave,
        })
    }

    /// `(slot_index, |A_j|)` for every slot whose original multiplicity is
    /// exactly known: unclipped slots, and clipped slots once decoded.
    pub fn exact_multiplicities(&self) -> Vec<(usize, usize)> {
        self.slots
            .iter()
            .filter_map(|s| match (s.clipped, s.resolved) {
                (false, _) => Some((s.slot_index, s.reported)),
                (true, true) => Some((s.slot_index, s.cancelled)),
                (true, false) => None,
            })
            .collect()
    }

    /// Multiplicities that became exact since the last call.
    pub fn take_newly_exact(&mut self) -> Vec<ExactMultiplicity> {
        std::mem::take(&mut self.newly_exact)
    }

    /// Resolved active users in resolution order.
    pub fn resolved_active(&self) -> &[UserId] {
        &self.resolved_active
    }

    pub fn n_resolved(&self) -> usize {
        self.resolved_active.len()
    }

    pub fn is_resolved(&self, user: UserId) -> bool {
        self.resolved_set.contains(&user)
    }

    pub fn known_inactive(&self) -> &HashSet<UserId> {
        &self.known_inactive
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn is_slot_resolved(&self, slot_index: usize) -> Option<bool> {
        self.position
            .get(&slot_index)
            .map(|&p| self.slots[p].resolved)
    }

    /// Oracle-side bookkeeping of a slot: `(cancelled_count, residual ids)`.
    pub fn slot_residual(&self, slot_index: usize) -> Option<(usize, &[UserId])> {
        self.position.get(&slot_index).map(|&p| {
            let s = &self.slots[p];
            (s.cancelled, s.sum.residual_members())
        })
    }
}

/// One JSON object per event: `{"slot": j, "resolved": [ids], "iteration": l}`.
pub fn write_events_jsonl<W: Write>(events: &[ResolutionEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
