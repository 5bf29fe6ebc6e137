//! IP-stride prefetcher model.
//!
//! The prefetcher keeps a small table of entries keyed by the 8 least
//! significant bits of the load instruction's address. Each entry tracks the
//! last requested data address, the stride between consecutive requests and a
//! saturating confidence counter. A load whose stride repeats raises the
//! confidence; once the confidence reaches 2 the load triggers a prefetch of
//! `requested_address + stride`. A stride mismatch resets the confidence to 1
//! (after the mismatching load itself had a chance to trigger with the old
//! stride). Replacement is exact LRU.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Default number of table entries.
pub const DEFAULT_CAPACITY: usize = 24;

/// Page size used by the TLB residency gate.
pub const PAGE_BYTES: u64 = 4096;

/// Entry-matching key: the 8 least significant bits of a load instruction's
/// address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IpTag(pub u8);

impl IpTag {
    pub fn of(ip: u64) -> Self {
        IpTag((ip & 0xff) as u8)
    }
}

/// The entry-matching key of a load instruction address.
pub fn tag_of(ip: u64) -> IpTag {
    IpTag::of(ip)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    tag: IpTag,
    last_address: u64,
    /// `None` until a second load with the same tag establishes a distance.
    stride: Option<i64>,
    /// 0..=3, saturating at 3.
    confidence: u8,
}

/// Outcome of a single observed load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchDecision {
    pub triggered: bool,
    /// Present iff `triggered`; equals the requested address plus the stride
    /// the entry held before this load updated it.
    pub prefetch_address: Option<u64>,
}

impl PrefetchDecision {
    pub fn none() -> Self {
        PrefetchDecision { triggered: false, prefetch_address: None }
    }

    fn fire(address: u64) -> Self {
        PrefetchDecision { triggered: true, prefetch_address: Some(address) }
    }
}

/// One row of a table snapshot, ordered by recency (`lru_rank` 0 is the most
/// recently used entry).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySnapshot {
    pub tag: u8,
    pub last_address: u64,
    pub stride: Option<i64>,
    pub confidence: u8,
    pub lru_rank: usize,
}

/// The prefetcher table plus the TLB residency gate.
///
/// Entries are stored most-recently-used first, so an entry's position is its
/// LRU rank. A matched tag always reuses its entry, which keeps tags pairwise
/// distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefetcher {
    entries: Vec<Entry>,
    capacity: usize,
    tlb_pages: BTreeSet<u64>,
    tlb_always_resident: bool,
}

impl Default for Prefetcher {
    fn default() -> Self {
        Prefetcher::new(DEFAULT_CAPACITY)
    }
}

impl Prefetcher {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "prefetcher capacity must be positive");
        Prefetcher {
            entries: Vec::with_capacity(capacity),
            capacity,
            tlb_pages: BTreeSet::new(),
            tlb_always_resident: true,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// When set to `false`, loads to pages that were never marked resident
    /// leave the table untouched and never trigger.
    pub fn set_tlb_always_resident(&mut self, always: bool) {
        self.tlb_always_resident = always;
    }

    pub fn mark_page_resident(&mut self, addr: u64) {
        self.tlb_pages.insert(addr / PAGE_BYTES);
    }

    fn page_resident(&self, addr: u64) -> bool {
        self.tlb_always_resident || self.tlb_pages.contains(&(addr / PAGE_BYTES))
    }

    /// Feeds one load through the training/trigger/replacement state machine.
    ///
    /// On a tag match the stride-equivalence increment is applied first, the
    /// trigger check (`confidence >= 2`) runs on the incremented value, and a
    /// stride mismatch afterwards rewrites the stride and resets the
    /// confidence to 1. The prefetch target always uses the stride trained
    /// before this load. A tag miss allocates a fresh entry (confidence 0,
    /// no stride), evicting the LRU entry when the table is full.
    pub fn observe_load(&mut self, ip: u64, addr: u64) -> PrefetchDecision {
        if !self.page_resident(addr) {
            return PrefetchDecision::none();
        }

        let tag = tag_of(ip);
        let Some(pos) = self.entries.iter().position(|e| e.tag == tag) else {
            if self.entries.len() == self.capacity {
                self.entries.pop();
            }
            self.entries.insert(
                0,
                Entry { tag, last_address: addr, stride: None, confidence: 0 },
            );
            return PrefetchDecision::none();
        };

        let mut entry = self.entries.remove(pos);
        let old_stride = entry.stride;
        let new_stride = addr.wrapping_sub(entry.last_address) as i64;
        let stride_matches = old_stride == Some(new_stride);

        if stride_matches {
            entry.confidence = (entry.confidence + 1).min(3);
        }
        let decision = match old_stride {
            Some(stride) if entry.confidence >= 2 => {
                PrefetchDecision::fire(addr.wrapping_add(stride as u64))
            }
            _ => PrefetchDecision::none(),
        };
        if !stride_matches {
            entry.stride = Some(new_stride);
            entry.confidence = 1;
        }
        entry.last_address = addr;
        self.entries.insert(0, entry);
        decision
    }

    /// Pure read of the table, ordered by `lru_rank`.
    pub fn snapshot(&self) -> Vec<EntrySnapshot> {
        self.entries
            .iter()
            .enumerate()
            .map(|(rank, e)| EntrySnapshot {
                tag: e.tag.0,
                last_address: e.last_address,
                stride: e.stride,
                confidence: e.confidence,
                lru_rank: rank,
            })
            .collect()
    }

    /// Test/scenario hook: overwrite the entry for `tag`, or allocate it as
    /// MRU, without running the state machine.
    pub fn plant_entry(&mut self, tag: IpTag, last_address: u64, stride: Option<i64>, confidence: u8) {
        assert!(confidence <= 3, "confidence saturates at 3");
        if let Some(pos) = self.entries.iter().position(|e| e.tag == tag) {
            self.entries.remove(pos);
        } else if self.entries.len() == self.capacity {
            self.entries.pop();
        }
        self.entries.insert(0, Entry { tag, last_address, stride, confidence });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_masks_low_eight_bits() {
        assert_eq!(tag_of(0x1151), IpTag(0x51));
        assert_eq!(tag_of(0x0000), IpTag(0x00));
        // High bits never matter, which is why 256 candidate tags suffice to
        // alias any victim load.
        assert_eq!(tag_of(0x7f_1234_5651), IpTag(0x51));
    }

    #[test]
    fn training_triggers_on_third_load() {
        let mut p = Prefetcher::default();
        assert_eq!(p.observe_load(0x1151, 0x1000), PrefetchDecision::none());
        assert_eq!(p.observe_load(0x1151, 0x1100), PrefetchDecision::none());
        let third = p.observe_load(0x1151, 0x1200);
        assert_eq!(third, PrefetchDecision::fire(0x1300));
        // The probe continues the stride and keeps prefetching ahead.
        let probe = p.observe_load(0x1151, 0x1300);
        assert_eq!(probe, PrefetchDecision::fire(0x1400));
    }

    #[test]
    fn single_load_allocates_cold_entry() {
        let mut p = Prefetcher::default();
        let d = p.observe_load(0xdead_beef, 0x4_2000);
        assert_eq!(d, PrefetchDecision::none());
        let snap = p.snapshot();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap[0].tag, 0xef);
        assert_eq!(snap[0].confidence, 0);
        assert_eq!(snap[0].stride, None);
        assert_eq!(snap[0].last_address, 0x4_2000);
    }

    #[test]
    fn mismatching_load_triggers_with_old_stride_then_resets() {
        let mut p = Prefetcher::default();
        // Saturate an entry at stride 0x100, last_address 0x1300.
        for addr in [0x1000u64, 0x1100, 0x1200, 0x1300] {
            p.observe_load(0x1151, addr);
        }
        assert_eq!(p.snapshot()[0].confidence, 3);

        // The victim's load matches the tag but not the stride: it still
        // triggers (confidence was >= 2) using the trained stride, then the
        // entry is retrained with confidence 1.
        let d = p.observe_load(0xffff_1151, 0x9000);
        assert_eq!(d, PrefetchDecision::fire(0x9100));
        let snap = p.snapshot();
        assert_eq!(snap[0].stride, Some(0x9000 - 0x1300));
        assert_eq!(snap[0].confidence, 1);
        assert_eq!(snap[0].last_address, 0x9000);
    }

    #[test]
    fn snapshot_orders_by_recency_and_respects_capacity() {
        assert!(Prefetcher::default().snapshot().is_empty());

        let mut p = Prefetcher::default();
        p.observe_load(0x10, 0x8000);
        let snap = p.snapshot();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap[0].lru_rank, 0);

        // 30 distinct tags through a 24-entry table: the survivors are the
        // last 24 tags, most recent first.
        let mut p = Prefetcher::default();
        for k in 0u64..30 {
            p.observe_load(k, 0x10_0000 + k * 0x1000);
        }
        let snap = p.snapshot();
        assert_eq!(snap.len(), 24);
        let expected: Vec<u8> = (6u8..30).rev().collect();
        let got: Vec<u8> = snap.iter().map(|e| e.tag).collect();
        assert_eq!(got, expected);
        for (rank, e) in snap.iter().enumerate() {
            assert_eq!(e.lru_rank, rank);
        }
    }

    #[test]
    fn tlb_gate_blocks_untranslated_pages() {
        let mut p = Prefetcher::default();
        p.set_tlb_always_resident(false);
        for addr in [0x1000u64, 0x1100, 0x1200] {
            assert_eq!(p.observe_load(0x1151, addr), PrefetchDecision::none());
        }
        assert!(p.is_empty());

        for addr in [0x1000u64, 0x1100, 0x1200] {
            p.mark_page_resident(addr);
        }
        p.observe_load(0x1151, 0x1000);
        p.observe_load(0x1151, 0x1100);
        assert_eq!(p.observe_load(0x1151, 0x1200), PrefetchDecision::fire(0x1300));
    }

    #[test]
    fn zero_stride_saturates_and_fires_noop_prefetch() {
        let mut p = Prefetcher::default();
        p.observe_load(0x42, 0x7000);
        p.observe_load(0x42, 0x7000);
        let d = p.observe_load(0x42, 0x7000);
        assert_eq!(d, PrefetchDecision::fire(0x7000));
    }

    #[test]
    fn matched_tag_reuses_entry() {
        let mut p = Prefetcher::default();
        p.observe_load(0x0051, 0x1000);
        p.observe_load(0xff51, 0x2000);
        assert_eq!(p.len(), 1);
    }
}
