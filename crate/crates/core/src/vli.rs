//! Two-round load injection at context switches.
//!
//! A single round of injected loads cannot guarantee erasure: an injected
//! load may happen to match a trained entry's tag and satisfy
//! `load_address - last_address = stride`, in which case the entry keeps its
//! trained effectiveness. The two-round scheme first forces every table tag
//! into a known set of 24, then injects 24 loads with 24 fresh tags so each
//! allocation must evict one of the now-known entries. The post-injection
//! table is therefore independent of whatever state the switched-out process
//! left behind.

use crate::prefetcher::{tag_of, IpTag, PrefetchDecision, Prefetcher, PAGE_BYTES};
use crate::memsys::LINE_BYTES;
use thiserror::Error;

/// Spacing between consecutive injected-load instruction addresses. Coprime
/// with 256, so any run of at most 256 consecutive multiples yields pairwise
/// distinct tags, and deliberately unequal to the 64-byte data spacing so tag
/// and data arithmetic cannot be confused.
pub const TAG_STEP: u64 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("data page address {0:#x} is not 4 KiB aligned")]
    UnalignedDataPage(u64),
    #[error("capacity {0} needs {1} injected loads, which do not fit one 4 KiB page")]
    PageOverflow(usize, usize),
    #[error("capacity {0} needs more distinct tags than the 8-bit tag space holds")]
    TagSpaceExhausted(usize),
    #[error("capacity must be positive")]
    ZeroCapacity,
}

/// The crafted load sequence executed at the start of a context switch:
/// `2 * capacity` loads with pairwise distinct instruction-address tags, all
/// reading from one data page at 64-byte spacing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionPlan {
    /// Code base of the injection routine (aligned to 256 bytes in the
    /// reference layout, so tag k is exactly `k * TAG_STEP`).
    pub base_address: u64,
    /// Page holding the injected loads' data, marked TLB-resident up front.
    pub data_page: u64,
    /// `(ip, addr)` pairs in execution order; the first half is round 1, the
    /// second half round 2.
    pub loads: Vec<(u64, u64)>,
}

impl InjectionPlan {
    pub fn round_size(&self) -> usize {
        self.loads.len() / 2
    }

    pub fn round1(&self) -> &[(u64, u64)] {
        &self.loads[..self.round_size()]
    }

    pub fn round2(&self) -> &[(u64, u64)] {
        &self.loads[self.round_size()..]
    }

    pub fn round1_tags(&self) -> Vec<IpTag> {
        self.round1().iter().map(|&(ip, _)| tag_of(ip)).collect()
    }

    pub fn round2_tags(&self) -> Vec<IpTag> {
        self.round2().iter().map(|&(ip, _)| tag_of(ip)).collect()
    }
}

/// Builds the injection plan for a table of `capacity` entries.
pub fn make_plan_for_capacity(
    code_base: u64,
    data_page: u64,
    capacity: usize,
) -> Result<InjectionPlan, PlanError> {
    if capacity == 0 {
        return Err(PlanError::ZeroCapacity);
    }
    let total = 2 * capacity;
    if data_page % PAGE_BYTES != 0 {
        return Err(PlanError::UnalignedDataPage(data_page));
    }
    if total as u64 * LINE_BYTES > PAGE_BYTES {
        return Err(PlanError::PageOverflow(capacity, total));
    }
    if total > 256 {
        return Err(PlanError::TagSpaceExhausted(capacity));
    }
    let loads = (0..total as u64)
        .map(|k| (code_base.wrapping_add(k * TAG_STEP), data_page + k * LINE_BYTES))
        .collect();
    Ok(InjectionPlan { base_address: code_base, data_page, loads })
}

/// The default 24-entry plan: 24 + 24 loads with 48 distinct tags.
///
/// `data_page` must be 4 KiB aligned.
pub fn make_plan(code_base: u64, data_page: u64) -> InjectionPlan {
    make_plan_for_capacity(code_base, data_page, crate::prefetcher::DEFAULT_CAPACITY)
        .expect("default plan parameters are valid")
}

/// Runs the full two-round injection against `state`. The plan's data page is
/// marked TLB-resident first, mirroring the single-page confinement of the
/// injected loads. Returns the per-load decisions so a caller that models a
/// cache can apply the incidentally triggered prefetches.
pub fn inject(state: &mut Prefetcher, plan: &InjectionPlan) -> Vec<PrefetchDecision> {
    state.mark_page_resident(plan.data_page);
    plan.loads.iter().map(|&(ip, addr)| state.observe_load(ip, addr)).collect()
}

/// Applies only the first round. Exists to demonstrate why one round is not
/// enough; the real defense always runs both rounds.
pub fn inject_single_round(state: &mut Prefetcher, plan: &InjectionPlan) -> Vec<PrefetchDecision> {
    state.mark_page_resident(plan.data_page);
    plan.round1().iter().map(|&(ip, addr)| state.observe_load(ip, addr)).collect()
}

/// A concrete state that survives a single injection round.
///
/// The planted entry's tag equals round-1 tag 0 and its fields satisfy
/// `load_address - last_address = stride` for the first injected load, so the
/// injected load itself continues the training instead of disturbing it. The
/// returned probe `(ip, addr)` still triggers a prefetch derived from that
/// training after round 1 alone; the full two-round injection erases it.
pub fn single_round_counterexample() -> (Prefetcher, InjectionPlan, (u64, u64)) {
    let plan = make_plan(0x4000, 0x10000);
    let (ip0, addr0) = plan.loads[0];
    let stride = LINE_BYTES as i64;

    let mut state = Prefetcher::default();
    // Train the colliding entry to saturation: last_address ends one stride
    // short of the first injected load's data address.
    let attacker_ip = 0x7f00_0000_0a00 | u64::from(tag_of(ip0).0);
    for k in (1..=4).rev() {
        state.observe_load(attacker_ip, addr0 - k * LINE_BYTES);
    }
    debug_assert_eq!(state.snapshot()[0].confidence, 3);
    debug_assert_eq!(state.snapshot()[0].stride, Some(stride));

    let probe = (attacker_ip, addr0 + LINE_BYTES);
    (state, plan, probe)
}
