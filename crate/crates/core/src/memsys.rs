//! Minimal data-cache model for the hit/miss probe channel.
//!
//! The cache is unbounded and fully precise: a line stays resident until it
//! is explicitly flushed, so a probe's hit/miss depends only on demand
//! accesses and prefetch fills, never on capacity evictions.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const LINE_BYTES: u64 = 64;

pub fn line_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillOrigin {
    Demand,
    Prefetch,
}

/// Set of resident 64-byte lines, each remembering what filled it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cache {
    lines: BTreeMap<u64, FillOrigin>,
}

impl Cache {
    pub fn new() -> Self {
        Cache::default()
    }

    /// Demand access. Returns `true` on a hit. A miss fills the line with
    /// origin `Demand`; a hit leaves the recorded fill origin alone.
    pub fn access(&mut self, addr: u64) -> bool {
        let line = line_of(addr);
        if self.lines.contains_key(&line) {
            true
        } else {
            self.lines.insert(line, FillOrigin::Demand);
            false
        }
    }

    /// Fill from the prefetcher. No-op if the line is already resident.
    pub fn prefetch_fill(&mut self, addr: u64) {
        self.lines.entry(line_of(addr)).or_insert(FillOrigin::Prefetch);
    }

    pub fn flush(&mut self, addr: u64) {
        self.lines.remove(&line_of(addr));
    }

    pub fn flush_all(&mut self) {
        self.lines.clear();
    }

    pub fn is_resident(&self, addr: u64) -> bool {
        self.lines.contains_key(&line_of(addr))
    }

    pub fn origin(&self, addr: u64) -> Option<FillOrigin> {
        self.lines.get(&line_of(addr)).copied()
    }

    pub fn resident_lines(&self) -> usize {
        self.lines.len()
    }
}
