//! Static probe ids and the coverage bitmap.
//!
//! Probe ids live in a fixed space of [`PROBE_COUNT`] so coverage sets are
//! comparable across runs and builds of the same catalog.

use alloc::vec;
use alloc::vec::Vec;

pub const PROBE_COUNT: usize = 0x2000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coverage {
    words: Vec<u64>,
}

impl Default for Coverage {
    fn default() -> Self {
        Coverage { words: vec![0; PROBE_COUNT / 64] }
    }
}

impl Coverage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hit(&mut self, probe: u32) {
        let p = probe as usize % PROBE_COUNT;
        self.words[p / 64] |= 1 << (p % 64);
    }

    pub fn contains(&self, probe: u32) -> bool {
        let p = probe as usize % PROBE_COUNT;
        self.words[p / 64] & (1 << (p % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    /// Union in place; returns how many probes were new.
    pub fn merge(&mut self, other: &Coverage) -> usize {
        let mut new = 0;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            new += (b & !*a).count_ones() as usize;
            *a |= b;
        }
        new
    }

    /// Whether `other` has a probe this set lacks.
    pub fn lacks_any_of(&self, other: &Coverage) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| b & !a != 0)
    }

    pub fn probes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..PROBE_COUNT as u32).filter(|p| self.contains(*p))
    }
}

/// Probe id constructors. Each family owns a disjoint range.
pub mod probe {
    /// Interpreter handler for an opcode byte.
    pub fn opcode(op: u8) -> u32 {
        op as u32
    }

    pub fn helper_entry(id: u32) -> u32 {
        0x100 + (id & 0xff)
    }

    /// Helper-specific outcome `k` (< 8).
    pub fn helper_outcome(id: u32, k: u32) -> u32 {
        0x200 + (id & 0xff) * 8 + (k & 7)
    }

    /// Map operation `op` (< 8) on a map type with outcome `k` (< 8).
    pub fn map_op(map_type: u16, op: u32, k: u32) -> u32 {
        0xa00 + (map_type as u32 & 0x1f) * 64 + (op & 7) * 8 + (k & 7)
    }

    /// Element count of a map after a mutation, bucketed by log2.
    pub fn occupancy(map_type: u16, count: u64) -> u32 {
        let level = 64 - count.leading_zeros();
        0x1200 + (map_type as u32 & 0x1f) * 16 + level.min(15)
    }

    /// Element count of a map relative to its capacity, in quarters, with
    /// empty and full as their own classes.
    pub fn fill(map_type: u16, count: u64, capacity: u64) -> u32 {
        let class = match count {
            0 => 0,
            c if c >= capacity => 5,
            c => 1 + (c * 4 / capacity.max(1)).min(3) as u32,
        };
        0x1d00 + (map_type as u32 & 0x1f) * 8 + class
    }

    pub fn tail_depth(depth: u32) -> u32 {
        0x1400 + depth.min(63)
    }

    pub fn branch(op: u8, taken: bool) -> u32 {
        0x1500 + op as u32 * 2 + taken as u32
    }

    pub fn lock(class: u32, ctx: u32) -> u32 {
        0x1800 + (class & 0xf) * 4 + (ctx & 3)
    }

    /// Syscall command with outcome `k` (< 16).
    pub fn syscall(cmd: u32, k: u32) -> u32 {
        0x1900 + (cmd & 0xf) * 16 + (k & 0xf)
    }

    /// Sign and magnitude class of an ALU result.
    pub fn alu_result(op: u8, value: u64) -> u32 {
        let class = match value {
            0 => 0,
            v if (v as i64) < 0 => 1,
            v if v <= u32::MAX as u64 => 2,
            _ => 3,
        };
        0x1a00 + ((op >> 4) as u32) * 4 + class
    }

    /// Memory access by region kind, width and direction.
    pub fn mem_access(region_kind: u32, width: u32, store: bool) -> u32 {
        let w = match width {
            1 => 0,
            2 => 1,
            4 => 2,
            _ => 3,
        };
        0x1b00 + (region_kind & 0xf) * 8 + w * 2 + store as u32
    }

    /// Oracle-specific location for findings not tied to another probe.
    pub fn oracle(k: u32) -> u32 {
        0x1c00 + (k & 0xff)
    }
}
