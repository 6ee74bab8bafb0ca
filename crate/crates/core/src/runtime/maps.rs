//! Map storage and the operations shared by helpers and syscalls.
//!
//! Values never move once allocated: hash maps are preallocated with
//! `max_entries` value slots, so a pointer handed to a program stays valid
//! after the element is deleted, as with the kernel's preallocated maps.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::catalog::{MapSpecRequest, MapTypeId};

pub const NUM_CPUS: usize = 4;

pub const EPERM: i64 = 1;
pub const ENOENT: i64 = 2;
pub const E2BIG: i64 = 7;
pub const EAGAIN: i64 = 11;
pub const EFAULT: i64 = 14;
pub const EBUSY: i64 = 16;
pub const EEXIST: i64 = 17;
pub const EINVAL: i64 = 22;
pub const ENOSPC: i64 = 28;
pub const EOPNOTSUPP: i64 = 95;

pub const BPF_ANY: u64 = 0;
pub const BPF_NOEXIST: u64 = 1;
pub const BPF_EXIST: u64 = 2;

/// Size of the per-record header a ring buffer charges.
pub const RINGBUF_HDR: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashSlot {
    pub key: Vec<u8>,
    pub last_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub data: Vec<u8>,
    /// Reserved and neither submitted nor discarded.
    pub live: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Storage {
    /// ARRAY and CGROUP_STORAGE (a single value).
    Array { values: Vec<Vec<u8>> },
    PercpuArray { values: Vec<Vec<Vec<u8>>> },
    Hash { values: Vec<Vec<u8>>, slots: Vec<Option<HashSlot>>, index: BTreeMap<Vec<u8>, usize>, tick: u64, lru: bool },
    ProgArray { progs: Vec<Option<u32>> },
    Ringbuf { records: Vec<Record>, outstanding: u64, produced: u64 },
    Fifo { items: VecDeque<Vec<u8>>, lifo: bool },
    PerfEventArray { events: Vec<u64> },
    StackTrace { slots: Vec<Option<(u64, Vec<u8>)>> },
}

/// What an update did, for probes and for the seeded null-deref bug.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Inserted,
    Replaced,
    Evicted,
    /// `BPF_EXIST` on a key that is not present.
    MissingForExist,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MapInstance {
    pub id: u32,
    pub spec: MapSpecRequest,
    pub storage: Storage,
}

impl MapInstance {
    pub fn new(id: u32, spec: MapSpecRequest) -> Self {
        let vs = spec.value_size as usize;
        let n = spec.max_entries as usize;
        let storage = match spec.map_type {
            MapTypeId::Array => Storage::Array { values: vec![vec![0; vs]; n] },
            MapTypeId::CgroupStorage => Storage::Array { values: vec![vec![0; vs]; 1] },
            MapTypeId::PercpuArray => Storage::PercpuArray { values: vec![vec![vec![0; vs]; n]; NUM_CPUS] },
            MapTypeId::Hash | MapTypeId::LruHash => Storage::Hash {
                values: vec![vec![0; vs]; n],
                slots: vec![None; n],
                index: BTreeMap::new(),
                tick: 0,
                lru: spec.map_type == MapTypeId::LruHash,
            },
            MapTypeId::ProgArray => Storage::ProgArray { progs: vec![None; n] },
            MapTypeId::Ringbuf => Storage::Ringbuf { records: Vec::new(), outstanding: 0, produced: 0 },
            MapTypeId::Queue | MapTypeId::Stack => {
                Storage::Fifo { items: VecDeque::new(), lifo: spec.map_type == MapTypeId::Stack }
            }
            MapTypeId::PerfEventArray => Storage::PerfEventArray { events: vec![0; n] },
            MapTypeId::StackTrace => Storage::StackTrace { slots: vec![None; n] },
        };
        MapInstance { id, spec, storage }
    }

    /// Number of stored elements (ring buffers: outstanding bytes).
    pub fn occupancy(&self) -> u64 {
        match &self.storage {
            Storage::Array { values } => values.len() as u64,
            Storage::PercpuArray { values } => values.first().map_or(0, |v| v.len() as u64),
            Storage::Hash { index, .. } => index.len() as u64,
            Storage::ProgArray { progs } => progs.iter().filter(|p| p.is_some()).count() as u64,
            Storage::Ringbuf { produced, .. } => *produced,
            Storage::Fifo { items, .. } => items.len() as u64,
            Storage::PerfEventArray { events } => events.iter().sum(),
            Storage::StackTrace { slots } => slots.iter().filter(|s| s.is_some()).count() as u64,
        }
    }

    /// What `occupancy` counts up to, for maps that have a bound.
    pub fn capacity(&self) -> Option<u64> {
        match &self.storage {
            Storage::Array { .. } | Storage::PercpuArray { .. } | Storage::PerfEventArray { .. } => None,
            _ => Some(self.spec.max_entries as u64),
        }
    }

    fn array_index(&self, key: &[u8]) -> Option<usize> {
        let idx = u32::from_le_bytes(key.get(..4)?.try_into().ok()?) as usize;
        (idx < self.spec.max_entries as usize).then_some(idx)
    }

    /// Slot holding `key`'s value, for lookups.
    pub fn lookup(&mut self, key: &[u8]) -> Option<usize> {
        let idx = match self.spec.map_type {
            MapTypeId::Array | MapTypeId::PercpuArray => self.array_index(key),
            MapTypeId::CgroupStorage => Some(0),
            _ => None,
        };
        if idx.is_some() {
            return idx;
        }
        if let Storage::Hash { slots, index, tick, .. } = &mut self.storage {
            let slot = *index.get(key)?;
            *tick += 1;
            if let Some(s) = slots[slot].as_mut() {
                s.last_used = *tick;
            }
            return Some(slot);
        }
        None
    }

    /// Value bytes of `slot` as seen from `cpu`.
    pub fn value_mut(&mut self, slot: usize, cpu: usize) -> Option<&mut [u8]> {
        match &mut self.storage {
            Storage::Array { values } | Storage::Hash { values, .. } => values.get_mut(slot).map(|v| v.as_mut_slice()),
            Storage::PercpuArray { values } => values.get_mut(cpu)?.get_mut(slot).map(|v| v.as_mut_slice()),
            _ => None,
        }
    }

    pub fn update(&mut self, key: &[u8], value: &[u8], flags: u64, cpu: usize) -> Result<UpdateOutcome, i64> {
        if flags > BPF_EXIST {
            return Err(EINVAL);
        }
        let vs = self.spec.value_size as usize;
        match self.spec.map_type {
            MapTypeId::Array | MapTypeId::PercpuArray | MapTypeId::CgroupStorage => {
                if flags == BPF_NOEXIST {
                    return Err(EEXIST);
                }
                let idx = if self.spec.map_type == MapTypeId::CgroupStorage { Some(0) } else { self.array_index(key) };
                let idx = idx.ok_or(E2BIG)?;
                let dst = self.value_mut(idx, cpu).ok_or(E2BIG)?;
                dst.copy_from_slice(&value[..vs]);
                Ok(UpdateOutcome::Replaced)
            }
            MapTypeId::Hash | MapTypeId::LruHash => {
                let Storage::Hash { values, slots, index, tick, lru } = &mut self.storage else { return Err(EINVAL) };
                *tick += 1;
                if let Some(&slot) = index.get(key) {
                    if flags == BPF_NOEXIST {
                        return Err(EEXIST);
                    }
                    values[slot].copy_from_slice(&value[..vs]);
                    if let Some(s) = slots[slot].as_mut() {
                        s.last_used = *tick;
                    }
                    return Ok(UpdateOutcome::Replaced);
                }
                if flags == BPF_EXIST {
                    return Ok(UpdateOutcome::MissingForExist);
                }
                let mut outcome = UpdateOutcome::Inserted;
                let slot = match slots.iter().position(Option::is_none) {
                    Some(s) => s,
                    None if *lru => {
                        let victim = slots
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, s)| s.as_ref().map_or(0, |s| s.last_used))
                            .map(|(i, _)| i)
                            .ok_or(E2BIG)?;
                        if let Some(old) = slots[victim].take() {
                            index.remove(&old.key);
                        }
                        outcome = UpdateOutcome::Evicted;
                        victim
                    }
                    None => return Err(E2BIG),
                };
                values[slot].copy_from_slice(&value[..vs]);
                slots[slot] = Some(HashSlot { key: key.to_vec(), last_used: *tick });
                index.insert(key.to_vec(), slot);
                Ok(outcome)
            }
            _ => Err(EINVAL),
        }
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<(), i64> {
        match &mut self.storage {
            Storage::Hash { slots, index, .. } => {
                let slot = index.remove(key).ok_or(ENOENT)?;
                slots[slot] = None;
                Ok(())
            }
            Storage::ProgArray { progs } => {
                let idx = u32::from_le_bytes(key.get(..4).ok_or(EINVAL)?.try_into().map_err(|_| EINVAL)?) as usize;
                progs.get_mut(idx).ok_or(E2BIG)?.take().map(|_| ()).ok_or(ENOENT)
            }
            _ => Err(EINVAL),
        }
    }

    /// Installs program `prog` at the slot `key` names in a program array.
    pub fn set_prog(&mut self, key: &[u8], prog: u32, flags: u64) -> Result<(), i64> {
        let Storage::ProgArray { progs } = &mut self.storage else { return Err(EINVAL) };
        if flags > BPF_EXIST {
            return Err(EINVAL);
        }
        if flags == BPF_NOEXIST {
            return Err(EEXIST);
        }
        let idx = u32::from_le_bytes(key.get(..4).ok_or(EINVAL)?.try_into().map_err(|_| EINVAL)?) as usize;
        *progs.get_mut(idx).ok_or(E2BIG)? = Some(prog);
        Ok(())
    }

    pub fn push(&mut self, value: &[u8], flags: u64) -> Result<bool, i64> {
        let max = self.spec.max_entries as usize;
        let vs = self.spec.value_size as usize;
        let Storage::Fifo { items, .. } = &mut self.storage else { return Err(EINVAL) };
        if flags & !BPF_EXIST != 0 {
            return Err(EINVAL);
        }
        let mut replaced = false;
        if items.len() >= max {
            if flags & BPF_EXIST == 0 {
                return Err(E2BIG);
            }
            // The oldest element goes, for queues and stacks alike.
            items.pop_front();
            replaced = true;
        }
        items.push_back(value[..vs].to_vec());
        Ok(replaced)
    }

    /// Pops (or peeks) into `out`.
    pub fn pop(&mut self, out: &mut [u8], remove: bool) -> Result<(), i64> {
        let Storage::Fifo { items, lifo } = &mut self.storage else { return Err(EINVAL) };
        let v = if *lifo { items.back() } else { items.front() }.ok_or(ENOENT)?;
        let n = out.len().min(v.len());
        out[..n].copy_from_slice(&v[..n]);
        if remove {
            if *lifo {
                items.pop_back();
            } else {
                items.pop_front();
            }
        }
        Ok(())
    }

    /// Reserves a ring-buffer record; returns its index. Nothing consumes
    /// the ring, so space used by the producer is never given back.
    pub fn reserve(&mut self, size: u64) -> Option<usize> {
        let cap = self.spec.max_entries as u64;
        let Storage::Ringbuf { records, outstanding, produced } = &mut self.storage else { return None };
        let need = size.checked_add(RINGBUF_HDR)?;
        if size == 0 || *produced + need > cap {
            return None;
        }
        *outstanding += need;
        *produced += need;
        records.push(Record { data: vec![0; size as usize], live: true });
        Some(records.len() - 1)
    }

    /// Submits or discards a live record; returns false if it was not live.
    pub fn commit(&mut self, rec: usize, release: bool) -> bool {
        let Storage::Ringbuf { records, outstanding, .. } = &mut self.storage else { return false };
        let Some(r) = records.get_mut(rec).filter(|r| r.live) else { return false };
        if release {
            r.live = false;
            *outstanding -= r.data.len() as u64 + RINGBUF_HDR;
        }
        true
    }

    pub fn record_mut(&mut self, rec: usize) -> Option<&mut [u8]> {
        match &mut self.storage {
            Storage::Ringbuf { records, .. } => records.get_mut(rec).map(|r| r.data.as_mut_slice()),
            _ => None,
        }
    }

    pub fn ringbuf_output(&mut self, data: &[u8]) -> Result<(), i64> {
        let cap = self.spec.max_entries as u64;
        let Storage::Ringbuf { produced, .. } = &mut self.storage else { return Err(EINVAL) };
        let need = data.len() as u64 + RINGBUF_HDR;
        if *produced + need > cap {
            return Err(EAGAIN);
        }
        *produced += need;
        Ok(())
    }

    /// Available data, ring size, consumer and producer positions.
    pub fn ringbuf_query(&self, flags: u64) -> u64 {
        let Storage::Ringbuf { produced, .. } = &self.storage else { return 0 };
        match flags {
            0 | 3 => *produced,
            1 => self.spec.max_entries as u64,
            _ => 0,
        }
    }

    /// Digest input: storage contents in a canonical form.
    pub fn state_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.id.to_le_bytes());
        match &self.storage {
            Storage::Array { values } => values.iter().for_each(|v| out.extend_from_slice(v)),
            Storage::PercpuArray { values } => values.iter().flatten().for_each(|v| out.extend_from_slice(v)),
            Storage::Hash { values, slots, .. } => {
                for (v, s) in values.iter().zip(slots) {
                    if let Some(s) = s {
                        out.extend_from_slice(&s.key);
                        out.extend_from_slice(v);
                    }
                }
            }
            Storage::ProgArray { progs } => progs.iter().for_each(|p| out.extend_from_slice(&p.unwrap_or(0).to_le_bytes())),
            Storage::Ringbuf { records, outstanding, produced } => {
                out.extend_from_slice(&outstanding.to_le_bytes());
                out.extend_from_slice(&produced.to_le_bytes());
                for r in records {
                    out.push(r.live as u8);
                    out.extend_from_slice(&r.data);
                }
            }
            Storage::Fifo { items, .. } => items.iter().for_each(|v| out.extend_from_slice(v)),
            Storage::PerfEventArray { events } => events.iter().for_each(|e| out.extend_from_slice(&e.to_le_bytes())),
            Storage::StackTrace { slots } => {
                for s in slots.iter().flatten() {
                    out.extend_from_slice(&s.0.to_le_bytes());
                }
            }
        }
    }
}
