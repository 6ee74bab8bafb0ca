//! Per-run machine state: memory regions, helper implementations and the
//! bookkeeping both engines share.
//!
//! Addresses are `region << 32 | offset`. Region 0 is the null page, so a
//! null dereference and an out-of-bounds access are told apart by the
//! region half of the address.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::maps::{self, Storage, UpdateOutcome};
use super::{probe, BugReport, Coverage, ExecResult, Oracle, SimKernel, MAX_TAIL_CALLS};
use crate::catalog::{ExecContext, MapTypeId};
use crate::catalog::helper_ids as h;
use crate::digest::Fingerprint;

pub const KERNEL_BASE: u64 = 0xffff_8880_0000_0000;
/// Tag for map handles held in registers; not a valid region.
pub const MAP_HANDLE_TAG: u64 = 0xffff_a000_0000_0000;
pub const STACK_SIZE: usize = 512;
pub const STACK_TOP: u64 = (REGION_STACK << 32) | STACK_SIZE as u64;

const REGION_CTX: u64 = 1;
const REGION_STACK: u64 = 2;
const REGION_SOCK: u64 = 4;
pub(crate) const SOCK_ADDR: u64 = REGION_SOCK << 32;
const SOCK_SIZE: usize = 32;

/// Stack id flag permitting a colliding entry to be replaced.
const STACKID_REUSE: u64 = 1 << 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Null,
    Ctx,
    Stack,
    Packet,
    Sock,
    Value { map: u32, slot: usize, cpu: usize },
    Record { map: u32, rec: usize },
}

impl Region {
    fn kind(self) -> u32 {
        match self {
            Region::Null => 7,
            Region::Ctx => 0,
            Region::Stack => 1,
            Region::Packet => 2,
            Region::Sock => 3,
            Region::Value { .. } => 4,
            Region::Record { .. } => 5,
        }
    }
}

/// An access that aborted the run; the finding is already recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault;

/// What a helper call asks the engine to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    /// Continue with this value in `r0`.
    Ret(u64),
    /// Replace the running program.
    TailCall(u32),
}

pub(crate) fn mix(h: u64, v: u64) -> u64 {
    (h.rotate_left(5) ^ v).wrapping_mul(0x517c_c1b7_2722_0a95)
}

pub struct Exec<'k, 'c> {
    pub(crate) k: &'k mut SimKernel<'c>,
    pub prog: u32,
    regions: Vec<Region>,
    ctx: Vec<u8>,
    stack: Vec<u8>,
    packet: Vec<u8>,
    sock: Vec<u8>,
    pub exec_ctx: ExecContext,
    cpu: usize,
    entry: u32,
    pub coverage: Coverage,
    findings: Vec<BugReport>,
    trace: Vec<(u32, u64)>,
    pub insn_count: u64,
    tail_calls: u32,
    reserved: Vec<(u32, usize)>,
    dirty: BTreeSet<u32>,
}

impl<'k, 'c> Exec<'k, 'c> {
    pub(crate) fn new(
        k: &'k mut SimKernel<'c>,
        prog: u32,
        ctx: Vec<u8>,
        packet: Vec<u8>,
        exec_ctx: ExecContext,
        cpu: usize,
    ) -> Self {
        let sock = (0..SOCK_SIZE as u8).map(|b| b.wrapping_mul(17)).collect();
        Exec {
            k,
            prog,
            regions: vec![Region::Null, Region::Ctx, Region::Stack, Region::Packet, Region::Sock],
            ctx,
            stack: vec![0; STACK_SIZE],
            packet,
            sock,
            exec_ctx,
            cpu,
            entry: prog,
            coverage: Coverage::new(),
            findings: Vec::new(),
            trace: Vec::new(),
            insn_count: 0,
            tail_calls: 0,
            reserved: Vec::new(),
            dirty: BTreeSet::new(),
        }
    }

    pub fn ctx_addr(&self) -> u64 {
        REGION_CTX << 32
    }

    pub fn hit(&mut self, p: u32) {
        self.coverage.hit(p);
    }

    pub fn report(&mut self, oracle: Oracle, location: u32, detail: alloc::string::String) {
        self.findings.push(BugReport { oracle, location, detail, input_digest: 0 });
    }

    fn fault(&mut self, addr: u64, width: usize, store: bool) -> Fault {
        let what = if store { "store" } else { "load" };
        if addr >> 32 == 0 {
            self.report(Oracle::NullDeref, probe::oracle(1), format!("{what} of {width} bytes at {addr:#x}"));
        } else {
            self.report(Oracle::OobAccess, probe::oracle(2), format!("{what} of {width} bytes at {addr:#x} outside its region"));
        }
        Fault
    }

    fn region_of(&self, addr: u64) -> Option<Region> {
        self.regions.get((addr >> 32) as usize).copied()
    }

    fn with_bytes<R>(&mut self, addr: u64, width: usize, store: bool, f: impl FnOnce(&mut [u8]) -> R) -> Result<R, Fault> {
        let region = self.region_of(addr).unwrap_or(Region::Null);
        let off = (addr & 0xffff_ffff) as usize;
        if !matches!(region, Region::Null) {
            self.coverage.hit(probe::mem_access(region.kind(), width as u32, store));
        }
        if let Region::Value { map, .. } | Region::Record { map, .. } = region {
            if store {
                self.dirty.insert(map);
            }
        }
        let bytes: Option<&mut [u8]> = match region {
            Region::Null => None,
            Region::Ctx => Some(&mut self.ctx),
            Region::Stack => Some(&mut self.stack),
            Region::Packet => Some(&mut self.packet),
            Region::Sock => Some(&mut self.sock),
            Region::Value { map, slot, cpu } => self.k.maps.get_mut(&map).and_then(|m| m.value_mut(slot, cpu)),
            Region::Record { map, rec } => self.k.maps.get_mut(&map).and_then(|m| m.record_mut(rec)),
        };
        match bytes.and_then(|b| b.get_mut(off..off.checked_add(width)?)) {
            Some(b) => Ok(f(b)),
            None => Err(self.fault(addr, width, store)),
        }
    }

    pub fn load(&mut self, addr: u64, width: usize) -> Result<u64, Fault> {
        self.with_bytes(addr, width, false, |b| {
            let mut w = [0u8; 8];
            w[..b.len()].copy_from_slice(b);
            u64::from_le_bytes(w)
        })
    }

    pub fn store(&mut self, addr: u64, width: usize, value: u64) -> Result<(), Fault> {
        self.with_bytes(addr, width, true, |b| {
            let n = b.len();
            b.copy_from_slice(&value.to_le_bytes()[..n]);
        })
    }

    pub fn read_bytes(&mut self, addr: u64, len: usize) -> Result<Vec<u8>, Fault> {
        if len == 0 {
            return Ok(Vec::new());
        }
        self.with_bytes(addr, len, false, |b| b.to_vec())
    }

    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), Fault> {
        if data.is_empty() {
            return Ok(());
        }
        self.with_bytes(addr, data.len(), true, |b| b.copy_from_slice(data))
    }

    fn new_region(&mut self, r: Region) -> u64 {
        self.regions.push(r);
        ((self.regions.len() - 1) as u64) << 32
    }

    fn map_of(&self, handle: u64) -> Option<u32> {
        if handle & !0xffff_ffff != MAP_HANDLE_TAG {
            return None;
        }
        let id = (handle & 0xffff_ffff) as u32;
        self.k.maps.contains_key(&id).then_some(id)
    }

    fn map_type(&self, map: u32) -> MapTypeId {
        self.k.maps[&map].spec.map_type
    }

    fn map_probe(&mut self, map: u32, op: u32, k: u32) {
        let mt = self.map_type(map).code();
        self.coverage.hit(probe::map_op(mt, op, k));
    }

    fn occupancy_probe(&mut self, map: u32) {
        let m = &self.k.maps[&map];
        let (mt, occ) = (m.spec.map_type.code(), m.occupancy());
        let cap = m.capacity();
        self.coverage.hit(probe::occupancy(mt, occ));
        if let Some(cap) = cap {
            self.coverage.hit(probe::fill(mt, occ, cap));
        }
    }

    fn lock(&mut self, map: u32) -> Option<super::LockClass> {
        let (held, reports) = self.k.map_lock(map, self.exec_ctx);
        if let Some((c, lctx)) = held {
            self.coverage.hit(probe::lock(c as u32, lctx as u32));
        }
        self.findings.extend(reports);
        held.map(|(c, _)| c)
    }

    fn unlock(&mut self, class: Option<super::LockClass>) {
        if let Some(c) = class {
            self.k.locks.release(c);
        }
    }

    fn outcome(&mut self, id: u32, k: u32) {
        self.coverage.hit(probe::helper_outcome(id, k));
    }

    /// Runs helper `id` with argument registers `args`.
    pub fn call_helper(&mut self, id: u32, args: [u64; 5]) -> Result<Flow, Fault> {
        self.coverage.hit(probe::helper_entry(id));
        let nargs = self.k.catalog.helper(crate::HelperId(id)).map_or(0, |p| p.args.len());
        let mut d = id as u64;
        for a in &args[..nargs] {
            d = mix(d, *a);
        }
        self.trace.push((id, d));
        let ret = self.helper(id, args)?;
        if let Flow::Ret(v) = ret {
            let class = match v as i64 {
                0 => 0,
                v if v < 0 => 1,
                _ => 2,
            };
            self.outcome(id, class);
        }
        Ok(ret)
    }

    fn err(e: i64) -> Flow {
        Flow::Ret((-e) as u64)
    }

    fn helper(&mut self, id: u32, a: [u64; 5]) -> Result<Flow, Fault> {
        let id_h = crate::HelperId(id);
        Ok(match id_h {
            h::MAP_LOOKUP_ELEM => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let ks = self.k.maps[&map].spec.key_size as usize;
                let key = self.read_bytes(a[1], ks)?;
                let slot = self.k.maps.get_mut(&map).and_then(|m| m.lookup(&key));
                self.map_probe(map, 0, slot.is_some() as u32);
                match slot {
                    Some(slot) => {
                        let cpu = self.cpu;
                        Flow::Ret(self.new_region(Region::Value { map, slot, cpu }))
                    }
                    None => Flow::Ret(0),
                }
            }
            h::MAP_UPDATE_ELEM => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let spec = self.k.maps[&map].spec;
                let key = self.read_bytes(a[1], spec.key_size as usize)?;
                let value = self.read_bytes(a[2], spec.value_size as usize)?;
                let class = self.lock(map);
                let cpu = self.cpu;
                let r = self.k.maps.get_mut(&map).map_or(Err(maps::EINVAL), |m| m.update(&key, &value, a[3], cpu));
                self.unlock(class);
                self.dirty.insert(map);
                let k = match r {
                    Ok(UpdateOutcome::Inserted) => 0,
                    Ok(UpdateOutcome::Replaced) => 1,
                    Ok(UpdateOutcome::Evicted) => 2,
                    Ok(UpdateOutcome::MissingForExist) => 3,
                    Err(e) => 4 + (e as u32 % 4),
                };
                self.map_probe(map, 1, k);
                self.occupancy_probe(map);
                match r {
                    Ok(UpdateOutcome::MissingForExist) if self.k.bugs.lookup_null_passthrough => {
                        // The element lookup result is used without a null check.
                        self.report(
                            Oracle::NullDeref,
                            probe::map_op(spec.map_type.code(), 1, 3),
                            format!("update with BPF_EXIST on missing key in map {map} wrote through a null element"),
                        );
                        return Err(Fault);
                    }
                    Ok(UpdateOutcome::MissingForExist) => Self::err(maps::ENOENT),
                    Ok(_) => Flow::Ret(0),
                    Err(e) => Self::err(e),
                }
            }
            h::MAP_DELETE_ELEM => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let ks = self.k.maps[&map].spec.key_size as usize;
                let key = self.read_bytes(a[1], ks)?;
                let class = self.lock(map);
                let r = self.k.maps.get_mut(&map).map_or(Err(maps::EINVAL), |m| m.delete(&key));
                self.unlock(class);
                self.dirty.insert(map);
                self.map_probe(map, 2, r.is_ok() as u32);
                self.occupancy_probe(map);
                r.map_or_else(Self::err, |_| Flow::Ret(0))
            }
            h::KTIME_GET_NS => {
                self.k.clock += 1000 + 37 * self.trace.len() as u64;
                Flow::Ret(self.k.clock)
            }
            h::GET_PRANDOM_U32 => Flow::Ret(self.k.rng.next_u32() as u64),
            h::GET_SMP_PROCESSOR_ID => Flow::Ret(self.cpu as u64),
            h::GET_CURRENT_PID_TGID => Flow::Ret(self.k.pid_tgid),
            h::TAIL_CALL => return self.tail_call(a[1], a[2]),
            h::PERF_EVENT_OUTPUT => {
                let Some(map) = self.map_of(a[1]) else { return Ok(Self::err(maps::EINVAL)) };
                let data = self.read_bytes(a[3], a[4] as usize)?;
                let idx = if a[2] & 0xffff_ffff == 0xffff_ffff { self.cpu as u64 } else { a[2] };
                if a[2] >> 32 != 0 {
                    self.map_probe(map, 3, 2);
                    return Ok(Self::err(maps::EINVAL));
                }
                let cpu_ok = idx == self.cpu as u64;
                let Some(Storage::PerfEventArray { events }) = self.k.maps.get_mut(&map).map(|m| &mut m.storage) else {
                    return Ok(Self::err(maps::EINVAL));
                };
                match events.get_mut(idx as usize) {
                    Some(e) if cpu_ok => {
                        *e += 1 + data.len() as u64 / 64;
                        self.dirty.insert(map);
                        self.map_probe(map, 3, 0);
                        Flow::Ret(0)
                    }
                    Some(_) => {
                        self.map_probe(map, 3, 1);
                        Self::err(maps::EOPNOTSUPP)
                    }
                    None => {
                        self.map_probe(map, 3, 3);
                        Self::err(maps::E2BIG)
                    }
                }
            }
            h::SKB_LOAD_BYTES => {
                let (off, len) = (a[1], a[3] as usize);
                let src = (off as usize).checked_add(len).and_then(|end| self.packet.get(off as usize..end)).map(<[u8]>::to_vec);
                match src {
                    Some(b) => {
                        self.outcome(id, 4);
                        self.write_bytes(a[2], &b)?;
                        Flow::Ret(0)
                    }
                    None => {
                        self.outcome(id, 5);
                        self.write_bytes(a[2], &vec![0; len])?;
                        Self::err(maps::EFAULT)
                    }
                }
            }
            h::GET_STACKID => {
                let Some(map) = self.map_of(a[1]) else { return Ok(Self::err(maps::EINVAL)) };
                let flags = a[2];
                if flags & !(0xff | STACKID_REUSE | (1 << 8) | (1 << 9)) != 0 {
                    return Ok(Self::err(maps::EINVAL));
                }
                let mut f = Fingerprint::new();
                f.u64(self.prog as u64).u64(flags & 0xff).u64(self.tail_calls as u64);
                let hash = f.finish();
                let vs = self.k.maps[&map].spec.value_size as usize;
                let Some(Storage::StackTrace { slots }) = self.k.maps.get_mut(&map).map(|m| &mut m.storage) else {
                    return Ok(Self::err(maps::EINVAL));
                };
                let sid = (hash % slots.len() as u64) as usize;
                let frames: Vec<u8> = hash.to_le_bytes().iter().cycle().take(vs).copied().collect();
                let k = match &slots[sid] {
                    Some((old, _)) if *old == hash => 0,
                    Some(_) if flags & STACKID_REUSE == 0 => 1,
                    Some(_) => 2,
                    None => 3,
                };
                if k != 1 {
                    slots[sid] = Some((hash, frames));
                    self.dirty.insert(map);
                }
                self.map_probe(map, 4, k);
                if k == 1 {
                    Self::err(maps::EEXIST)
                } else {
                    Flow::Ret(sid as u64)
                }
            }
            h::MAP_PUSH_ELEM => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let vs = self.k.maps[&map].spec.value_size as usize;
                let value = self.read_bytes(a[1], vs)?;
                let class = self.lock(map);
                let r = self.k.maps.get_mut(&map).map_or(Err(maps::EINVAL), |m| m.push(&value, a[2]));
                self.unlock(class);
                self.dirty.insert(map);
                self.map_probe(map, 5, match r {
                    Ok(false) => 0,
                    Ok(true) => 1,
                    Err(e) if e == maps::E2BIG => 2,
                    Err(_) => 3,
                });
                self.occupancy_probe(map);
                r.map_or_else(Self::err, |_| Flow::Ret(0))
            }
            h::MAP_POP_ELEM | h::MAP_PEEK_ELEM => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let vs = self.k.maps[&map].spec.value_size as usize;
                let remove = id_h == h::MAP_POP_ELEM;
                let mut out = vec![0; vs];
                let class = self.lock(map);
                let r = self.k.maps.get_mut(&map).map_or(Err(maps::EINVAL), |m| m.pop(&mut out, remove));
                self.unlock(class);
                if remove {
                    self.dirty.insert(map);
                }
                self.map_probe(map, 6, remove as u32 * 2 + r.is_ok() as u32);
                self.occupancy_probe(map);
                self.write_bytes(a[1], &out)?;
                r.map_or_else(Self::err, |_| Flow::Ret(0))
            }
            h::PROBE_READ_KERNEL => {
                let len = a[1] as usize;
                let src = a[2]
                    .checked_sub(KERNEL_BASE)
                    .and_then(|o| {
                        let o = usize::try_from(o).ok()?;
                        self.k.arena.get(o..o.checked_add(len)?)
                    })
                    .map(<[u8]>::to_vec);
                match src {
                    Some(b) => {
                        self.outcome(id, 4);
                        self.write_bytes(a[0], &b)?;
                        Flow::Ret(0)
                    }
                    None => {
                        self.outcome(id, 5);
                        self.write_bytes(a[0], &vec![0; len])?;
                        Self::err(maps::EFAULT)
                    }
                }
            }
            h::RINGBUF_OUTPUT => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Self::err(maps::EINVAL)) };
                let data = self.read_bytes(a[1], a[2] as usize)?;
                if a[3] & !3 != 0 {
                    return Ok(Self::err(maps::EINVAL));
                }
                let r = self.k.maps.get_mut(&map).map_or(Err(maps::EINVAL), |m| m.ringbuf_output(&data));
                self.dirty.insert(map);
                self.map_probe(map, 3, r.is_ok() as u32);
                self.occupancy_probe(map);
                r.map_or_else(Self::err, |_| Flow::Ret(0))
            }
            h::RINGBUF_RESERVE => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Flow::Ret(0)) };
                let rec = if a[2] != 0 { None } else { self.k.maps.get_mut(&map).and_then(|m| m.reserve(a[1])) };
                self.map_probe(map, 4, rec.is_some() as u32);
                self.occupancy_probe(map);
                match rec {
                    Some(rec) => {
                        self.dirty.insert(map);
                        self.reserved.push((map, rec));
                        Flow::Ret(self.new_region(Region::Record { map, rec }))
                    }
                    None => Flow::Ret(0),
                }
            }
            h::RINGBUF_SUBMIT | h::RINGBUF_DISCARD => {
                let submit = id_h == h::RINGBUF_SUBMIT;
                let Some(Region::Record { map, rec }) = self.region_of(a[0]) else {
                    return Err(self.fault(a[0], 0, true));
                };
                let release = submit || !self.k.bugs.ringbuf_leak;
                let live = self.k.maps.get_mut(&map).is_some_and(|m| m.commit(rec, release));
                self.dirty.insert(map);
                self.map_probe(map, 5, submit as u32 * 2 + live as u32);
                self.occupancy_probe(map);
                Flow::Ret(0)
            }
            h::RINGBUF_QUERY => {
                let Some(map) = self.map_of(a[0]) else { return Ok(Flow::Ret(0)) };
                self.map_probe(map, 6, (a[1] & 3) as u32);
                Flow::Ret(self.k.maps[&map].ringbuf_query(a[1]))
            }
            _ => Self::err(maps::EINVAL),
        })
    }

    fn tail_call(&mut self, handle: u64, index: u64) -> Result<Flow, Fault> {
        let Some(map) = self.map_of(handle) else { return Ok(Self::err(maps::EINVAL)) };
        let idx = index as u32;
        let Some(Storage::ProgArray { progs }) = self.k.maps.get(&map).map(|m| &m.storage) else {
            return Ok(Self::err(maps::EINVAL));
        };
        let max = progs.len() as u32;
        if idx >= max {
            self.map_probe(map, 0, 1);
            if self.k.bugs.tailcall_oob {
                self.report(
                    Oracle::OobAccess,
                    probe::map_op(MapTypeId::ProgArray.code(), 0, 1),
                    format!("tail call index {idx} read past the {max}-slot program array {map}"),
                );
                return Err(Fault);
            }
            return Ok(Self::err(maps::EINVAL));
        }
        let target = progs[idx as usize];
        if self.tail_calls >= MAX_TAIL_CALLS {
            self.map_probe(map, 0, 2);
            return Ok(Self::err(maps::E2BIG));
        }
        match target {
            Some(p) if self.k.progs.contains_key(&p) => {
                self.map_probe(map, 0, 0);
                self.tail_calls += 1;
                self.coverage.hit(probe::tail_depth(self.tail_calls));
                self.prog = p;
                Ok(Flow::TailCall(p))
            }
            _ => {
                self.map_probe(map, 0, 3);
                Ok(Self::err(maps::ENOENT))
            }
        }
    }

    /// Handle a relocated `ld_map` immediate turns into.
    pub fn map_handle(imm: u64) -> u64 {
        MAP_HANDLE_TAG | (imm & 0xffff_ffff)
    }

    /// Instructions of the program currently running.
    pub fn insns(&self) -> Vec<crate::isa::Instruction> {
        self.k.progs.get(&self.prog).map(|p| p.insns.clone()).unwrap_or_default()
    }

    pub fn findings_len(&self) -> usize {
        self.findings.len()
    }

    pub(crate) fn finish(mut self, ret: u64) -> ExecResult {
        for (map, rec) in core::mem::take(&mut self.reserved) {
            let live = matches!(&self.k.maps.get(&map).map(|m| &m.storage),
                Some(Storage::Ringbuf { records, .. }) if records.get(rec).is_some_and(|r| r.live));
            if live {
                self.report(
                    Oracle::RefLeakRuntime,
                    probe::oracle(3),
                    format!("ring buffer record {rec} of map {map} still reserved at program exit"),
                );
                // Drop the record so the leak is reported once.
                if let Some(m) = self.k.maps.get_mut(&map) {
                    m.commit(rec, true);
                }
            }
        }
        let mut buf = Vec::new();
        let mut digest = 0u64;
        for id in &self.dirty {
            buf.clear();
            self.k.maps[id].state_bytes(&mut buf);
            for chunk in buf.chunks(8) {
                let mut w = [0u8; 8];
                w[..chunk.len()].copy_from_slice(chunk);
                digest = mix(digest, u64::from_le_bytes(w));
            }
        }
        let mut seen = BTreeSet::new();
        self.findings.retain(|f| seen.insert((f.oracle, f.location)));
        self.k.coverage.merge(&self.coverage);
        ExecResult {
            prog_id: self.entry,
            return_value: ret,
            helper_trace: self.trace,
            insn_count: self.insn_count,
            coverage: self.coverage,
            findings: self.findings,
            map_digest: digest,
        }
    }
}
