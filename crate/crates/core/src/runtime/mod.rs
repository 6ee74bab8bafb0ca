//! Simulated kernel: maps, helpers, the program load/attach/run syscall
//! surface, two execution engines, probe coverage and bug oracles.
//!
//! All state belongs to one [`SimKernel`], which is cheap to clone; the
//! differential oracle runs the second engine on a clone taken before the
//! first one starts.

mod context;
pub mod coverage;
mod exec;
pub(crate) mod interp;
mod linear;
pub mod lockdep;
pub mod maps;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::catalog::{AttachKind, AttrInvalid, Catalog, ExecContext, MapLock, MapSpecRequest, MapTypeId, ProgramTypeId};
use crate::digest::Fingerprint;
use crate::isa::{Instruction, RawProgram};
use crate::lower::{relocate, Container, RelocError};
use crate::verifier::{verify, MapEnv, VerifierError, VerifySummary};

pub use context::build_context;
pub use coverage::{probe, Coverage};
pub use exec::{Exec, Fault, Flow, Region, KERNEL_BASE, MAP_HANDLE_TAG, STACK_TOP};
pub use lockdep::{LockClass, LockCtx, LockTracker, Violation};
pub use maps::{MapInstance, NUM_CPUS};

/// Hard cap on executed instructions per run, tail calls included.
pub const INSN_CAP: u64 = 1_000_000;
pub const MAX_TAIL_CALLS: u32 = 33;
pub const ARENA_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Oracle {
    OobAccess,
    NullDeref,
    RefLeakRuntime,
    LockContextViolation,
    ExecDivergence,
}

impl Oracle {
    pub const ALL: [Oracle; 5] =
        [Oracle::OobAccess, Oracle::NullDeref, Oracle::RefLeakRuntime, Oracle::LockContextViolation, Oracle::ExecDivergence];

    pub fn name(self) -> &'static str {
        match self {
            Oracle::OobAccess => "oob_access",
            Oracle::NullDeref => "null_deref",
            Oracle::RefLeakRuntime => "ref_leak_runtime",
            Oracle::LockContextViolation => "lock_context_violation",
            Oracle::ExecDivergence => "exec_divergence",
        }
    }

    pub fn from_name(s: &str) -> Option<Oracle> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }
}

impl fmt::Display for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BugReport {
    pub oracle: Oracle,
    /// Probe id where the oracle fired.
    pub location: u32,
    pub detail: String,
    /// Digest of the fuzz input that produced it; set by the harness.
    pub input_digest: u64,
}

/// Deliberately planted runtime bugs, each caught by one oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct SeededBugs {
    /// `tail_call` skips the index bound check.
    pub tailcall_oob: bool,
    /// `map_update_elem` with `BPF_EXIST` on a missing hash key follows a null element.
    pub lookup_null_passthrough: bool,
    /// `ringbuf_discard` does not release the record.
    pub ringbuf_leak: bool,
    /// Queue-map locks taken from task context leave interrupts enabled.
    pub queue_lock_ctx: bool,
    /// The linear engine does not mask register shift amounts.
    pub shift_ub: bool,
}

impl SeededBugs {
    pub const NAMES: [&'static str; 5] =
        ["tailcall_oob", "lookup_null_passthrough", "ringbuf_leak", "queue_lock_ctx", "shift_ub"];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        SeededBugs { tailcall_oob: true, lookup_null_passthrough: true, ringbuf_leak: true, queue_lock_ctx: true, shift_ub: true }
    }

    fn flag(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "tailcall_oob" => &mut self.tailcall_oob,
            "lookup_null_passthrough" => &mut self.lookup_null_passthrough,
            "ringbuf_leak" => &mut self.ringbuf_leak,
            "queue_lock_ctx" => &mut self.queue_lock_ctx,
            "shift_ub" => &mut self.shift_ub,
            _ => return None,
        })
    }

    /// Parses `all`, `none` or a comma-separated list of bug names.
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim() {
            "all" => return Ok(Self::all()),
            "none" | "" => return Ok(Self::none()),
            _ => {}
        }
        let mut bugs = Self::none();
        for name in s.split(',').map(str::trim) {
            *bugs.flag(name).ok_or_else(|| format!("unknown seeded bug {name:?}"))? = true;
        }
        Ok(bugs)
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let mut copy = *self;
        Self::NAMES.into_iter().filter(|n| copy.flag(n).is_some_and(|f| *f)).collect()
    }
}

impl fmt::Display for SeededBugs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = self.enabled();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub prog_id: u32,
    pub return_value: u64,
    /// `(helper id, digest of its argument registers)` per call.
    pub helper_trace: Vec<(u32, u64)>,
    pub insn_count: u64,
    pub coverage: Coverage,
    pub findings: Vec<BugReport>,
    /// Digest of every map's contents after the run.
    pub map_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SysError {
    #[error("{0}")]
    AttrInvalid(AttrInvalid),
    #[error("no_such_map: {0}")]
    NoSuchMap(u32),
    #[error("no_such_prog: {0}")]
    NoSuchProg(u32),
    #[error("{0}")]
    Reloc(RelocError),
    #[error("{}: {}", .0.rule.as_str(), .0.message)]
    Verifier(VerifierError),
    #[error("attach_type_mismatch: {0:?} programs cannot attach to {1:?}")]
    AttachTypeMismatch(ProgramTypeId, AttachKind),
    #[error("attach_target_missing")]
    AttachTargetMissing,
    #[error("test_run_unsupported: {0:?}")]
    TestRunUnsupported(ProgramTypeId),
    #[error("errno {0}")]
    Errno(i64),
}

impl SysError {
    /// Stable short name used in statistics.
    pub fn rule_name(&self) -> &'static str {
        match self {
            SysError::AttrInvalid(_) => "attr_invalid",
            SysError::NoSuchMap(_) => "no_such_map",
            SysError::NoSuchProg(_) => "no_such_prog",
            SysError::Reloc(r) => r.rule_name(),
            SysError::Verifier(v) => v.rule.as_str(),
            SysError::AttachTypeMismatch(..) => "attach_type_mismatch",
            SysError::AttachTargetMissing => "attach_target_missing",
            SysError::TestRunUnsupported(_) => "test_run_unsupported",
            SysError::Errno(_) => "errno",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedProg {
    pub prog_type: ProgramTypeId,
    pub insns: Vec<Instruction>,
    pub summary: VerifySummary,
    /// Digest of the relocated image.
    pub digest: u64,
}

/// Syscall command numbers for probes.
mod cmd {
    pub const MAP_CREATE: u32 = 0;
    pub const MAP_LOOKUP: u32 = 1;
    pub const MAP_UPDATE: u32 = 2;
    pub const MAP_DELETE: u32 = 3;
    pub const MAP_LOOKUP_AND_DELETE: u32 = 4;
    pub const PROG_LOAD: u32 = 5;
    pub const PROG_ATTACH: u32 = 6;
    pub const TEST_RUN: u32 = 7;
    pub const TRIGGER: u32 = 8;
}

#[derive(Debug, Clone)]
pub struct SimKernel<'c> {
    pub catalog: &'c Catalog,
    pub bugs: SeededBugs,
    /// Run the second engine on every execution and compare.
    pub differential: bool,
    maps: BTreeMap<u32, MapInstance>,
    progs: BTreeMap<u32, LoadedProg>,
    attached: Vec<(AttachKind, u32)>,
    targets: BTreeMap<u32, AttachKind>,
    next_id: u32,
    arena: Vec<u8>,
    clock: u64,
    rng: ChaCha8Rng,
    pub locks: LockTracker,
    /// Union of every probe hit by syscalls and executions.
    pub coverage: Coverage,
    exec_count: u64,
    pid_tgid: u64,
    /// Findings raised outside program execution (aux syscalls).
    pending: Vec<BugReport>,
}

impl MapEnv for SimKernel<'_> {
    fn map_spec(&self, handle: i64) -> Option<MapSpecRequest> {
        u32::try_from(handle).ok().and_then(|id| self.maps.get(&id)).map(|m| m.spec)
    }
}

impl<'c> SimKernel<'c> {
    /// A fresh kernel. `worker` fixes the reported pid/tgid.
    pub fn new(catalog: &'c Catalog, seed: u64, bugs: SeededBugs, worker: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arena = alloc::vec![0u8; ARENA_SIZE];
        rng.fill_bytes(&mut arena);
        let pid = 1000 + worker as u64;
        SimKernel {
            catalog,
            bugs,
            differential: true,
            maps: BTreeMap::new(),
            progs: BTreeMap::new(),
            attached: Vec::new(),
            targets: BTreeMap::new(),
            next_id: 1,
            arena,
            clock: 1_000_000,
            rng,
            locks: LockTracker::new(),
            coverage: Coverage::new(),
            exec_count: 0,
            pid_tgid: (pid << 32) | pid,
            pending: Vec::new(),
        }
    }

    fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn hit(&mut self, p: u32) {
        self.coverage.hit(p);
    }

    pub fn map(&self, id: u32) -> Option<&MapInstance> {
        self.maps.get(&id)
    }

    pub fn map_ids(&self) -> Vec<u32> {
        self.maps.keys().copied().collect()
    }

    pub fn prog(&self, id: u32) -> Option<&LoadedProg> {
        self.progs.get(&id)
    }

    /// Findings raised by syscalls since the last call.
    pub fn take_findings(&mut self) -> Vec<BugReport> {
        core::mem::take(&mut self.pending)
    }

    pub fn state_digest(&self) -> u64 {
        let mut buf = Vec::new();
        for m in self.maps.values() {
            m.state_bytes(&mut buf);
        }
        let mut f = Fingerprint::new();
        f.bytes(&buf);
        f.finish()
    }

    pub fn sys_map_create(&mut self, spec: MapSpecRequest) -> Result<u32, SysError> {
        if let Err(e) = self.catalog.validate_map_spec(&spec) {
            self.hit(probe::syscall(cmd::MAP_CREATE, 1));
            return Err(SysError::AttrInvalid(e));
        }
        self.hit(probe::syscall(cmd::MAP_CREATE, 0));
        self.hit(probe::map_op(spec.map_type.code(), 7, 0));
        let id = self.fresh_id();
        let mut m = MapInstance::new(id, spec);
        if let maps::Storage::ProgArray { progs } = &mut m.storage {
            // Every even slot holds a trivial program returning its index.
            for (i, p) in progs.iter_mut().enumerate().filter(|(i, _)| i % 2 == 0) {
                let stub = alloc::vec![Instruction::mov64_imm(0, i as i32), Instruction::exit()];
                let pid = self.next_id;
                self.next_id += 1;
                self.progs.insert(
                    pid,
                    LoadedProg { prog_type: ProgramTypeId::SocketFilter, insns: stub, summary: VerifySummary::default(), digest: i as u64 },
                );
                *p = Some(pid);
            }
        }
        self.maps.insert(id, m);
        Ok(id)
    }

    /// Relocates the container against `handles` (map ordinal to map id),
    /// verifies it and stores the image.
    pub fn sys_prog_load(&mut self, c: &Container, handles: &[u32]) -> Result<u32, SysError> {
        let image = match relocate(c.prog.clone(), handles) {
            Ok(i) => i,
            Err(e) => {
                self.hit(probe::syscall(cmd::PROG_LOAD, 1));
                return Err(SysError::Reloc(e));
            }
        };
        self.load_image(image)
    }

    pub fn load_image(&mut self, image: RawProgram) -> Result<u32, SysError> {
        let summary = match verify(&image, self, self.catalog) {
            Ok(s) => s,
            Err(e) => {
                self.hit(probe::syscall(cmd::PROG_LOAD, 2));
                return Err(SysError::Verifier(e));
            }
        };
        self.hit(probe::syscall(cmd::PROG_LOAD, 0));
        let mut f = Fingerprint::new();
        f.bytes(&image.bytes().unwrap_or_default());
        let id = self.fresh_id();
        self.progs.insert(id, LoadedProg { prog_type: image.prog_type, insns: image.insns, summary, digest: f.finish() });
        Ok(id)
    }

    /// Creates the resource (socket, cgroup, device) a program of `kind`
    /// attaches to.
    pub fn sys_create_target(&mut self, kind: AttachKind) -> u32 {
        let id = self.fresh_id();
        self.targets.insert(id, kind);
        id
    }

    pub fn sys_prog_attach(&mut self, prog: u32, kind: AttachKind, target: Option<u32>) -> Result<(), SysError> {
        let pt = self.progs.get(&prog).ok_or(SysError::NoSuchProg(prog))?.prog_type;
        if self.catalog.program_type(pt).attach_kind != kind {
            self.hit(probe::syscall(cmd::PROG_ATTACH, 1));
            return Err(SysError::AttachTypeMismatch(pt, kind));
        }
        if kind != AttachKind::TraceEvent && !target.is_some_and(|t| self.targets.get(&t) == Some(&kind)) {
            self.hit(probe::syscall(cmd::PROG_ATTACH, 2));
            return Err(SysError::AttachTargetMissing);
        }
        self.hit(probe::syscall(cmd::PROG_ATTACH, 0));
        self.attached.push((kind, prog));
        Ok(())
    }

    pub fn sys_test_run(&mut self, prog: u32, payload: &[u8]) -> Result<ExecResult, SysError> {
        let pt = self.progs.get(&prog).ok_or(SysError::NoSuchProg(prog))?.prog_type;
        if !self.catalog.program_type(pt).test_run {
            self.hit(probe::syscall(cmd::TEST_RUN, 1));
            return Err(SysError::TestRunUnsupported(pt));
        }
        self.hit(probe::syscall(cmd::TEST_RUN, 0));
        Ok(self.run(prog, payload, ExecContext::Task))
    }

    /// Fires the event behind `kind`; every program attached there runs once
    /// in its program type's event context.
    pub fn trigger_event(&mut self, kind: AttachKind, payload: &[u8]) -> Vec<ExecResult> {
        self.hit(probe::syscall(cmd::TRIGGER, kind.code() as u32));
        let progs: Vec<u32> = self.attached.iter().filter(|(k, _)| *k == kind).map(|(_, p)| *p).collect();
        let mut out = Vec::new();
        for p in progs {
            let Some(pt) = self.progs.get(&p).map(|lp| lp.prog_type) else { continue };
            let ctx = self.catalog.program_type(pt).event_context;
            // Scheduler tracepoints fire with the run-queue lock held.
            let holds_rq = pt == ProgramTypeId::Tracepoint;
            let mut pre = Vec::new();
            if holds_rq {
                pre = self.locks.acquire(LockClass::RunQueue, LockCtx::IrqOff);
            }
            let mut r = self.run(p, payload, ctx);
            if holds_rq {
                self.locks.release(LockClass::RunQueue);
            }
            for v in pre {
                r.findings.push(lock_report(v));
            }
            out.push(r);
        }
        out
    }

    /// Executes a loaded program under the interpreter, and under the
    /// linear engine on a snapshot when `differential` is set.
    pub fn run(&mut self, prog: u32, payload: &[u8], ctx: ExecContext) -> ExecResult {
        let snapshot = self.differential.then(|| self.clone());
        let mut r = self.run_engine(prog, payload, ctx, Engine::Interp);
        if let Some(mut other) = snapshot {
            let l = other.run_engine(prog, payload, ctx, Engine::Linear);
            self.coverage.merge(&l.coverage);
            if (l.return_value, &l.helper_trace, l.map_digest) != (r.return_value, &r.helper_trace, r.map_digest) {
                let detail = format!(
                    "interp returned {:#x} after {} helper calls, linear returned {:#x} after {}",
                    r.return_value,
                    r.helper_trace.len(),
                    l.return_value,
                    l.helper_trace.len()
                );
                r.findings.push(BugReport { oracle: Oracle::ExecDivergence, location: probe::oracle(4), detail, input_digest: 0 });
            }
        }
        r
    }

    pub fn run_engine(&mut self, prog: u32, payload: &[u8], ctx: ExecContext, engine: Engine) -> ExecResult {
        let Some(pt) = self.progs.get(&prog).map(|p| p.prog_type) else {
            return ExecResult {
                prog_id: prog,
                return_value: 0,
                helper_trace: Vec::new(),
                insn_count: 0,
                coverage: Coverage::new(),
                findings: Vec::new(),
                map_digest: self.state_digest(),
            };
        };
        let mut x = self.begin(prog, pt, payload, ctx);
        let ret = match engine {
            Engine::Interp => interp::interpret(&mut x, prog),
            Engine::Linear => linear::execute(&mut x, prog),
        };
        x.finish(ret.unwrap_or(0))
    }

    /// Sets up an execution of a `pt` program over `payload`.
    pub fn begin(&mut self, prog: u32, pt: ProgramTypeId, payload: &[u8], ctx: ExecContext) -> Exec<'_, 'c> {
        let cpu = (self.exec_count % NUM_CPUS as u64) as usize;
        self.exec_count += 1;
        let (ctx_bytes, packet) = build_context(self.catalog, pt, payload);
        Exec::new(self, prog, ctx_bytes, packet, ctx, cpu)
    }

    fn lock_ctx(&self, class: LockClass, ctx: ExecContext) -> LockCtx {
        match ctx {
            ExecContext::Interrupt => LockCtx::Interrupt,
            ExecContext::IrqDisabled => LockCtx::IrqOff,
            // Map locks are taken with irqsave, except under the seeded bug.
            ExecContext::Task if class == LockClass::Queue && self.bugs.queue_lock_ctx => LockCtx::TaskIrqOn,
            ExecContext::Task => LockCtx::IrqOff,
        }
    }

    /// Takes a map's lock in `ctx`; returns reports for new violations.
    pub(crate) fn map_lock(&mut self, map: u32, ctx: ExecContext) -> (Option<(LockClass, LockCtx)>, Vec<BugReport>) {
        let class = match self.maps.get(&map).and_then(|m| self.catalog.map_attr_constraints(m.spec.map_type)).map(|s| s.lock) {
            Some(MapLock::Bucket) => LockClass::Bucket,
            Some(MapLock::Queue) => LockClass::Queue,
            _ => return (None, Vec::new()),
        };
        let lctx = self.lock_ctx(class, ctx);
        let v = self.locks.acquire(class, lctx);
        (Some((class, lctx)), v.into_iter().map(lock_report).collect())
    }

    fn user_access(&mut self, map: u32, write: bool) -> Result<(), SysError> {
        let m = self.maps.get(&map).ok_or(SysError::NoSuchMap(map))?;
        let bit = |n: &str| self.catalog.flag_bit(n).unwrap_or(0);
        let denied = if write { bit("RDONLY") } else { bit("WRONLY") };
        if m.spec.flags & denied != 0 {
            return Err(SysError::Errno(maps::EPERM));
        }
        if matches!(m.spec.map_type, MapTypeId::Ringbuf | MapTypeId::PerfEventArray | MapTypeId::StackTrace) && write {
            return Err(SysError::Errno(maps::EOPNOTSUPP));
        }
        Ok(())
    }

    fn with_lock<T>(&mut self, map: u32, f: impl FnOnce(&mut MapInstance) -> T) -> T {
        let (held, reports) = self.map_lock(map, ExecContext::Task);
        if let Some((c, lctx)) = held {
            self.hit(probe::lock(c as u32, lctx as u32));
        }
        self.pending.extend(reports);
        let out = f(self.maps.get_mut(&map).expect("checked by caller"));
        if let Some((c, _)) = held {
            self.locks.release(c);
        }
        out
    }

    fn probe_result<T>(&mut self, c: u32, r: &Result<T, SysError>) {
        let k = match r {
            Ok(_) => 0,
            Err(SysError::Errno(e)) => (*e as u32 % 14) + 1,
            Err(_) => 15,
        };
        self.hit(probe::syscall(c, k));
    }

    pub fn sys_map_lookup(&mut self, map: u32, key: &[u8]) -> Result<Vec<u8>, SysError> {
        let r = self.user_access(map, false).and_then(|_| {
            let m = self.maps.get_mut(&map).ok_or(SysError::NoSuchMap(map))?;
            if let maps::Storage::Fifo { .. } = m.storage {
                let mut out = alloc::vec![0; m.spec.value_size as usize];
                m.pop(&mut out, false).map_err(SysError::Errno)?;
                return Ok(out);
            }
            let slot = m.lookup(key).ok_or(SysError::Errno(maps::ENOENT))?;
            m.value_mut(slot, 0).map(|v| v.to_vec()).ok_or(SysError::Errno(maps::EINVAL))
        });
        self.probe_result(cmd::MAP_LOOKUP, &r);
        r
    }

    pub fn sys_map_update(&mut self, map: u32, key: &[u8], value: &[u8], flags: u64) -> Result<(), SysError> {
        let r = self.user_access(map, true).and_then(|_| {
            let spec = self.maps[&map].spec;
            if key.len() < spec.key_size as usize || value.len() < spec.value_size as usize {
                return Err(SysError::Errno(maps::EINVAL));
            }
            if spec.map_type == MapTypeId::ProgArray {
                let prog = value.get(..4).map_or(0, |b| u32::from_le_bytes(b.try_into().unwrap_or_default()));
                if !self.progs.contains_key(&prog) {
                    return Err(SysError::Errno(maps::EINVAL));
                }
                let m = self.maps.get_mut(&map).ok_or(SysError::NoSuchMap(map))?;
                return m.set_prog(key, prog, flags).map_err(SysError::Errno);
            }
            let r = self.with_lock(map, |m| {
                if let maps::Storage::Fifo { .. } = m.storage {
                    return m.push(value, flags).map(|_| ());
                }
                match m.update(key, value, flags, 0)? {
                    maps::UpdateOutcome::MissingForExist => Err(maps::ENOENT),
                    _ => Ok(()),
                }
            });
            let m = &self.maps[&map];
            let (occ, cap) = (m.occupancy(), m.capacity());
            self.hit(probe::occupancy(spec.map_type.code(), occ));
            if let Some(cap) = cap {
                self.hit(probe::fill(spec.map_type.code(), occ, cap));
            }
            r.map_err(SysError::Errno)
        });
        self.probe_result(cmd::MAP_UPDATE, &r);
        r
    }

    pub fn sys_map_delete(&mut self, map: u32, key: &[u8]) -> Result<(), SysError> {
        let r = self
            .user_access(map, true)
            .and_then(|_| self.with_lock(map, |m| m.delete(key)).map_err(SysError::Errno));
        self.probe_result(cmd::MAP_DELETE, &r);
        r
    }

    pub fn sys_map_lookup_and_delete(&mut self, map: u32, key: &[u8]) -> Result<Vec<u8>, SysError> {
        let r = self.user_access(map, true).and_then(|_| {
            let vs = self.maps[&map].spec.value_size as usize;
            self.with_lock(map, |m| {
                let mut out = alloc::vec![0; vs];
                if let maps::Storage::Fifo { .. } = m.storage {
                    m.pop(&mut out, true)?;
                    return Ok(out);
                }
                let slot = m.lookup(key).ok_or(maps::ENOENT)?;
                out.copy_from_slice(m.value_mut(slot, 0).ok_or(maps::EINVAL)?);
                m.delete(key)?;
                Ok(out)
            })
            .map_err(SysError::Errno)
        });
        self.probe_result(cmd::MAP_LOOKUP_AND_DELETE, &r);
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Interp,
    Linear,
}

fn lock_report(v: Violation) -> BugReport {
    let (location, detail) = match v {
        Violation::IrqUnsafe(c) => (
            probe::lock(c as u32, 3),
            format!("{c:?} lock taken in interrupt context and in task context with interrupts enabled"),
        ),
        Violation::Cycle(a, b) => (probe::oracle(0x10 + a as u32 * 4 + b as u32), format!("{a:?} and {b:?} locks taken in both orders")),
    };
    BugReport { oracle: Oracle::LockContextViolation, location, detail, input_digest: 0 }
}
