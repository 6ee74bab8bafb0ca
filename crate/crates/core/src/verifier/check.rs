//! Per-instruction transfer functions of the verifier.

use alloc::collections::BTreeSet;
use alloc::format;

use super::bounds::{self, Bounds};
use super::state::*;
use super::{MapEnv, RuleId as R, VerifierError};
use crate::catalog::{ArgType, Catalog, HelperId, MapSpecRequest, ProgramTypeId, RetType, ValueType as V};
use crate::isa::*;

/// Largest pointer offset magnitude the verifier tracks.
const MAX_PTR_OFF: i64 = 1 << 29;

fn err(rule: R, i: usize, msg: impl Into<alloc::string::String>) -> VerifierError {
    VerifierError::new(rule, i, msg)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Access {
    Read,
    Write,
}

/// Verification context for one program: catalog, program type and map
/// environment, plus the id counter and summary accumulators.
pub struct Checker<'a> {
    catalog: &'a Catalog,
    pt: ProgramTypeId,
    maps: &'a dyn MapEnv,
    next_id: u32,
    rdonly_prog: u32,
    wronly_prog: u32,
    pub helpers_called: BTreeSet<HelperId>,
    pub maps_touched: BTreeSet<i64>,
}

impl<'a> Checker<'a> {
    pub fn new(catalog: &'a Catalog, pt: ProgramTypeId, maps: &'a dyn MapEnv) -> Self {
        Checker {
            catalog,
            pt,
            maps,
            next_id: 0,
            rdonly_prog: catalog.flag_bit("RDONLY_PROG").unwrap_or(0),
            wronly_prog: catalog.flag_bit("WRONLY_PROG").unwrap_or(0),
            helpers_called: BTreeSet::new(),
            maps_touched: BTreeSet::new(),
        }
    }

    pub fn entry_state(&self) -> VerifierState {
        VerifierState::entry(self.catalog.program_type(self.pt).context.size)
    }

    fn fresh_id(&mut self) -> u32 {
        self.next_id += 1;
        self.next_id
    }

    fn read_reg(&self, st: &VerifierState, r: u8, i: usize) -> Result<RegState, VerifierError> {
        let reg = st.regs[r as usize];
        if !reg.is_init() {
            return Err(err(R::UninitRegRead, i, format!("R{r} !read_ok")));
        }
        Ok(reg)
    }

    fn map_of(&self, handle: Option<i64>) -> Option<MapSpecRequest> {
        handle.and_then(|h| self.maps.map_spec(h))
    }

    /// Any straight-line instruction (ALU, memory, `lddw`, helper call).
    pub fn step(&mut self, st: &mut VerifierState, insn: &Instruction, i: usize) -> Result<(), VerifierError> {
        match insn.kind() {
            Some(OpKind::Alu { .. } | OpKind::Neg { .. } | OpKind::End { .. }) => self.step_alu(st, insn, i),
            Some(OpKind::Load { .. } | OpKind::StoreImm { .. } | OpKind::StoreReg { .. }) => {
                self.step_mem(st, insn, i)
            }
            Some(OpKind::LdImm64) => self.step_ld_imm64(st, insn, i),
            Some(OpKind::Call) => self.check_helper_call(st, insn.imm as u32, i),
            _ => Err(err(R::UnsupportedInsn, i, "not a straight-line instruction")),
        }
    }

    pub fn step_alu(&mut self, st: &mut VerifierState, insn: &Instruction, i: usize) -> Result<(), VerifierError> {
        let dst = insn.dst as usize;
        if dst == FRAME_REG as usize {
            return Err(err(R::FramePointerWrite, i, "frame pointer is read only"));
        }
        let kind = insn.kind().ok_or_else(|| err(R::UnsupportedInsn, i, "unknown opcode"))?;
        match kind {
            OpKind::Neg { wide } => {
                let a = self.read_reg(st, insn.dst, i)?;
                if !a.is_scalar() {
                    return Err(err(R::PtrArithForbidden, i, "negation of pointer"));
                }
                st.regs[dst] = RegState::scalar(bounds::neg(a.bounds, wide));
                Ok(())
            }
            OpKind::End { to_be } => {
                let a = self.read_reg(st, insn.dst, i)?;
                if !a.is_scalar() {
                    return Err(err(R::PtrArithForbidden, i, "byte swap of pointer"));
                }
                st.regs[dst] = RegState::scalar(bounds::end(a.bounds, to_be, insn.imm));
                Ok(())
            }
            OpKind::Alu { op, wide, reg_src } => {
                let src = if reg_src {
                    self.read_reg(st, insn.src, i)?
                } else if wide {
                    RegState::constant(insn.imm as i64 as u64)
                } else {
                    RegState::constant(insn.imm as u32 as u64)
                };
                if !reg_src {
                    let width = if wide { 64 } else { 32 };
                    if matches!(op, BPF_DIV | BPF_MOD) && insn.imm == 0 {
                        return Err(err(R::DivByZeroImm, i, "division by zero"));
                    }
                    if matches!(op, BPF_LSH | BPF_RSH | BPF_ARSH) && (insn.imm < 0 || insn.imm >= width) {
                        return Err(err(R::InvalidShift, i, format!("invalid shift {}", insn.imm)));
                    }
                }
                if op == BPF_MOV {
                    st.regs[dst] = if wide {
                        let mut v = src;
                        if reg_src && v.is_scalar() && v.id == 0 && v.bounds.known().is_none() {
                            let id = self.fresh_id();
                            st.regs[insn.src as usize].id = id;
                            v.id = id;
                        }
                        v
                    } else if src.is_scalar() {
                        RegState::scalar(src.bounds.trunc32())
                    } else {
                        RegState::scalar(Bounds::width(4))
                    };
                    return Ok(());
                }
                let a = self.read_reg(st, insn.dst, i)?;
                if a.is_scalar() && src.is_scalar() {
                    let b = if wide {
                        bounds::alu64(op, a.bounds, src.bounds)
                    } else {
                        bounds::alu32(op, a.bounds, src.bounds)
                    };
                    st.regs[dst] = RegState::scalar(b);
                    return Ok(());
                }
                st.regs[dst] = self.pointer_alu(op, wide, a, src, i)?;
                Ok(())
            }
            _ => Err(err(R::UnsupportedInsn, i, "not an ALU instruction")),
        }
    }

    fn pointer_alu(&mut self, op: u8, wide: bool, a: RegState, b: RegState, i: usize) -> Result<RegState, VerifierError> {
        let arith_ok = |r: &RegState| matches!(r.vtype, V::PtrToStack | V::PtrToMapValue | V::PtrToMem);
        let forbid = |what: &str| Err(err(R::PtrArithForbidden, i, format!("pointer arithmetic {what} prohibited")));
        if !wide {
            return forbid("in 32-bit ALU");
        }
        let (ptr, off, negate) = match (a.is_scalar(), b.is_scalar()) {
            (false, true) if op == BPF_ADD || op == BPF_SUB => (a, b, op == BPF_SUB),
            (true, false) if op == BPF_ADD => (b, a, false),
            (false, false) if op == BPF_SUB && a.vtype == V::PtrToStack && b.vtype == V::PtrToStack => {
                return Ok(RegState::unknown());
            }
            _ => return forbid(&format!("with op {op:#x}")),
        };
        if !arith_ok(&ptr) {
            return forbid(&format!("on {}", ptr.vtype));
        }
        let moved = bounds::alu64(if negate { BPF_SUB } else { BPF_ADD }, ptr.bounds, off.bounds);
        if moved.smin < -MAX_PTR_OFF || moved.smax > MAX_PTR_OFF {
            return forbid("with unbounded offset");
        }
        Ok(RegState { bounds: moved, id: 0, ..ptr })
    }

    pub fn step_ld_imm64(&mut self, st: &mut VerifierState, insn: &Instruction, i: usize) -> Result<(), VerifierError> {
        if insn.dst == FRAME_REG {
            return Err(err(R::FramePointerWrite, i, "frame pointer is read only"));
        }
        let value = insn.wide_imm.unwrap_or(insn.imm as i64);
        if insn.src != PSEUDO_MAP_FD {
            st.regs[insn.dst as usize] = RegState::constant(value as u64);
            return Ok(());
        }
        let spec = self
            .maps
            .map_spec(value)
            .ok_or_else(|| err(R::InvalidMapRef, i, format!("map handle {value} does not resolve")))?;
        let pts = self.catalog.program_type(self.pt);
        if !pts.compatible_maps.contains(&spec.map_type) || spec.flags & pts.forbidden_map_flags != 0 {
            return Err(err(R::MapProgIncompat, i, format!("{} map not usable from {}", spec.map_type, self.pt)));
        }
        self.maps_touched.insert(value);
        st.regs[insn.dst as usize] = RegState { map: Some(value), ..RegState::pointer(V::ConstPtrToMap, None) };
        Ok(())
    }

    pub fn step_mem(&mut self, st: &mut VerifierState, insn: &Instruction, i: usize) -> Result<(), VerifierError> {
        match insn.kind() {
            Some(OpKind::Load { size }) => {
                if insn.dst == FRAME_REG {
                    return Err(err(R::FramePointerWrite, i, "frame pointer is read only"));
                }
                let v = self.mem_access(st, insn.src, insn.offset, size_bytes(size), None, i)?;
                st.regs[insn.dst as usize] = v;
                Ok(())
            }
            Some(OpKind::StoreImm { size }) => {
                let w = size_bytes(size);
                let raw = insn.imm as i64 as u64;
                let v = if w == 8 { raw } else { raw & ((1u64 << (w * 8)) - 1) };
                self.mem_access(st, insn.dst, insn.offset, w, Some(RegState::constant(v)), i)?;
                Ok(())
            }
            Some(OpKind::StoreReg { size }) => {
                let v = self.read_reg(st, insn.src, i)?;
                self.mem_access(st, insn.dst, insn.offset, size_bytes(size), Some(v), i)?;
                Ok(())
            }
            _ => Err(err(R::UnsupportedInsn, i, "not a memory instruction")),
        }
    }

    fn map_flag_check(&self, map: Option<i64>, access: Access, i: usize) -> Result<(), VerifierError> {
        if let Some(spec) = self.map_of(map) {
            if access == Access::Write && spec.flags & self.rdonly_prog != 0 {
                return Err(err(R::MapReadonly, i, "write into map forbidden"));
            }
            if access == Access::Read && spec.flags & self.wronly_prog != 0 {
                return Err(err(R::MapWriteonly, i, "read from map forbidden"));
            }
        }
        Ok(())
    }

    /// A load (`value == None`) or store through register `base`.
    fn mem_access(
        &mut self,
        st: &mut VerifierState,
        base: u8,
        off: i16,
        width: u32,
        value: Option<RegState>,
        i: usize,
    ) -> Result<RegState, VerifierError> {
        let ptr = self.read_reg(st, base, i)?;
        let access = if value.is_some() { Access::Write } else { Access::Read };
        match ptr.vtype {
            V::PtrToStack => {
                let Some(base_off) = ptr.const_offset() else {
                    return Err(err(R::InvalidMemAccess, i, "variable stack access"));
                };
                let addr = base_off + off as i64;
                if addr < -(STACK_SIZE as i64) || addr + width as i64 > 0 {
                    return Err(err(R::StackOob, i, format!("invalid stack off={addr} size={width}")));
                }
                if addr.rem_euclid(width as i64) != 0 {
                    return Err(err(R::InvalidMemAccess, i, format!("misaligned stack access off={addr}")));
                }
                st.depth = st.depth.max((-addr) as u32);
                match value {
                    None => self.stack_read(st, addr, width, i),
                    Some(v) => {
                        stack_write(st, addr, width, v, i)?;
                        Ok(v)
                    }
                }
            }
            V::PtrToMapValue | V::PtrToMem => {
                let size = ptr.mem_size.unwrap_or(0) as i64;
                let lo = ptr.bounds.smin + off as i64;
                let hi = ptr.bounds.smax + off as i64 + width as i64;
                if lo < 0 || hi > size {
                    return Err(err(R::MemOob, i, format!("invalid access off={lo}..{hi} size={size}")));
                }
                if ptr.vtype == V::PtrToMapValue {
                    self.map_flag_check(ptr.map, access, i)?;
                }
                match value {
                    Some(v) if !v.is_scalar() => Err(err(R::PtrLeak, i, "pointer stored into memory")),
                    Some(v) => Ok(v),
                    None => Ok(RegState::scalar(Bounds::width(width))),
                }
            }
            V::PtrToCtx => {
                let ctx = &self.catalog.program_type(self.pt).context;
                let field = ptr
                    .const_offset()
                    .and_then(|o| ctx.field_at(o + off as i64, width))
                    .ok_or_else(|| err(R::CtxAccessDenied, i, format!("invalid bpf_context access off={off} size={width}")))?;
                let allowed = if access == Access::Write { field.write } else { field.read };
                if !allowed {
                    return Err(err(R::CtxAccessDenied, i, format!("context field {} not accessible", field.name)));
                }
                match value {
                    Some(v) if !v.is_scalar() => Err(err(R::PtrLeak, i, "pointer stored into context")),
                    Some(v) => Ok(v),
                    None if field.yields == V::Scalar => Ok(RegState::scalar(Bounds::width(width))),
                    None => Ok(RegState::pointer(field.yields, None)),
                }
            }
            V::PtrToMapValueOrNull | V::PtrToMemOrNull => {
                Err(err(R::NullDeref, i, format!("R{base} invalid mem access '{}'", ptr.vtype)))
            }
            _ => Err(err(R::InvalidMemAccess, i, format!("R{base} invalid mem access '{}'", ptr.vtype))),
        }
    }

    fn stack_read(&mut self, st: &mut VerifierState, addr: i64, width: u32, i: usize) -> Result<RegState, VerifierError> {
        let pos = (STACK_SIZE as i64 + addr) as usize;
        let (slot, byte) = (pos / 8, pos % 8);
        match st.stack[slot] {
            Slot::Spill(r) if width == 8 => {
                if r.is_scalar() && r.id == 0 && r.bounds.known().is_none() {
                    let id = self.fresh_id();
                    let mut r = r;
                    r.id = id;
                    st.stack[slot] = Slot::Spill(r);
                    return Ok(r);
                }
                Ok(r)
            }
            Slot::Spill(r) if r.is_scalar() => match r.bounds.known() {
                Some(v) => {
                    let mask = (1u64 << (width * 8)) - 1;
                    Ok(RegState::constant((v >> (byte * 8)) & mask))
                }
                None => Ok(RegState::scalar(Bounds::width(width))),
            },
            Slot::Spill(_) => Err(err(R::InvalidMemAccess, i, "partial read of spilled pointer")),
            Slot::Misc(m) => {
                let want = byte_mask(byte, width);
                if m & want != want {
                    return Err(err(R::UninitStackRead, i, format!("invalid read from stack off {addr}")));
                }
                Ok(RegState::scalar(Bounds::width(width)))
            }
        }
    }

    /// Checks a helper's access to `size` bytes behind argument register `r`.
    fn helper_mem(
        &mut self,
        st: &mut VerifierState,
        r: u8,
        size: u64,
        access: Access,
        bound_rule: Option<R>,
        i: usize,
    ) -> Result<(), VerifierError> {
        let ptr = st.regs[r as usize];
        match ptr.vtype {
            V::PtrToStack => {
                let Some(lo) = ptr.const_offset() else {
                    return Err(err(R::InvalidMemAccess, i, format!("R{r} variable stack pointer")));
                };
                let hi = lo.saturating_add(size.min(1 << 20) as i64);
                if lo < -(STACK_SIZE as i64) || hi > 0 {
                    return Err(err(bound_rule.unwrap_or(R::StackOob), i, format!("R{r} stack range {lo}..{hi}")));
                }
                st.depth = st.depth.max((-lo) as u32);
                for addr in lo..hi {
                    let pos = (STACK_SIZE as i64 + addr) as usize;
                    let (slot, byte) = (pos / 8, pos % 8);
                    match access {
                        Access::Read => {
                            if st.stack[slot].init_mask() & (1 << byte) == 0 {
                                return Err(err(R::UninitStackRead, i, format!("R{r} reads uninitialized stack at {addr}")));
                            }
                        }
                        Access::Write => {
                            st.stack[slot] = Slot::Misc(st.stack[slot].init_mask() | (1 << byte));
                        }
                    }
                }
                Ok(())
            }
            V::PtrToMapValue | V::PtrToMem => {
                let mem = ptr.mem_size.unwrap_or(0) as u64;
                let fits = ptr.bounds.smin >= 0
                    && (ptr.bounds.smax as u64).checked_add(size).is_some_and(|end| end <= mem);
                if !fits {
                    return Err(err(bound_rule.unwrap_or(R::MemOob), i, format!("R{r} access of {size} bytes exceeds {mem}")));
                }
                if ptr.vtype == V::PtrToMapValue {
                    self.map_flag_check(ptr.map, access, i)?;
                }
                Ok(())
            }
            V::PtrToMapValueOrNull | V::PtrToMemOrNull => Err(err(R::NullDeref, i, format!("R{r} may be null"))),
            other => Err(err(R::ArgTypeMismatch, i, format!("R{r} type={other} is not memory"))),
        }
    }

    pub fn check_helper_call(&mut self, st: &mut VerifierState, helper: u32, i: usize) -> Result<(), VerifierError> {
        let catalog = self.catalog;
        let id = HelperId(helper);
        let proto = catalog
            .helper(id)
            .ok_or_else(|| err(R::UnknownHelper, i, format!("invalid func unknown#{helper}")))?;
        if !catalog.is_available(self.pt, id) {
            return Err(err(R::HelperUnavailable, i, format!("unknown func bpf_{} for {}", proto.name, self.pt)));
        }
        let mut map: Option<(i64, MapSpecRequest)> = None;
        let mut mem_arg: Option<(u8, Access)> = None;
        let mut alloc_size: Option<u64> = None;
        let mut release: Option<u32> = None;
        for (k, &arg) in proto.args.iter().enumerate() {
            let r = (k + 1) as u8;
            let reg = self.read_reg(st, r, i)?;
            if !catalog.compatible_value_types(arg).contains(&reg.vtype) {
                if arg == ArgType::PtrToRef && reg.vtype == V::PtrToMem {
                    return Err(err(R::ReleaseWithoutRef, i, format!("R{r} does not hold an acquired reference")));
                }
                return Err(err(R::ArgTypeMismatch, i, format!("R{r} type={} expected {arg}", reg.vtype)));
            }
            match arg {
                ArgType::ConstMapPtr => {
                    let handle = reg.map.unwrap_or(-1);
                    let spec = self
                        .maps
                        .map_spec(handle)
                        .ok_or_else(|| err(R::InvalidMapRef, i, "map pointer does not resolve"))?;
                    let allowed = catalog.maps_for(self.pt, id).unwrap_or_default();
                    if !allowed.contains(&spec.map_type) {
                        return Err(err(
                            R::MapFuncIncompat,
                            i,
                            format!("cannot pass map_type {} into func bpf_{}", spec.map_type, proto.name),
                        ));
                    }
                    if proto.map_writes && spec.flags & self.rdonly_prog != 0 {
                        return Err(err(R::MapReadonly, i, "write into map forbidden"));
                    }
                    if proto.map_reads && spec.flags & self.wronly_prog != 0 {
                        return Err(err(R::MapWriteonly, i, "read from map forbidden"));
                    }
                    map = Some((handle, spec));
                }
                ArgType::PtrToMapKey | ArgType::PtrToMapValue | ArgType::PtrToUninitMapValue => {
                    let (_, spec) = map.ok_or_else(|| err(R::ArgTypeMismatch, i, "map argument missing"))?;
                    let (size, access) = match arg {
                        ArgType::PtrToMapKey => (spec.key_size, Access::Read),
                        ArgType::PtrToMapValue => (spec.value_size, Access::Read),
                        _ => (spec.value_size, Access::Write),
                    };
                    self.helper_mem(st, r, size as u64, access, None, i)?;
                }
                ArgType::PtrToMem => mem_arg = Some((r, Access::Read)),
                ArgType::PtrToUninitMem => mem_arg = Some((r, Access::Write)),
                ArgType::ConstSize | ArgType::ConstSizeOrZero => {
                    let b = reg.bounds;
                    let zero_ok = arg == ArgType::ConstSizeOrZero;
                    if k > 0 && proto.args[k - 1] == ArgType::ConstMapPtr {
                        let v = reg
                            .known_const()
                            .ok_or_else(|| err(R::AllocSizeNotConst, i, format!("R{r} is not a known constant")))?;
                        if v == 0 && !zero_ok {
                            return Err(err(R::ZeroSizeArg, i, format!("R{r} invalid zero-sized allocation")));
                        }
                        if v > u32::MAX as u64 {
                            return Err(err(R::SizeExceedsMem, i, format!("R{r} allocation too large")));
                        }
                        alloc_size = Some(v);
                        continue;
                    }
                    let (mr, access) = mem_arg
                        .take()
                        .ok_or_else(|| err(R::ArgTypeMismatch, i, "size argument without memory argument"))?;
                    if b.smin < 0 {
                        return Err(err(R::SizeExceedsMem, i, format!("R{r} min value is negative")));
                    }
                    if b.umax > 0 {
                        self.helper_mem(st, mr, b.umax, access, Some(R::SizeExceedsMem), i)?;
                    }
                    if b.umin == 0 && !zero_ok {
                        return Err(err(R::ZeroSizeArg, i, format!("R{r} invalid zero-sized read")));
                    }
                }
                ArgType::PtrToCtx => {
                    if reg.const_offset() != Some(0) {
                        return Err(err(R::ArgTypeMismatch, i, format!("R{r} modified ctx pointer")));
                    }
                }
                ArgType::PtrToRef => {
                    let rid = reg
                        .ref_id
                        .filter(|rid| st.has_ref(*rid))
                        .ok_or_else(|| err(R::ReleaseWithoutRef, i, format!("R{r} does not hold an acquired reference")))?;
                    if reg.const_offset() != Some(0) {
                        return Err(err(R::ArgTypeMismatch, i, format!("R{r} must have zero offset when released")));
                    }
                    release = Some(rid);
                }
                ArgType::Anything => {}
            }
        }
        if id == crate::catalog::helper_ids::TAIL_CALL && !st.refs.is_empty() {
            return Err(err(R::TailCallWithRef, i, "tail_call would lead to reference leak"));
        }
        if let Some(rid) = release {
            st.refs.retain(|e| e.id != rid);
            for r in st.regs.iter_mut() {
                if r.ref_id == Some(rid) {
                    *r = RegState::unknown();
                }
            }
            for s in st.stack.iter_mut() {
                if matches!(s, Slot::Spill(r) if r.ref_id == Some(rid)) {
                    *s = Slot::Spill(RegState::unknown());
                }
            }
        }
        for r in 1..=5 {
            st.regs[r] = RegState::UNINIT;
        }
        st.regs[0] = match proto.ret {
            RetType::Integer => RegState::unknown(),
            RetType::Void => RegState::UNINIT,
            RetType::PtrToMapValueOrNull => {
                let (handle, spec) = map.ok_or_else(|| err(R::ArgTypeMismatch, i, "lookup without map"))?;
                let id = self.fresh_id();
                RegState {
                    map: Some(handle),
                    id,
                    ..RegState::pointer(V::PtrToMapValueOrNull, Some(spec.value_size))
                }
            }
            RetType::PtrToMemOrNull => {
                let size = alloc_size.ok_or_else(|| err(R::AllocSizeNotConst, i, "allocation size unknown"))?;
                let id = self.fresh_id();
                let ref_id = if proto.acquires.is_some() {
                    st.refs.push(RefEntry { id, helper, insn: i, status: RefStatus::Pending });
                    Some(id)
                } else {
                    None
                };
                RegState { id, ref_id, ..RegState::pointer(V::PtrToMemOrNull, Some(size as u32)) }
            }
        };
        self.helpers_called.insert(id);
        Ok(())
    }

    /// Returns `(fallthrough, taken)` successor states; `None` marks an arm
    /// the analysis proved infeasible.
    pub fn step_branch(
        &mut self,
        st: VerifierState,
        insn: &Instruction,
        i: usize,
    ) -> Result<(Option<VerifierState>, Option<VerifierState>), VerifierError> {
        let Some(OpKind::CondJump { op, wide, reg_src }) = insn.kind() else {
            return Err(err(R::UnsupportedInsn, i, "not a conditional jump"));
        };
        let a = self.read_reg(&st, insn.dst, i)?;
        let b = if reg_src {
            self.read_reg(&st, insn.src, i)?
        } else if wide {
            RegState::constant(insn.imm as i64 as u64)
        } else {
            RegState::constant(insn.imm as u32 as u64)
        };

        if !a.is_scalar() || !b.is_scalar() {
            let bad = || err(R::BadCmpTypes, i, format!("R{} pointer comparison prohibited", insn.dst));
            if !wide || (op != BPF_JEQ && op != BPF_JNE) {
                return Err(bad());
            }
            let (ptr, preg) = match (a.is_scalar(), b.is_scalar()) {
                (false, true) if b.known_const() == Some(0) => (a, insn.dst),
                (true, false) if a.known_const() == Some(0) => (b, insn.src),
                _ => return Err(bad()),
            };
            let (null_arm, nonnull_arm) = if ptr.maybe_null() {
                (Some(mark_null(&st, ptr, preg)), Some(mark_nonnull(&st, ptr, preg)))
            } else {
                (None, Some(st))
            };
            return Ok(if op == BPF_JEQ { (nonnull_arm, null_arm) } else { (null_arm, nonnull_arm) });
        }

        if !wide {
            return Ok(match (a.bounds.trunc32().known(), b.bounds.trunc32().known()) {
                (Some(x), Some(y)) => {
                    if bounds::eval_cmp(op, x, y) {
                        (None, Some(st))
                    } else {
                        (Some(st), None)
                    }
                }
                _ => (Some(st.clone()), Some(st)),
            });
        }

        let apply = |mut s: VerifierState, na: Bounds, nb: Bounds| {
            set_bounds(&mut s, insn.dst, a.id, na);
            if reg_src {
                if insn.src == insn.dst {
                    let both = Bounds::intersect(na, nb);
                    set_bounds(&mut s, insn.dst, a.id, both);
                } else {
                    set_bounds(&mut s, insn.src, b.id, nb);
                }
            }
            s
        };
        let taken = bounds::refine(op, a.bounds, b.bounds).map(|(na, nb)| apply(st.clone(), na, nb));
        let fall = bounds::refine_not(op, a.bounds, b.bounds).map(|(na, nb)| apply(st, na, nb));
        Ok((fall, taken))
    }

    /// Exit checks: all references released, r0 a scalar.
    pub fn finalize(&self, st: &VerifierState, i: usize) -> Result<(), VerifierError> {
        if let Some(r) = st.refs.first() {
            return Err(err(
                R::RefLeak,
                i,
                format!("Unreleased reference id={} alloc_insn={}", r.id, r.insn),
            ));
        }
        let r0 = st.regs[0];
        if !r0.is_init() {
            return Err(err(R::R0Uninit, i, "R0 !read_ok"));
        }
        if !r0.is_scalar() {
            return Err(err(R::RetNotScalar, i, format!("R0 is {}, expected scalar", r0.vtype)));
        }
        Ok(())
    }
}

fn byte_mask(byte: usize, width: u32) -> u8 {
    let bits = if width >= 8 { 0xffu16 } else { (1u16 << width) - 1 };
    ((bits << byte) & 0xff) as u8
}

fn stack_write(st: &mut VerifierState, addr: i64, width: u32, v: RegState, i: usize) -> Result<(), VerifierError> {
    let pos = (STACK_SIZE as i64 + addr) as usize;
    let (slot, byte) = (pos / 8, pos % 8);
    if width == 8 {
        st.stack[slot] = Slot::Spill(v);
        return Ok(());
    }
    if !v.is_scalar() {
        return Err(err(R::InvalidMemAccess, i, "partial spill of pointer"));
    }
    st.stack[slot] = Slot::Misc(st.stack[slot].init_mask() | byte_mask(byte, width));
    Ok(())
}

fn set_bounds(st: &mut VerifierState, reg: u8, id: u32, b: Bounds) {
    st.regs[reg as usize].bounds = b;
    st.for_each_with_id(id, |r| {
        if r.is_scalar() {
            r.bounds = Bounds::intersect(r.bounds, b);
        }
    });
}

fn mark_null(st: &VerifierState, ptr: RegState, reg: u8) -> VerifierState {
    let mut s = st.clone();
    let zero = RegState { id: ptr.id, ..RegState::constant(0) };
    if ptr.id == 0 {
        s.regs[reg as usize] = zero;
    } else {
        s.for_each_with_id(ptr.id, |r| *r = zero);
    }
    if let Some(rid) = ptr.ref_id {
        s.refs.retain(|e| !(e.id == rid && e.status == RefStatus::Pending));
    }
    s
}

fn mark_nonnull(st: &VerifierState, ptr: RegState, reg: u8) -> VerifierState {
    let mut s = st.clone();
    if ptr.id == 0 {
        let r = &mut s.regs[reg as usize];
        r.vtype = r.vtype.non_null();
    } else {
        s.for_each_with_id(ptr.id, |r| r.vtype = r.vtype.non_null());
    }
    if let Some(rid) = ptr.ref_id {
        for e in s.refs.iter_mut() {
            if e.id == rid && e.status == RefStatus::Pending {
                e.status = RefStatus::Held;
            }
        }
    }
    s
}
