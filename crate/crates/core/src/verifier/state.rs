//! Abstract register and stack state, and the join used at merge points.

use alloc::vec::Vec;

use super::bounds::Bounds;
use crate::catalog::ValueType;

pub const STACK_SIZE: usize = 512;
pub const STACK_SLOTS: usize = STACK_SIZE / 8;

/// Abstract value of one register.
///
/// For scalars `bounds` is the value range; for pointers it is the range of
/// the offset from the start of the pointed region (for stack pointers, from
/// the frame pointer).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegState {
    pub vtype: ValueType,
    pub bounds: Bounds,
    /// Map handle behind `CONST_PTR_TO_MAP` and map-value pointers.
    pub map: Option<i64>,
    /// Size of the region behind map-value, memory and context pointers.
    pub mem_size: Option<u32>,
    pub ref_id: Option<u32>,
    /// Registers and spills sharing a non-zero id hold the same value.
    pub id: u32,
}

impl RegState {
    pub const UNINIT: RegState = RegState {
        vtype: ValueType::Uninit,
        bounds: Bounds::FULL,
        map: None,
        mem_size: None,
        ref_id: None,
        id: 0,
    };

    pub fn scalar(bounds: Bounds) -> RegState {
        RegState { vtype: ValueType::Scalar, bounds, ..RegState::UNINIT }
    }

    pub fn constant(v: u64) -> RegState {
        Self::scalar(Bounds::constant(v))
    }

    pub fn unknown() -> RegState {
        Self::scalar(Bounds::FULL)
    }

    pub fn pointer(vtype: ValueType, mem_size: Option<u32>) -> RegState {
        RegState { vtype, bounds: Bounds::constant(0), mem_size, ..RegState::UNINIT }
    }

    pub fn is_init(&self) -> bool {
        self.vtype != ValueType::Uninit
    }

    pub fn is_scalar(&self) -> bool {
        self.vtype == ValueType::Scalar
    }

    pub fn maybe_null(&self) -> bool {
        self.vtype.is_nullable()
    }

    pub fn known_const(&self) -> Option<u64> {
        if self.is_scalar() {
            self.bounds.known()
        } else {
            None
        }
    }

    /// Constant offset of a pointer, if it has one.
    pub fn const_offset(&self) -> Option<i64> {
        self.bounds.known().map(|v| v as i64)
    }
}

/// One 8-byte stack slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Untyped bytes; bit `i` of the mask says byte `i` is initialized.
    Misc(u8),
    /// A full register spilled with an aligned 8-byte store.
    Spill(RegState),
}

impl Slot {
    pub fn init_mask(&self) -> u8 {
        match self {
            Slot::Misc(m) => *m,
            Slot::Spill(_) => 0xff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefStatus {
    /// Fresh from the acquiring call, not yet compared against null.
    Pending,
    /// Known non-null on this path.
    Held,
    /// Paths with differing knowledge were merged; the reference is
    /// conservatively considered live on every path.
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefEntry {
    pub id: u32,
    pub helper: u32,
    pub insn: usize,
    pub status: RefStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierState {
    pub regs: [RegState; 11],
    pub stack: [Slot; STACK_SLOTS],
    pub refs: Vec<RefEntry>,
    /// Deepest stack byte touched so far.
    pub depth: u32,
}

impl VerifierState {
    /// State at program entry: r1 is the context, r10 the frame pointer.
    pub fn entry(ctx_size: u32) -> VerifierState {
        let mut regs = [RegState::UNINIT; 11];
        regs[1] = RegState::pointer(ValueType::PtrToCtx, Some(ctx_size));
        regs[10] = RegState::pointer(ValueType::PtrToStack, None);
        VerifierState { regs, stack: [Slot::Misc(0); STACK_SLOTS], refs: Vec::new(), depth: 0 }
    }

    /// Applies `f` to every register and spilled register carrying `id`.
    pub fn for_each_with_id(&mut self, id: u32, mut f: impl FnMut(&mut RegState)) {
        if id == 0 {
            return;
        }
        for r in self.regs.iter_mut() {
            if r.id == id {
                f(r);
            }
        }
        for s in self.stack.iter_mut() {
            if let Slot::Spill(r) = s {
                if r.id == id {
                    f(r);
                }
            }
        }
    }

    pub fn has_ref(&self, id: u32) -> bool {
        self.refs.iter().any(|r| r.id == id)
    }

    /// Merges the state of another incoming edge into this one.
    pub fn join(&self, other: &VerifierState) -> VerifierState {
        let mut regs = [RegState::UNINIT; 11];
        for (i, r) in regs.iter_mut().enumerate() {
            *r = join_reg(&self.regs[i], &other.regs[i]);
        }
        let mut stack = [Slot::Misc(0); STACK_SLOTS];
        for (i, s) in stack.iter_mut().enumerate() {
            *s = match (self.stack[i], other.stack[i]) {
                (Slot::Spill(a), Slot::Spill(b)) => {
                    let j = join_reg(&a, &b);
                    if j.is_init() {
                        Slot::Spill(j)
                    } else {
                        Slot::Misc(0xff)
                    }
                }
                (a, b) => Slot::Misc(a.init_mask() & b.init_mask()),
            };
        }
        let mut refs: Vec<RefEntry> = Vec::new();
        for r in &self.refs {
            let mut e = *r;
            match other.refs.iter().find(|o| o.id == r.id) {
                Some(o) if o.status == r.status => {}
                _ => e.status = RefStatus::Merged,
            }
            refs.push(e);
        }
        for o in &other.refs {
            if !self.has_ref(o.id) {
                refs.push(RefEntry { status: RefStatus::Merged, ..*o });
            }
        }
        refs.sort_by_key(|r| r.id);
        VerifierState { regs, stack, refs, depth: self.depth.max(other.depth) }
    }
}

/// Least upper bound of two register states. Incompatible kinds join to
/// `UNINIT`, which makes any later use fail.
pub fn join_reg(a: &RegState, b: &RegState) -> RegState {
    use ValueType as V;
    if !a.is_init() || !b.is_init() {
        return RegState::UNINIT;
    }
    if a.is_scalar() && b.is_scalar() {
        let id = if a.id == b.id { a.id } else { 0 };
        return RegState { id, ..RegState::scalar(Bounds::hull(a.bounds, b.bounds)) };
    }
    // A null-checked pointer whose null arm became the scalar 0 rejoins as
    // the nullable type, as long as both sides descend from the same value.
    let nullable_family = |r: &RegState| {
        matches!(r.vtype, V::PtrToMapValue | V::PtrToMem | V::PtrToMapValueOrNull | V::PtrToMemOrNull)
    };
    let is_zero = |r: &RegState| r.known_const() == Some(0);
    if is_zero(a) || is_zero(b) {
        let (ptr, zero) = if is_zero(a) { (b, a) } else { (a, b) };
        if zero.id != 0 && zero.id == ptr.id && nullable_family(ptr) {
            return RegState { vtype: ptr.vtype.nullable(), ..*ptr };
        }
        return RegState::UNINIT;
    }
    let vtype = if a.vtype == b.vtype {
        a.vtype
    } else if nullable_family(a) && a.vtype.nullable() == b.vtype.nullable() && a.id != 0 && a.id == b.id {
        a.vtype.nullable()
    } else {
        return RegState::UNINIT;
    };
    if a.map != b.map || a.ref_id != b.ref_id {
        return RegState::UNINIT;
    }
    let mem_size = match (a.mem_size, b.mem_size) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    };
    RegState {
        vtype,
        bounds: Bounds::hull(a.bounds, b.bounds),
        map: a.map,
        mem_size,
        ref_id: a.ref_id,
        id: if a.id == b.id { a.id } else { 0 },
    }
}
