//! Static verifier model: control-flow checks followed by abstract
//! interpretation over register and stack states.
//!
//! The control-flow graph must be acyclic, so states are propagated in
//! topological order and merged at join points. Merging is what makes the
//! reference analysis conservative: a reference that is live on one incoming
//! path and not on another stays live after the merge.

pub mod bounds;
mod check;
pub mod state;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use bounds::Bounds;
pub use check::Checker;
pub use state::{RefEntry, RefStatus, RegState, Slot, VerifierState, STACK_SIZE};

use crate::catalog::{Catalog, HelperId, MapSpecRequest};
use crate::isa::{Instruction, OpKind, RawProgram, SlotMap, LD_DW_IMM, PSEUDO_CALL, PSEUDO_MAP_FD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Syntax,
    Semantic,
    Internal,
    Other,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Syntax => "syntax",
            Category::Semantic => "semantic",
            Category::Internal => "internal",
            Category::Other => "other",
        }
    }
}

macro_rules! rules {
    ($($variant:ident => $text:expr, $cat:ident;)*) => {
        /// Stable identifier of the rule a rejected program violated.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum RuleId { $($variant,)* }

        impl RuleId {
            pub const ALL: &'static [RuleId] = &[$(RuleId::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self { $(RuleId::$variant => $text,)* }
            }

            pub fn category(self) -> Category {
                match self { $(RuleId::$variant => Category::$cat,)* }
            }

            pub fn from_name(text: &str) -> Option<RuleId> {
                Self::ALL.iter().copied().find(|r| r.as_str() == text)
            }
        }
    };
}

rules! {
    MalformedBytecode => "malformed_bytecode", Syntax;
    EmptyProgram => "empty_program", Syntax;
    LoopDetected => "loop_detected", Syntax;
    JumpOutOfRange => "jump_out_of_range", Syntax;
    JumpIntoLdImm64 => "jump_into_ld_imm64", Syntax;
    BadLastInsn => "bad_last_insn", Syntax;
    UnreachableInsn => "unreachable_insn", Syntax;
    UnsupportedInsn => "unsupported_insn", Syntax;
    ReservedField => "reserved_field", Syntax;
    DivByZeroImm => "div_by_zero_imm", Semantic;
    InvalidShift => "invalid_shift", Semantic;
    UninitRegRead => "uninit_reg_read", Semantic;
    FramePointerWrite => "frame_pointer_write", Semantic;
    PtrArithForbidden => "ptr_arith_forbidden", Semantic;
    StackOob => "stack_oob", Semantic;
    UninitStackRead => "uninit_stack_read", Semantic;
    MemOob => "mem_oob", Semantic;
    NullDeref => "null_deref", Semantic;
    CtxAccessDenied => "ctx_access_denied", Semantic;
    InvalidMemAccess => "invalid_mem_access", Semantic;
    PtrLeak => "ptr_leak", Semantic;
    BadCmpTypes => "bad_cmp_types", Semantic;
    UnknownHelper => "unknown_helper", Semantic;
    HelperUnavailable => "helper_unavailable", Semantic;
    ArgTypeMismatch => "arg_type_mismatch", Semantic;
    SizeExceedsMem => "size_exceeds_mem", Semantic;
    ZeroSizeArg => "zero_size_arg", Semantic;
    AllocSizeNotConst => "alloc_size_not_const", Semantic;
    MapFuncIncompat => "map_func_incompat", Semantic;
    MapProgIncompat => "map_prog_incompat", Semantic;
    MapReadonly => "map_readonly", Semantic;
    MapWriteonly => "map_writeonly", Semantic;
    ReleaseWithoutRef => "release_without_ref", Semantic;
    TailCallWithRef => "tail_call_with_ref", Semantic;
    RefLeak => "ref_leak", Semantic;
    R0Uninit => "r0_uninit", Semantic;
    RetNotScalar => "ret_not_scalar", Semantic;
    ComplexityExceeded => "complexity_exceeded", Internal;
    InvalidMapRef => "invalid_map_ref", Other;
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierError {
    pub rule: RuleId,
    pub insn_index: usize,
    pub message: String,
}

impl VerifierError {
    pub fn new(rule: RuleId, insn_index: usize, message: impl Into<String>) -> Self {
        Self { rule, insn_index, message: message.into() }
    }

    pub fn category(&self) -> Category {
        self.rule.category()
    }
}

impl fmt::Display for VerifierError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at insn {}: {}", self.rule, self.insn_index, self.message)
    }
}

impl core::error::Error for VerifierError {}

/// Resolves the immediate of a map-referencing `lddw` to the map's attributes.
pub trait MapEnv {
    fn map_spec(&self, handle: i64) -> Option<MapSpecRequest>;
}

/// Before relocation a map load's immediate is an ordinal into this list.
impl MapEnv for &[MapSpecRequest] {
    fn map_spec(&self, handle: i64) -> Option<MapSpecRequest> {
        usize::try_from(handle).ok().and_then(|i| self.get(i)).copied()
    }
}

impl<const N: usize> MapEnv for [MapSpecRequest; N] {
    fn map_spec(&self, handle: i64) -> Option<MapSpecRequest> {
        (&self[..]).map_spec(handle)
    }
}

impl MapEnv for Vec<MapSpecRequest> {
    fn map_spec(&self, handle: i64) -> Option<MapSpecRequest> {
        self.as_slice().map_spec(handle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifierConfig {
    /// Upper bound on abstract instruction visits.
    pub max_states: usize,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self { max_states: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerifySummary {
    pub max_stack_depth: u32,
    pub helpers_called: Vec<HelperId>,
    pub maps_touched: Vec<i64>,
    pub insns_processed: usize,
}

/// Successor structure and a topological order of the reachable program.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub slots: SlotMap,
    /// `[fallthrough, jump target]` per instruction.
    pub succs: Vec<[Option<usize>; 2]>,
    pub order: Vec<usize>,
}

fn reserved_fields_ok(insn: &Instruction, kind: OpKind) -> bool {
    let (d, s, off, imm) = (insn.dst, insn.src, insn.offset, insn.imm);
    match kind {
        OpKind::Alu { reg_src: false, .. } => s == 0 && off == 0,
        OpKind::Alu { reg_src: true, .. } => imm == 0 && off == 0,
        OpKind::Neg { .. } => s == 0 && off == 0 && imm == 0,
        OpKind::End { .. } => s == 0 && off == 0 && matches!(imm, 16 | 32 | 64),
        OpKind::Ja => d == 0 && s == 0 && imm == 0,
        OpKind::CondJump { reg_src: false, .. } => s == 0,
        OpKind::CondJump { reg_src: true, .. } => imm == 0,
        OpKind::Call => d == 0 && off == 0,
        OpKind::Exit => d == 0 && s == 0 && off == 0 && imm == 0,
        OpKind::LdImm64 => off == 0,
        OpKind::Load { .. } => imm == 0,
        OpKind::StoreImm { .. } => s == 0,
        OpKind::StoreReg { .. } => imm == 0,
        OpKind::LdPacket { .. } | OpKind::Atomic { .. } => true,
    }
}

/// Structural checks: supported opcodes, reserved fields, final
/// instruction, jump targets, acyclicity and reachability.
pub fn check_cfg(insns: &[Instruction]) -> Result<Cfg, VerifierError> {
    use RuleId as R;
    let n = insns.len();
    if n == 0 {
        return Err(VerifierError::new(R::EmptyProgram, 0, "program has no instructions"));
    }
    for (i, insn) in insns.iter().enumerate() {
        let Some(kind) = insn.kind() else {
            return Err(VerifierError::new(R::UnsupportedInsn, i, "unknown opcode"));
        };
        let unsupported = match kind {
            OpKind::LdPacket { .. } => Some("legacy packet load"),
            OpKind::Atomic { .. } => Some("atomic memory operation"),
            OpKind::Call if insn.src == PSEUDO_CALL => Some("local function call"),
            OpKind::Call if insn.src != 0 => Some("call with unknown source marker"),
            OpKind::LdImm64 if insn.src != 0 && insn.src != PSEUDO_MAP_FD => Some("lddw pseudo source"),
            _ => None,
        };
        if let Some(what) = unsupported {
            return Err(VerifierError::new(R::UnsupportedInsn, i, what));
        }
        if !reserved_fields_ok(insn, kind) {
            return Err(VerifierError::new(R::ReservedField, i, "reserved field is non-zero"));
        }
        if insn.opcode == LD_DW_IMM && insn.wide_imm.is_none() {
            return Err(VerifierError::new(R::MalformedBytecode, i, "lddw without upper half"));
        }
    }
    let last = insns[n - 1].kind();
    if !matches!(last, Some(OpKind::Exit) | Some(OpKind::Ja)) {
        return Err(VerifierError::new(R::BadLastInsn, n - 1, "last insn is not an exit or jmp"));
    }
    let slots = SlotMap::new(insns);
    let mut succs = vec![[None, None]; n];
    for (i, insn) in insns.iter().enumerate() {
        let kind = insn.kind().unwrap_or(OpKind::Exit);
        let target = || match slots.jump_target(i, insn.offset) {
            Ok(t) => Ok(t),
            Err(true) => Err(VerifierError::new(R::JumpIntoLdImm64, i, "jump into the middle of ldimm64")),
            Err(false) => Err(VerifierError::new(R::JumpOutOfRange, i, "jump out of range")),
        };
        succs[i] = match kind {
            OpKind::Exit => [None, None],
            OpKind::Ja => [None, Some(target()?)],
            OpKind::CondJump { .. } => [Some(i + 1), Some(target()?)],
            _ => [Some(i + 1), None],
        };
    }

    // Iterative depth-first search; an edge to a node on the current path
    // closes a cycle.
    const WHITE: u8 = 0;
    const GRAY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; n];
    let mut postorder = Vec::with_capacity(n);
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    color[0] = GRAY;
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        if *next < 2 {
            let edge = succs[node][*next];
            *next += 1;
            if let Some(t) = edge {
                match color[t] {
                    WHITE => {
                        color[t] = GRAY;
                        stack.push((t, 0));
                    }
                    GRAY => {
                        return Err(VerifierError::new(R::LoopDetected, node, "back-edge"));
                    }
                    _ => {}
                }
            }
        } else {
            color[node] = BLACK;
            postorder.push(node);
            stack.pop();
        }
    }
    if let Some(i) = color.iter().position(|c| *c != BLACK) {
        return Err(VerifierError::new(R::UnreachableInsn, i, "unreachable insn"));
    }
    postorder.reverse();
    Ok(Cfg { slots, succs, order: postorder })
}

/// Verifies a program against its map environment and the catalog.
pub fn verify(prog: &RawProgram, maps: &dyn MapEnv, catalog: &Catalog) -> Result<VerifySummary, VerifierError> {
    verify_with(prog, maps, catalog, &VerifierConfig::default())
}

pub fn verify_with(
    prog: &RawProgram,
    maps: &dyn MapEnv,
    catalog: &Catalog,
    config: &VerifierConfig,
) -> Result<VerifySummary, VerifierError> {
    let cfg = check_cfg(&prog.insns)?;
    let mut checker = Checker::new(catalog, prog.prog_type, maps);
    let n = prog.insns.len();
    let mut pending: Vec<Option<VerifierState>> = vec![None; n];
    pending[0] = Some(checker.entry_state());
    let mut processed = 0usize;
    let mut max_depth = 0u32;

    fn deliver(pending: &mut [Option<VerifierState>], to: usize, st: VerifierState) {
        pending[to] = Some(match pending[to].take() {
            None => st,
            Some(prev) => prev.join(&st),
        });
    }

    for &i in &cfg.order {
        let Some(mut st) = pending[i].take() else { continue };
        processed += 1;
        if processed > config.max_states {
            return Err(VerifierError::new(RuleId::ComplexityExceeded, i, "too many states"));
        }
        let insn = &prog.insns[i];
        let [fall, target] = cfg.succs[i];
        match insn.kind() {
            Some(OpKind::Exit) => {
                checker.finalize(&st, i)?;
                max_depth = max_depth.max(st.depth);
            }
            Some(OpKind::Ja) => {
                if let Some(t) = target {
                    deliver(&mut pending, t, st);
                }
            }
            Some(OpKind::CondJump { .. }) => {
                let (not_taken, taken) = checker.step_branch(st, insn, i)?;
                if let (Some(s), Some(t)) = (not_taken, fall) {
                    deliver(&mut pending, t, s);
                }
                if let (Some(s), Some(t)) = (taken, target) {
                    deliver(&mut pending, t, s);
                }
            }
            _ => {
                checker.step(&mut st, insn, i)?;
                if let Some(t) = fall {
                    deliver(&mut pending, t, st);
                }
            }
        }
    }
    Ok(VerifySummary {
        max_stack_depth: max_depth,
        helpers_called: checker.helpers_called.iter().copied().collect(),
        maps_touched: checker.maps_touched.iter().copied().collect(),
        insns_processed: processed,
    })
}
