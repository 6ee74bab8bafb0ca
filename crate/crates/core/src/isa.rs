//! Bit-exact model of the eBPF instruction set.
//!
//! An instruction occupies one 8-byte little-endian slot:
//!
//! ```text
//! op:8 | src:4 dst:4 | offset:16 (signed) | imm:32 (signed)
//! ```
//!
//! The 64-bit immediate load (`lddw`) occupies two consecutive slots; the
//! second slot carries the high 32 bits of the immediate in its `imm` field
//! and must otherwise be zero. Decoded programs keep the wide form fused in
//! a single [`Instruction`], but jump offsets are always counted in slots.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use thiserror::Error;

use crate::catalog::ProgramTypeId;

pub const INSN_SIZE: usize = 8;
/// Highest addressable register; r10 is the read-only frame pointer.
pub const MAX_REG: u8 = 10;
pub const FRAME_REG: u8 = 10;

// Instruction classes.
pub const BPF_LD: u8 = 0x00;
pub const BPF_LDX: u8 = 0x01;
pub const BPF_ST: u8 = 0x02;
pub const BPF_STX: u8 = 0x03;
pub const BPF_ALU: u8 = 0x04;
pub const BPF_JMP: u8 = 0x05;
pub const BPF_JMP32: u8 = 0x06;
pub const BPF_ALU64: u8 = 0x07;

// Memory sizes.
pub const BPF_W: u8 = 0x00;
pub const BPF_H: u8 = 0x08;
pub const BPF_B: u8 = 0x10;
pub const BPF_DW: u8 = 0x18;

// Memory modes.
pub const BPF_IMM: u8 = 0x00;
pub const BPF_ABS: u8 = 0x20;
pub const BPF_IND: u8 = 0x40;
pub const BPF_MEM: u8 = 0x60;
pub const BPF_ATOMIC: u8 = 0xc0;

// Operand source.
pub const BPF_K: u8 = 0x00;
pub const BPF_X: u8 = 0x08;

// ALU operations.
pub const BPF_ADD: u8 = 0x00;
pub const BPF_SUB: u8 = 0x10;
pub const BPF_MUL: u8 = 0x20;
pub const BPF_DIV: u8 = 0x30;
pub const BPF_OR: u8 = 0x40;
pub const BPF_AND: u8 = 0x50;
pub const BPF_LSH: u8 = 0x60;
pub const BPF_RSH: u8 = 0x70;
pub const BPF_NEG: u8 = 0x80;
pub const BPF_MOD: u8 = 0x90;
pub const BPF_XOR: u8 = 0xa0;
pub const BPF_MOV: u8 = 0xb0;
pub const BPF_ARSH: u8 = 0xc0;
pub const BPF_END: u8 = 0xd0;

// Jump operations.
pub const BPF_JA: u8 = 0x00;
pub const BPF_JEQ: u8 = 0x10;
pub const BPF_JGT: u8 = 0x20;
pub const BPF_JGE: u8 = 0x30;
pub const BPF_JSET: u8 = 0x40;
pub const BPF_JNE: u8 = 0x50;
pub const BPF_JSGT: u8 = 0x60;
pub const BPF_JSGE: u8 = 0x70;
pub const BPF_CALL: u8 = 0x80;
pub const BPF_EXIT: u8 = 0x90;
pub const BPF_JLT: u8 = 0xa0;
pub const BPF_JLE: u8 = 0xb0;
pub const BPF_JSLT: u8 = 0xc0;
pub const BPF_JSLE: u8 = 0xd0;

pub const LD_DW_IMM: u8 = BPF_LD | BPF_IMM | BPF_DW;
pub const CALL: u8 = BPF_JMP | BPF_CALL;
pub const EXIT: u8 = BPF_JMP | BPF_EXIT;
pub const JA: u8 = BPF_JMP | BPF_JA;

/// `src_reg` marker on `lddw` whose immediate names a map.
pub const PSEUDO_MAP_FD: u8 = 1;
/// `src_reg` marker on `call` that targets a local function.
pub const PSEUDO_CALL: u8 = 1;

/// Byte-swap direction flag in the source bit of `BPF_END`.
pub const BPF_TO_LE: u8 = 0x00;
pub const BPF_TO_BE: u8 = 0x08;

/// Structural classification of an opcode byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Binary or move ALU operation; `wide` is the 64-bit class.
    Alu { op: u8, wide: bool, reg_src: bool },
    Neg { wide: bool },
    /// Byte swap; `to_be` selects big-endian conversion.
    End { to_be: bool },
    Ja,
    CondJump { op: u8, wide: bool, reg_src: bool },
    Call,
    Exit,
    LdImm64,
    /// Legacy packet loads (`ld_abs` / `ld_ind`).
    LdPacket { size: u8, indirect: bool },
    Load { size: u8 },
    StoreImm { size: u8 },
    StoreReg { size: u8 },
    Atomic { size: u8 },
}

/// Classifies `opcode`, or `None` if it is not a recognised instruction.
pub fn op_kind(opcode: u8) -> Option<OpKind> {
    let class = opcode & 0x07;
    match class {
        BPF_ALU | BPF_ALU64 => {
            let op = opcode & 0xf0;
            let reg_src = opcode & BPF_X != 0;
            let wide = class == BPF_ALU64;
            match op {
                BPF_ADD | BPF_SUB | BPF_MUL | BPF_DIV | BPF_OR | BPF_AND | BPF_LSH | BPF_RSH
                | BPF_MOD | BPF_XOR | BPF_MOV | BPF_ARSH => Some(OpKind::Alu { op, wide, reg_src }),
                BPF_NEG if !reg_src => Some(OpKind::Neg { wide }),
                BPF_END if !wide => Some(OpKind::End { to_be: reg_src }),
                _ => None,
            }
        }
        BPF_JMP | BPF_JMP32 => {
            let op = opcode & 0xf0;
            let reg_src = opcode & BPF_X != 0;
            let wide = class == BPF_JMP;
            match op {
                BPF_JA if wide && !reg_src => Some(OpKind::Ja),
                BPF_CALL if wide && !reg_src => Some(OpKind::Call),
                BPF_EXIT if wide && !reg_src => Some(OpKind::Exit),
                BPF_JEQ | BPF_JGT | BPF_JGE | BPF_JSET | BPF_JNE | BPF_JSGT | BPF_JSGE
                | BPF_JLT | BPF_JLE | BPF_JSLT | BPF_JSLE => {
                    Some(OpKind::CondJump { op, wide, reg_src })
                }
                _ => None,
            }
        }
        BPF_LD => match opcode {
            LD_DW_IMM => Some(OpKind::LdImm64),
            _ => {
                let mode = opcode & 0xe0;
                let size = opcode & 0x18;
                if (mode == BPF_ABS || mode == BPF_IND) && size != BPF_DW {
                    Some(OpKind::LdPacket { size, indirect: mode == BPF_IND })
                } else {
                    None
                }
            }
        },
        BPF_LDX | BPF_ST | BPF_STX => {
            let mode = opcode & 0xe0;
            let size = opcode & 0x18;
            match (class, mode) {
                (BPF_LDX, BPF_MEM) => Some(OpKind::Load { size }),
                (BPF_ST, BPF_MEM) => Some(OpKind::StoreImm { size }),
                (BPF_STX, BPF_MEM) => Some(OpKind::StoreReg { size }),
                (BPF_STX, BPF_ATOMIC) if size == BPF_W || size == BPF_DW => {
                    Some(OpKind::Atomic { size })
                }
                _ => None,
            }
        }
        _ => None,
    }
}

/// Access width in bytes for a size field.
pub fn size_bytes(size: u8) -> u32 {
    match size {
        BPF_B => 1,
        BPF_H => 2,
        BPF_W => 4,
        _ => 8,
    }
}

/// Size field for an access width in bytes.
pub fn size_field(bytes: u32) -> Option<u8> {
    match bytes {
        1 => Some(BPF_B),
        2 => Some(BPF_H),
        4 => Some(BPF_W),
        8 => Some(BPF_DW),
        _ => None,
    }
}

/// One decoded instruction. The two-slot `lddw` is represented by a single
/// value whose `wide_imm` carries the full immediate and whose `imm` equals
/// its low 32 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: u8,
    pub dst: u8,
    pub src: u8,
    pub offset: i16,
    pub imm: i32,
    pub wide_imm: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("register r{0} out of range")]
    RegisterOutOfRange(u8),
    #[error("wide immediate on non-lddw opcode {0:#04x}")]
    WideImmOnNarrowOpcode(u8),
    #[error("lddw without wide immediate")]
    MissingWideImm,
    #[error("lddw imm does not match low half of wide immediate")]
    WideImmMismatch,
}

impl Instruction {
    pub const fn new(opcode: u8, dst: u8, src: u8, offset: i16, imm: i32) -> Self {
        Self { opcode, dst, src, offset, imm, wide_imm: None }
    }

    pub const fn exit() -> Self {
        Self::new(EXIT, 0, 0, 0, 0)
    }

    pub const fn call(helper: u32) -> Self {
        Self::new(CALL, 0, 0, 0, helper as i32)
    }

    pub const fn ja(offset: i16) -> Self {
        Self::new(JA, 0, 0, offset, 0)
    }

    pub const fn alu64_imm(op: u8, dst: u8, imm: i32) -> Self {
        Self::new(BPF_ALU64 | op | BPF_K, dst, 0, 0, imm)
    }

    pub const fn alu64_reg(op: u8, dst: u8, src: u8) -> Self {
        Self::new(BPF_ALU64 | op | BPF_X, dst, src, 0, 0)
    }

    pub const fn mov64_imm(dst: u8, imm: i32) -> Self {
        Self::alu64_imm(BPF_MOV, dst, imm)
    }

    pub const fn mov64_reg(dst: u8, src: u8) -> Self {
        Self::alu64_reg(BPF_MOV, dst, src)
    }

    pub const fn jmp_imm(op: u8, dst: u8, imm: i32, offset: i16) -> Self {
        Self::new(BPF_JMP | op | BPF_K, dst, 0, offset, imm)
    }

    pub const fn jmp_reg(op: u8, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(BPF_JMP | op | BPF_X, dst, src, offset, 0)
    }

    pub const fn ldx(size: u8, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(BPF_LDX | BPF_MEM | size, dst, src, offset, 0)
    }

    pub const fn stx(size: u8, dst: u8, src: u8, offset: i16) -> Self {
        Self::new(BPF_STX | BPF_MEM | size, dst, src, offset, 0)
    }

    pub const fn st_imm(size: u8, dst: u8, offset: i16, imm: i32) -> Self {
        Self::new(BPF_ST | BPF_MEM | size, dst, 0, offset, imm)
    }

    /// Two-slot 64-bit immediate load.
    pub const fn ld_imm64(dst: u8, value: i64) -> Self {
        Self {
            opcode: LD_DW_IMM,
            dst,
            src: 0,
            offset: 0,
            imm: value as i32,
            wide_imm: Some(value),
        }
    }

    /// `lddw` referencing a map; before relocation `value` is the map ordinal,
    /// afterwards it is the runtime map id.
    pub const fn ld_map(dst: u8, value: u32) -> Self {
        let mut insn = Self::ld_imm64(dst, value as i64);
        insn.src = PSEUDO_MAP_FD;
        insn
    }

    pub fn kind(&self) -> Option<OpKind> {
        op_kind(self.opcode)
    }

    pub fn is_wide(&self) -> bool {
        self.opcode == LD_DW_IMM
    }

    /// Number of 8-byte slots this instruction occupies.
    pub fn slots(&self) -> usize {
        if self.is_wide() {
            2
        } else {
            1
        }
    }

    pub fn is_map_load(&self) -> bool {
        self.is_wide() && self.src == PSEUDO_MAP_FD
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.dst > MAX_REG {
            return Err(EncodeError::RegisterOutOfRange(self.dst));
        }
        if self.src > MAX_REG {
            return Err(EncodeError::RegisterOutOfRange(self.src));
        }
        match (self.is_wide(), self.wide_imm) {
            (true, None) => Err(EncodeError::MissingWideImm),
            (false, Some(_)) => Err(EncodeError::WideImmOnNarrowOpcode(self.opcode)),
            (true, Some(w)) if w as i32 != self.imm => Err(EncodeError::WideImmMismatch),
            _ => Ok(()),
        }
    }

    /// Encodes into one or two little-endian slots, appended to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), EncodeError> {
        self.validate()?;
        out.push(self.opcode);
        out.push((self.src << 4) | self.dst);
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.imm.to_le_bytes());
        if let Some(w) = self.wide_imm {
            out.extend_from_slice(&[0, 0, 0, 0]);
            out.extend_from_slice(&(((w as u64) >> 32) as u32).to_le_bytes());
        }
        Ok(())
    }
}

/// Encodes a single instruction into its 8- or 16-byte image.
pub fn encode_instruction(insn: &Instruction) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(16);
    insn.encode_into(&mut out)?;
    Ok(out)
}

/// Encodes a sequence of instructions.
pub fn encode_program(insns: &[Instruction]) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(insns.len() * INSN_SIZE);
    for insn in insns {
        insn.encode_into(&mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("truncated instruction: {len} bytes is not a multiple of 8")]
    Truncated { len: usize },
    #[error("incomplete ld_imm64 at slot {slot}")]
    IncompleteLdImm64 { slot: usize },
    #[error("unknown opcode {opcode:#04x} at slot {slot}")]
    UnknownOpcode { slot: usize, opcode: u8 },
    #[error("invalid register r{reg} at slot {slot}")]
    InvalidRegister { slot: usize, reg: u8 },
    #[error("malformed second half of ld_imm64 at slot {slot}")]
    BadLdImm64Tail { slot: usize },
}

/// Decodes raw bytecode. Never panics; any byte input yields either a list
/// of instructions or a structured error.
pub fn decode_program(bytes: &[u8]) -> Result<Vec<Instruction>, SyntaxError> {
    if bytes.len() % INSN_SIZE != 0 {
        return Err(SyntaxError::Truncated { len: bytes.len() });
    }
    let nslots = bytes.len() / INSN_SIZE;
    let mut insns = Vec::with_capacity(nslots);
    let mut slot = 0;
    while slot < nslots {
        let raw = &bytes[slot * INSN_SIZE..(slot + 1) * INSN_SIZE];
        let opcode = raw[0];
        let dst = raw[1] & 0x0f;
        let src = raw[1] >> 4;
        let offset = i16::from_le_bytes([raw[2], raw[3]]);
        let imm = i32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]);
        if op_kind(opcode).is_none() {
            return Err(SyntaxError::UnknownOpcode { slot, opcode });
        }
        for reg in [dst, src] {
            if reg > MAX_REG {
                return Err(SyntaxError::InvalidRegister { slot, reg });
            }
        }
        let mut insn = Instruction::new(opcode, dst, src, offset, imm);
        if opcode == LD_DW_IMM {
            if slot + 1 >= nslots {
                return Err(SyntaxError::IncompleteLdImm64 { slot });
            }
            let tail = &bytes[(slot + 1) * INSN_SIZE..(slot + 2) * INSN_SIZE];
            if tail[..4] != [0, 0, 0, 0] {
                return Err(SyntaxError::BadLdImm64Tail { slot: slot + 1 });
            }
            let hi = u32::from_le_bytes([tail[4], tail[5], tail[6], tail[7]]);
            insn.wide_imm = Some((((hi as u64) << 32) | (imm as u32 as u64)) as i64);
            slot += 2;
        } else {
            slot += 1;
        }
        insns.push(insn);
    }
    Ok(insns)
}

/// A map reference that must be patched at load time: the `lddw` at
/// `insn_index` (index into the fused instruction list) names map ordinal
/// `map_ordinal` of the program's map dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelocationRecord {
    pub insn_index: u32,
    pub map_ordinal: u32,
}

/// A program image together with its type, section and pending relocations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawProgram {
    pub prog_type: ProgramTypeId,
    pub section_name: String,
    pub insns: Vec<Instruction>,
    pub relocations: Vec<RelocationRecord>,
}

impl RawProgram {
    pub fn bytes(&self) -> Result<Vec<u8>, EncodeError> {
        encode_program(&self.insns)
    }

    /// Total number of 8-byte slots.
    pub fn slot_count(&self) -> usize {
        self.insns.iter().map(Instruction::slots).sum()
    }
}

/// Slot position of each instruction, plus the reverse mapping from slot to
/// instruction index (`None` for the second half of a wide load).
#[derive(Debug, Clone)]
pub struct SlotMap {
    pub slot_of: Vec<usize>,
    pub insn_at: Vec<Option<usize>>,
}

impl SlotMap {
    pub fn new(insns: &[Instruction]) -> Self {
        let mut slot_of = Vec::with_capacity(insns.len());
        let mut insn_at = Vec::with_capacity(insns.len() + 4);
        for (i, insn) in insns.iter().enumerate() {
            slot_of.push(insn_at.len());
            insn_at.push(Some(i));
            if insn.is_wide() {
                insn_at.push(None);
            }
        }
        Self { slot_of, insn_at }
    }

    /// Resolves the jump at instruction `i` with slot offset `off`.
    /// `Err(true)` means the target is the middle of a wide load,
    /// `Err(false)` that it lies outside the program.
    pub fn jump_target(&self, i: usize, off: i16) -> Result<usize, bool> {
        let target = self.slot_of[i] as i64 + 1 + off as i64;
        if target < 0 || target as usize >= self.insn_at.len() {
            return Err(false);
        }
        self.insn_at[target as usize].ok_or(true)
    }
}

fn alu_symbol(op: u8) -> &'static str {
    match op {
        BPF_ADD => "+=",
        BPF_SUB => "-=",
        BPF_MUL => "*=",
        BPF_DIV => "/=",
        BPF_OR => "|=",
        BPF_AND => "&=",
        BPF_LSH => "<<=",
        BPF_RSH => ">>=",
        BPF_MOD => "%=",
        BPF_XOR => "^=",
        BPF_MOV => "=",
        BPF_ARSH => "s>>=",
        _ => "?=",
    }
}

fn jmp_symbol(op: u8) -> &'static str {
    match op {
        BPF_JEQ => "==",
        BPF_JGT => ">",
        BPF_JGE => ">=",
        BPF_JSET => "&",
        BPF_JNE => "!=",
        BPF_JSGT => "s>",
        BPF_JSGE => "s>=",
        BPF_JLT => "<",
        BPF_JLE => "<=",
        BPF_JSLT => "s<",
        BPF_JSLE => "s<=",
        _ => "?",
    }
}

fn size_name(size: u8) -> &'static str {
    match size {
        BPF_B => "u8",
        BPF_H => "u16",
        BPF_W => "u32",
        _ => "u64",
    }
}

fn mem_operand(size: u8, reg: u8, off: i16) -> String {
    if off < 0 {
        format!("*({} *)(r{} - {})", size_name(size), reg, -(off as i32))
    } else {
        format!("*({} *)(r{} + {})", size_name(size), reg, off)
    }
}

/// Renders one instruction in the conventional C-like assembly syntax.
pub fn format_instruction(insn: &Instruction, helper_name: &dyn Fn(u32) -> Option<String>) -> String {
    let Some(kind) = insn.kind() else {
        return format!("invalid {:#04x}", insn.opcode);
    };
    let (d, s) = (insn.dst, insn.src);
    match kind {
        OpKind::Alu { op, wide, reg_src } => {
            let p = if wide { 'r' } else { 'w' };
            if reg_src {
                format!("{p}{d} {} {p}{s}", alu_symbol(op))
            } else {
                format!("{p}{d} {} {}", alu_symbol(op), insn.imm)
            }
        }
        OpKind::Neg { wide } => {
            let p = if wide { 'r' } else { 'w' };
            format!("{p}{d} = -{p}{d}")
        }
        OpKind::End { to_be } => {
            format!("r{d} = {}{} r{d}", if to_be { "be" } else { "le" }, insn.imm)
        }
        OpKind::Ja => format!("goto {:+}", insn.offset),
        OpKind::CondJump { op, wide, reg_src } => {
            let p = if wide { 'r' } else { 'w' };
            let rhs = if reg_src { format!("{p}{s}") } else { format!("{}", insn.imm) };
            format!("if {p}{d} {} {rhs} goto {:+}", jmp_symbol(op), insn.offset)
        }
        OpKind::Call => {
            if s == PSEUDO_CALL {
                format!("call pc{:+}", insn.imm)
            } else {
                match helper_name(insn.imm as u32) {
                    Some(name) => format!("call bpf_{name}"),
                    None => format!("call {}", insn.imm),
                }
            }
        }
        OpKind::Exit => String::from("exit"),
        OpKind::LdImm64 => {
            let w = insn.wide_imm.unwrap_or(insn.imm as i64);
            if s == PSEUDO_MAP_FD {
                format!("r{d} = map[{w}] ll")
            } else {
                format!("r{d} = {w:#x} ll")
            }
        }
        OpKind::LdPacket { size, indirect } => {
            if indirect {
                format!("r0 = *({} *)skb[r{s} + {}]", size_name(size), insn.imm)
            } else {
                format!("r0 = *({} *)skb[{}]", size_name(size), insn.imm)
            }
        }
        OpKind::Load { size } => format!("r{d} = {}", mem_operand(size, s, insn.offset)),
        OpKind::StoreImm { size } => format!("{} = {}", mem_operand(size, d, insn.offset), insn.imm),
        OpKind::StoreReg { size } => format!("{} = r{s}", mem_operand(size, d, insn.offset)),
        OpKind::Atomic { size } => {
            format!("lock {} op({:#x}) r{s}", mem_operand(size, d, insn.offset), insn.imm)
        }
    }
}

/// One line per instruction, prefixed by its slot number.
pub fn disassemble(prog: &RawProgram, helper_name: &dyn Fn(u32) -> Option<String>) -> String {
    let slots = SlotMap::new(&prog.insns);
    let mut out = String::new();
    for (i, insn) in prog.insns.iter().enumerate() {
        let _ = writeln!(out, "{:4}: {}", slots.slot_of[i], format_instruction(insn, helper_name));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn no_names(_: u32) -> Option<String> {
        None
    }

    #[test]
    fn exit_and_mov_bytes() {
        assert_eq!(encode_instruction(&Instruction::exit()).unwrap(), [0x95, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(
            encode_instruction(&Instruction::mov64_imm(0, 0)).unwrap(),
            [0xb7, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn field_packing_matches_reference_layout() {
        // r1 = *(u32 *)(r10 - 8): 61 a1 f8 ff 00 00 00 00
        let insn = Instruction::ldx(BPF_W, 1, 10, -8);
        assert_eq!(encode_instruction(&insn).unwrap(), [0x61, 0xa1, 0xf8, 0xff, 0, 0, 0, 0]);
        // r1 = 0x1122334455667788 ll
        let wide = Instruction::ld_imm64(1, 0x1122_3344_5566_7788);
        assert_eq!(
            encode_instruction(&wide).unwrap(),
            [0x18, 0x01, 0, 0, 0x88, 0x77, 0x66, 0x55, 0, 0, 0, 0, 0x44, 0x33, 0x22, 0x11]
        );
    }

    #[test]
    fn encode_rejects_bad_fields() {
        let mut insn = Instruction::mov64_imm(11, 0);
        assert_eq!(encode_instruction(&insn), Err(EncodeError::RegisterOutOfRange(11)));
        insn.dst = 0;
        insn.wide_imm = Some(1);
        assert!(matches!(encode_instruction(&insn), Err(EncodeError::WideImmOnNarrowOpcode(_))));
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode_program(&[0x95, 0, 0, 0, 0, 0, 0, 0]).unwrap(), [Instruction::exit()]);
        assert_eq!(decode_program(&[0u8; 12]), Err(SyntaxError::Truncated { len: 12 }));
        let err = decode_program(&[0x18, 0, 0, 0, 0, 0, 0, 0]).unwrap_err();
        assert_eq!(err, SyntaxError::IncompleteLdImm64 { slot: 0 });
        assert!(err.to_string().contains("incomplete ld_imm64"));
        assert!(SyntaxError::Truncated { len: 12 }.to_string().contains("truncated instruction"));
        assert!(matches!(
            decode_program(&[0xff, 0, 0, 0, 0, 0, 0, 0]),
            Err(SyntaxError::UnknownOpcode { slot: 0, opcode: 0xff })
        ));
        assert!(matches!(
            decode_program(&[0xb7, 0x0b, 0, 0, 0, 0, 0, 0]),
            Err(SyntaxError::InvalidRegister { reg: 11, .. })
        ));
    }

    #[test]
    fn every_single_slot_wide_prefix_is_incomplete() {
        // Oracle: a lone first half of any two-slot form, whatever its fields,
        // must fail with the incomplete-wide error.
        for dst in 0..=MAX_REG {
            for src in [0u8, PSEUDO_MAP_FD] {
                for imm in [0i32, 1, -1, i32::MAX] {
                    let bytes = encode_instruction(&{
                        let mut i = Instruction::ld_imm64(dst, imm as i64);
                        i.src = src;
                        i
                    })
                    .unwrap();
                    assert_eq!(
                        decode_program(&bytes[..8]),
                        Err(SyntaxError::IncompleteLdImm64 { slot: 0 })
                    );
                }
            }
        }
    }

    #[test]
    fn disassembly_lines() {
        let prog = RawProgram {
            prog_type: ProgramTypeId::Kprobe,
            section_name: "kprobe/sys_nanosleep".into(),
            insns: alloc::vec![Instruction::mov64_imm(1, 7), Instruction::call(1), Instruction::exit()],
            relocations: Vec::new(),
        };
        let names = |id: u32| (id == 1).then(|| String::from("map_lookup_elem"));
        let text = disassemble(&prog, &names);
        let lines: Vec<&str> = text.lines().map(|l| l.split_once(": ").unwrap().1).collect();
        assert_eq!(lines, ["r1 = 7", "call bpf_map_lookup_elem", "exit"]);
        assert_eq!(format_instruction(&Instruction::exit(), &no_names), "exit");
    }

    #[test]
    fn slot_map_resolves_targets_around_wide_loads() {
        let insns = [Instruction::ja(2), Instruction::ld_imm64(1, 5), Instruction::exit()];
        let map = SlotMap::new(&insns);
        assert_eq!(map.slot_of, [0, 1, 3]);
        assert_eq!(map.jump_target(0, 2), Ok(2));
        assert_eq!(map.jump_target(0, 1), Err(true));
        assert_eq!(map.jump_target(0, 5), Err(false));
    }

    pub(crate) fn valid_instruction() -> impl Strategy<Value = Instruction> {
        let narrow = (any::<u8>(), 0..=MAX_REG, 0..=MAX_REG, any::<i16>(), any::<i32>())
            .prop_filter("recognised opcode", |(op, ..)| op_kind(*op).is_some() && *op != LD_DW_IMM)
            .prop_map(|(op, d, s, off, imm)| Instruction::new(op, d, s, off, imm));
        let wide = (0..=MAX_REG, 0..=MAX_REG, any::<i64>()).prop_map(|(d, s, v)| {
            let mut i = Instruction::ld_imm64(d, v);
            i.src = s;
            i
        });
        prop_oneof![4 => narrow, 1 => wide]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(insns in proptest::collection::vec(valid_instruction(), 1..32)) {
            let bytes = encode_program(&insns).unwrap();
            prop_assert_eq!(decode_program(&bytes).unwrap(), insns.clone());
            prop_assert_eq!(encode_program(&decode_program(&bytes).unwrap()).unwrap(), bytes);
        }

        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            let _ = decode_program(&bytes);
        }
    }
}
