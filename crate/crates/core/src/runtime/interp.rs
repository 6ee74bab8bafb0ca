//! Reference engine: decodes and executes one instruction at a time.

use super::exec::{Exec, Flow};
use super::{probe, INSN_CAP};
use crate::isa::*;

/// Result of a binary ALU operation. Register shift amounts are masked to
/// the operand width unless `mask_shifts` is off.
pub(crate) fn alu(op: u8, wide: bool, dst: u64, src: u64, mask_shifts: bool) -> u64 {
    if wide {
        let sh = if mask_shifts { (src & 63) as u32 } else { src.min(64) as u32 };
        match op {
            BPF_ADD => dst.wrapping_add(src),
            BPF_SUB => dst.wrapping_sub(src),
            BPF_MUL => dst.wrapping_mul(src),
            BPF_DIV => dst.checked_div(src).unwrap_or(0),
            BPF_MOD => dst.checked_rem(src).unwrap_or(dst),
            BPF_OR => dst | src,
            BPF_AND => dst & src,
            BPF_XOR => dst ^ src,
            BPF_MOV => src,
            BPF_LSH => dst.checked_shl(sh).unwrap_or(0),
            BPF_RSH => dst.checked_shr(sh).unwrap_or(0),
            BPF_ARSH => (dst as i64).checked_shr(sh).unwrap_or(if (dst as i64) < 0 { -1 } else { 0 }) as u64,
            _ => dst,
        }
    } else {
        let (d, s) = (dst as u32, src as u32);
        let sh = s & 31;
        let r = match op {
            BPF_ADD => d.wrapping_add(s),
            BPF_SUB => d.wrapping_sub(s),
            BPF_MUL => d.wrapping_mul(s),
            BPF_DIV => d.checked_div(s).unwrap_or(0),
            BPF_MOD => d.checked_rem(s).unwrap_or(d),
            BPF_OR => d | s,
            BPF_AND => d & s,
            BPF_XOR => d ^ s,
            BPF_MOV => s,
            BPF_LSH => d << sh,
            BPF_RSH => d >> sh,
            BPF_ARSH => ((d as i32) >> sh) as u32,
            _ => d,
        };
        r as u64
    }
}

pub(crate) fn neg(wide: bool, v: u64) -> u64 {
    if wide {
        v.wrapping_neg()
    } else {
        (v as u32).wrapping_neg() as u64
    }
}

pub(crate) fn endian(to_be: bool, bits: i32, v: u64) -> u64 {
    match (to_be, bits) {
        (false, 16) => v & 0xffff,
        (false, 32) => v & 0xffff_ffff,
        (true, 16) => (v as u16).swap_bytes() as u64,
        (true, 32) => (v as u32).swap_bytes() as u64,
        (true, _) => v.swap_bytes(),
        _ => v,
    }
}

pub(crate) fn cond(op: u8, wide: bool, a: u64, b: u64) -> bool {
    let (a, b) = if wide { (a, b) } else { (a as u32 as u64, b as u32 as u64) };
    let (sa, sb) = if wide { (a as i64, b as i64) } else { (a as u32 as i32 as i64, b as u32 as i32 as i64) };
    match op {
        BPF_JEQ => a == b,
        BPF_JNE => a != b,
        BPF_JGT => a > b,
        BPF_JGE => a >= b,
        BPF_JLT => a < b,
        BPF_JLE => a <= b,
        BPF_JSET => a & b != 0,
        BPF_JSGT => sa > sb,
        BPF_JSGE => sa >= sb,
        BPF_JSLT => sa < sb,
        BPF_JSLE => sa <= sb,
        _ => false,
    }
}

/// Runs `prog` to exit. `None` if the run aborted on a fault, an
/// undecodable instruction or the instruction cap.
pub(crate) fn interpret(x: &mut Exec<'_, '_>, prog: u32) -> Option<u64> {
    x.prog = prog;
    let mut regs = [0u64; 11];
    regs[1] = x.ctx_addr();
    regs[10] = super::STACK_TOP;
    let mut insns = x.insns();
    let mut slots = SlotMap::new(&insns);
    let mut pc = 0usize;
    loop {
        let i = *insns.get(pc)?;
        x.insn_count += 1;
        if x.insn_count > INSN_CAP {
            return None;
        }
        x.hit(probe::opcode(i.opcode));
        let (d, s) = (i.dst as usize, i.src as usize);
        if d > 10 || s > 10 {
            return None;
        }
        let imm = i.imm as i64 as u64;
        match i.kind()? {
            OpKind::Alu { op, wide, reg_src } => {
                let src = if reg_src { regs[s] } else { imm };
                regs[d] = alu(op, wide, regs[d], src, true);
                x.hit(probe::alu_result(op, regs[d]));
            }
            OpKind::Neg { wide } => regs[d] = neg(wide, regs[d]),
            OpKind::End { to_be } => regs[d] = endian(to_be, i.imm, regs[d]),
            OpKind::Ja => {
                pc = slots.jump_target(pc, i.offset).ok()?;
                continue;
            }
            OpKind::CondJump { op, wide, reg_src } => {
                let b = if reg_src { regs[s] } else { imm };
                let taken = cond(op, wide, regs[d], b);
                x.hit(probe::branch(i.opcode, taken));
                if taken {
                    pc = slots.jump_target(pc, i.offset).ok()?;
                    continue;
                }
            }
            OpKind::Call => {
                let args = [regs[1], regs[2], regs[3], regs[4], regs[5]];
                match x.call_helper(i.imm as u32, args).ok()? {
                    Flow::Ret(v) => {
                        regs[0] = v;
                        // Caller-saved registers are clobbered.
                        regs[1..6].fill(0);
                    }
                    Flow::TailCall(p) => {
                        x.prog = p;
                        insns = x.insns();
                        slots = SlotMap::new(&insns);
                        regs = [0; 11];
                        regs[1] = args[0];
                        regs[10] = super::STACK_TOP;
                        pc = 0;
                        continue;
                    }
                }
            }
            OpKind::Exit => return Some(regs[0]),
            OpKind::LdImm64 => {
                let v = i.wide_imm.unwrap_or(i.imm as i64) as u64;
                regs[d] = if i.src == PSEUDO_MAP_FD { Exec::map_handle(v) } else { v };
            }
            OpKind::Load { size } => {
                let addr = regs[s].wrapping_add(i.offset as i64 as u64);
                regs[d] = x.load(addr, size_bytes(size) as usize).ok()?;
            }
            OpKind::StoreImm { size } => {
                let addr = regs[d].wrapping_add(i.offset as i64 as u64);
                x.store(addr, size_bytes(size) as usize, imm).ok()?;
            }
            OpKind::StoreReg { size } => {
                let addr = regs[d].wrapping_add(i.offset as i64 as u64);
                x.store(addr, size_bytes(size) as usize, regs[s]).ok()?;
            }
            OpKind::LdPacket { .. } | OpKind::Atomic { .. } => return None,
        }
        pc += 1;
    }
}
