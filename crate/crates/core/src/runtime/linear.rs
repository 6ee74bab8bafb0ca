//! Second engine: translates a program once into a flat op list with
//! resolved jump targets, then runs the list. Used as the differential
//! counterpart of the interpreter.

use alloc::vec::Vec;

use super::exec::{Exec, Flow};
use super::interp::{alu, cond, endian, neg};
use super::{probe, INSN_CAP};
use crate::isa::*;

#[derive(Debug, Clone, Copy)]
enum Src {
    Reg(usize),
    Imm(u64),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Alu { op: u8, wide: bool, dst: usize, src: Src },
    Neg { wide: bool, dst: usize },
    End { to_be: bool, bits: i32, dst: usize },
    Jump { target: usize },
    Branch { opcode: u8, op: u8, wide: bool, dst: usize, src: Src, target: usize },
    Call { helper: u32 },
    Exit,
    Const { dst: usize, value: u64 },
    Load { dst: usize, base: usize, off: u64, width: usize },
    Store { base: usize, off: u64, width: usize, src: Src },
}

/// `None` entries mark instructions that cannot run; reaching one aborts.
fn translate(insns: &[Instruction]) -> Vec<(u8, Option<Op>)> {
    let slots = SlotMap::new(insns);
    insns
        .iter()
        .enumerate()
        .map(|(pc, i)| {
            let (d, s) = (i.dst as usize, i.src as usize);
            let imm = Src::Imm(i.imm as i64 as u64);
            let src = |reg: bool| if reg { Src::Reg(s) } else { imm };
            let off = i.offset as i64 as u64;
            let op = if d > 10 || s > 10 {
                None
            } else {
                i.kind().and_then(|k| {
                    Some(match k {
                        OpKind::Alu { op, wide, reg_src } => Op::Alu { op, wide, dst: d, src: src(reg_src) },
                        OpKind::Neg { wide } => Op::Neg { wide, dst: d },
                        OpKind::End { to_be } => Op::End { to_be, bits: i.imm, dst: d },
                        OpKind::Ja => Op::Jump { target: slots.jump_target(pc, i.offset).ok()? },
                        OpKind::CondJump { op, wide, reg_src } => Op::Branch {
                            opcode: i.opcode,
                            op,
                            wide,
                            dst: d,
                            src: src(reg_src),
                            target: slots.jump_target(pc, i.offset).ok()?,
                        },
                        OpKind::Call => Op::Call { helper: i.imm as u32 },
                        OpKind::Exit => Op::Exit,
                        OpKind::LdImm64 => {
                            let v = i.wide_imm.unwrap_or(i.imm as i64) as u64;
                            Op::Const { dst: d, value: if i.src == PSEUDO_MAP_FD { Exec::map_handle(v) } else { v } }
                        }
                        OpKind::Load { size } => Op::Load { dst: d, base: s, off, width: size_bytes(size) as usize },
                        OpKind::StoreImm { size } => Op::Store { base: d, off, width: size_bytes(size) as usize, src: imm },
                        OpKind::StoreReg { size } => {
                            Op::Store { base: d, off, width: size_bytes(size) as usize, src: Src::Reg(s) }
                        }
                        OpKind::LdPacket { .. } | OpKind::Atomic { .. } => return None,
                    })
                })
            };
            (i.opcode, op)
        })
        .collect()
}

pub(crate) fn execute(x: &mut Exec<'_, '_>, prog: u32) -> Option<u64> {
    x.prog = prog;
    // With the seeded bug, 64-bit register shifts are not masked.
    let mask = !x.k.bugs.shift_ub;
    let mut code = translate(&x.insns());
    let mut regs = [0u64; 11];
    regs[1] = x.ctx_addr();
    regs[10] = super::STACK_TOP;
    let mut pc = 0usize;
    loop {
        let (opcode, op) = *code.get(pc)?;
        x.insn_count += 1;
        if x.insn_count > INSN_CAP {
            return None;
        }
        x.hit(probe::opcode(opcode));
        let val = |regs: &[u64; 11], s: Src| match s {
            Src::Reg(r) => regs[r],
            Src::Imm(v) => v,
        };
        match op? {
            Op::Alu { op, wide, dst, src } => {
                let m = mask || !matches!(src, Src::Reg(_));
                regs[dst] = alu(op, wide, regs[dst], val(&regs, src), m);
                x.hit(probe::alu_result(op, regs[dst]));
            }
            Op::Neg { wide, dst } => regs[dst] = neg(wide, regs[dst]),
            Op::End { to_be, bits, dst } => regs[dst] = endian(to_be, bits, regs[dst]),
            Op::Jump { target } => {
                pc = target;
                continue;
            }
            Op::Branch { opcode, op, wide, dst, src, target } => {
                let taken = cond(op, wide, regs[dst], val(&regs, src));
                x.hit(probe::branch(opcode, taken));
                if taken {
                    pc = target;
                    continue;
                }
            }
            Op::Call { helper } => {
                let args = [regs[1], regs[2], regs[3], regs[4], regs[5]];
                match x.call_helper(helper, args).ok()? {
                    Flow::Ret(v) => {
                        regs[0] = v;
                        regs[1..6].fill(0);
                    }
                    Flow::TailCall(p) => {
                        code = translate(&x.insns());
                        x.prog = p;
                        regs = [0; 11];
                        regs[1] = args[0];
                        regs[10] = super::STACK_TOP;
                        pc = 0;
                        continue;
                    }
                }
            }
            Op::Exit => return Some(regs[0]),
            Op::Const { dst, value } => regs[dst] = value,
            Op::Load { dst, base, off, width } => regs[dst] = x.load(regs[base].wrapping_add(off), width).ok()?,
            Op::Store { base, off, width, src } => {
                let v = val(&regs, src);
                x.store(regs[base].wrapping_add(off), width, v).ok()?;
            }
        }
        pc += 1;
    }
}
