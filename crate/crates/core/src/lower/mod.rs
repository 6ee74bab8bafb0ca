//! Compilation of [`ProgramAst`] to bytecode, relocation of map references
//! at load time, and the `BRFP` container format.
//!
//! Lowering is deliberately naive: every variable owns a fixed stack slot,
//! each statement loads its operands from slots into scratch registers and
//! stores its result back. `r6` holds the context pointer for the whole
//! program.

mod container;
mod eval;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::astgen::{infer_types, Expr, Pred, ProgramAst, Stmt, TypeEnv, VarId, VarKind};
use crate::catalog::{Catalog, HelperId, ProgramTypeId};
use crate::isa::*;

pub use container::{read_container, write_container, Container, ContainerError};
pub use eval::eval_ast;

pub const STACK_BUDGET: u32 = 512;

/// Register holding the context pointer after the prologue.
pub const CTX_REG: u8 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("stack budget exceeded: {needed} bytes")]
    StackOverflow { needed: u32 },
    #[error("variable {0} used before declaration")]
    UndeclaredVar(VarId),
    #[error("unknown helper {}", .0 .0)]
    UnknownHelper(HelperId),
    #[error("too many arguments to helper {}", .0 .0)]
    TooManyArgs(HelperId),
    #[error("unknown context field {0:?}")]
    UnknownField(String),
    #[error("bad access width {0}")]
    BadWidth(u32),
    #[error("guard body too long for a jump offset")]
    JumpTooFar,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelocError {
    #[error("reloc_unresolved: no handle for map ordinal {0}")]
    Unresolved(u32),
    #[error("already_relocated")]
    AlreadyRelocated,
    #[error("relocation at {0} does not address a map load")]
    NotAMapLoad(u32),
}

impl RelocError {
    pub fn rule_name(&self) -> &'static str {
        match self {
            RelocError::Unresolved(_) => "reloc_unresolved",
            RelocError::AlreadyRelocated => "already_relocated",
            RelocError::NotAMapLoad(_) => "reloc_invalid",
        }
    }
}

/// Frame-pointer offset of each variable's slot, assigned in declaration
/// order: context bindings first, then statements depth first.
pub fn stack_layout(ast: &ProgramAst, env: &TypeEnv) -> Result<BTreeMap<VarId, i16>, CompileError> {
    let mut layout = BTreeMap::new();
    let mut used = 0u32;
    let mut place = |v: VarId, layout: &mut BTreeMap<VarId, i16>| {
        used += env.get(&v).map_or(8, VarKind::stack_bytes);
        layout.insert(v, -(used.min(i16::MAX as u32) as i16));
    };
    for b in &ast.ctx_bindings {
        place(b.var, &mut layout);
    }
    let mut order = Vec::new();
    ast.walk(|s| order.extend(s.declares()));
    for v in order {
        place(v, &mut layout);
    }
    if used > STACK_BUDGET {
        return Err(CompileError::StackOverflow { needed: used });
    }
    Ok(layout)
}

pub fn section_name(catalog: &Catalog, pt: ProgramTypeId) -> String {
    catalog.program_type(pt).section_name.clone()
}

struct Emitter<'a> {
    catalog: &'a Catalog,
    pt: ProgramTypeId,
    env: TypeEnv,
    slots: BTreeMap<VarId, i16>,
    insns: Vec<Instruction>,
    slot_pos: usize,
    relocs: Vec<RelocationRecord>,
}

impl Emitter<'_> {
    fn push(&mut self, insn: Instruction) {
        self.slot_pos += insn.slots();
        self.insns.push(insn);
    }

    fn slot(&self, v: VarId) -> Result<i16, CompileError> {
        self.slots.get(&v).copied().ok_or(CompileError::UndeclaredVar(v))
    }

    fn load_imm(&mut self, reg: u8, value: i64) {
        match i32::try_from(value) {
            Ok(small) => self.push(Instruction::mov64_imm(reg, small)),
            Err(_) => self.push(Instruction::ld_imm64(reg, value)),
        }
    }

    fn store_var(&mut self, v: VarId, reg: u8) -> Result<(), CompileError> {
        let off = self.slot(v)?;
        self.push(Instruction::stx(BPF_DW, FRAME_REG, reg, off));
        Ok(())
    }

    fn load_expr(&mut self, reg: u8, e: &Expr) -> Result<(), CompileError> {
        match *e {
            Expr::Var(v) => {
                let off = self.slot(v)?;
                if matches!(self.env.get(&v), Some(VarKind::Buf { .. })) {
                    self.push(Instruction::mov64_reg(reg, FRAME_REG));
                    self.push(Instruction::alu64_imm(BPF_ADD, reg, off as i32));
                } else {
                    self.push(Instruction::ldx(BPF_DW, reg, FRAME_REG, off));
                }
            }
            Expr::Imm(i) => self.load_imm(reg, i),
            Expr::Map(ord) => {
                self.relocs.push(RelocationRecord { insn_index: self.insns.len() as u32, map_ordinal: ord });
                self.push(Instruction::ld_map(reg, ord));
            }
            Expr::Ctx => self.push(Instruction::mov64_reg(reg, CTX_REG)),
        }
        Ok(())
    }

    fn size(width: u32) -> Result<u8, CompileError> {
        size_field(width).ok_or(CompileError::BadWidth(width))
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), CompileError> {
        match s {
            Stmt::Literal { var, value } => {
                self.load_imm(1, *value);
                self.store_var(*var, 1)?;
            }
            Stmt::StackBuf { var, size, fill } => {
                let off = self.slot(*var)?;
                for k in 0..size.div_ceil(8) {
                    self.push(Instruction::st_imm(BPF_DW, FRAME_REG, off + 8 * k as i16, *fill));
                }
            }
            Stmt::Call { var, helper, args } => {
                if args.len() > 5 {
                    return Err(CompileError::TooManyArgs(*helper));
                }
                if self.catalog.helper(*helper).is_none() {
                    return Err(CompileError::UnknownHelper(*helper));
                }
                for (k, a) in args.iter().enumerate() {
                    self.load_expr(k as u8 + 1, a)?;
                }
                self.push(Instruction::call(helper.0));
                if let Some(v) = var {
                    self.store_var(*v, 0)?;
                }
            }
            Stmt::Guarded { preds, body } => {
                let mut exits = Vec::new();
                for p in preds {
                    let off = self.slot(p.var())?;
                    self.push(Instruction::ldx(BPF_DW, 1, FRAME_REG, off));
                    let jump = match *p {
                        Pred::NonNull(_) | Pred::NonZero(_) => Instruction::jmp_imm(BPF_JEQ, 1, 0, 0),
                        Pred::SizeBound(_, bound) => Instruction::jmp_imm(BPF_JGT, 1, bound.min(i32::MAX as u32) as i32, 0),
                    };
                    exits.push((self.insns.len(), self.slot_pos));
                    self.push(jump);
                }
                for s in body {
                    self.stmt(s)?;
                }
                for (idx, at) in exits {
                    let off = self.slot_pos - (at + 1);
                    self.insns[idx].offset = i16::try_from(off).map_err(|_| CompileError::JumpTooFar)?;
                }
            }
            Stmt::BinOp { var, op, lhs, rhs } => {
                self.load_expr(1, &Expr::Var(*lhs))?;
                match *rhs {
                    Expr::Imm(i) if i32::try_from(i).is_ok() => self.push(Instruction::alu64_imm(op.alu_op(), 1, i as i32)),
                    ref e => {
                        self.load_expr(2, e)?;
                        self.push(Instruction::alu64_reg(op.alu_op(), 1, 2));
                    }
                }
                self.store_var(*var, 1)?;
            }
            Stmt::Load { var, ptr, offset, width } => {
                let size = Self::size(*width)?;
                self.load_expr(1, &Expr::Var(*ptr))?;
                self.push(Instruction::ldx(size, 1, 1, *offset as i16));
                self.store_var(*var, 1)?;
            }
            Stmt::Store { ptr, offset, width, value } => {
                let size = Self::size(*width)?;
                self.load_expr(1, &Expr::Var(*ptr))?;
                match *value {
                    Expr::Imm(i) if i32::try_from(i).is_ok() => {
                        self.push(Instruction::st_imm(size, 1, *offset as i16, i as i32))
                    }
                    ref e => {
                        self.load_expr(2, e)?;
                        self.push(Instruction::stx(size, 1, 2, *offset as i16));
                    }
                }
            }
            Stmt::CtxStore { field, value } => {
                let f = self
                    .catalog
                    .program_type(self.pt)
                    .context
                    .field(field)
                    .ok_or_else(|| CompileError::UnknownField(field.clone()))?;
                let (offset, size) = (f.offset as i16, Self::size(f.width)?);
                self.load_expr(2, value)?;
                self.push(Instruction::stx(size, CTX_REG, 2, offset));
            }
        }
        Ok(())
    }
}

/// Lowers an AST. Map references become `lddw` with the map ordinal as
/// immediate plus a relocation record.
pub fn compile(ast: &ProgramAst, catalog: &Catalog) -> Result<RawProgram, CompileError> {
    let env = infer_types(ast, catalog);
    let slots = stack_layout(ast, &env)?;
    let mut e = Emitter {
        catalog,
        pt: ast.prog_type,
        env,
        slots,
        insns: Vec::new(),
        slot_pos: 0,
        relocs: Vec::new(),
    };
    let ctx = &catalog.program_type(ast.prog_type).context;
    let mut needs_ctx = !ast.ctx_bindings.is_empty() || ast.ret == Expr::Ctx;
    ast.walk(|s| {
        needs_ctx |= match s {
            Stmt::CtxStore { .. } => true,
            Stmt::Call { args, .. } => args.contains(&Expr::Ctx),
            _ => false,
        }
    });
    if needs_ctx {
        e.push(Instruction::mov64_reg(CTX_REG, 1));
    }
    for b in &ast.ctx_bindings {
        let f = ctx.field(&b.field).ok_or_else(|| CompileError::UnknownField(b.field.clone()))?;
        e.push(Instruction::ldx(Emitter::size(f.width)?, 1, CTX_REG, f.offset as i16));
        e.store_var(b.var, 1)?;
    }
    for s in &ast.stmts {
        e.stmt(s)?;
    }
    e.load_expr(0, &ast.ret)?;
    e.push(Instruction::exit());
    Ok(RawProgram {
        prog_type: ast.prog_type,
        section_name: section_name(catalog, ast.prog_type),
        insns: e.insns,
        relocations: e.relocs,
    })
}

/// Rewrites map-load immediates from ordinals to runtime map ids and
/// consumes the relocation list.
pub fn relocate(mut prog: RawProgram, handles: &[u32]) -> Result<RawProgram, RelocError> {
    if prog.relocations.is_empty() && prog.insns.iter().any(Instruction::is_map_load) {
        return Err(RelocError::AlreadyRelocated);
    }
    for r in &prog.relocations {
        let id = *handles.get(r.map_ordinal as usize).ok_or(RelocError::Unresolved(r.map_ordinal))?;
        let insn = prog.insns.get_mut(r.insn_index as usize).filter(|i| i.is_map_load());
        let insn = insn.ok_or(RelocError::NotAMapLoad(r.insn_index))?;
        *insn = Instruction::ld_map(insn.dst, id);
    }
    prog.relocations.clear();
    Ok(prog)
}
