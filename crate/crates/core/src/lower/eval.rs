//! Direct evaluation of a [`ProgramAst`] against the simulated kernel.
//!
//! Variables live in the same stack slots the compiler assigns, so a
//! correct lowering produces the same return value, helper trace and map
//! state as executing the compiled program.

use alloc::collections::BTreeMap;

use super::stack_layout;
use crate::astgen::{infer_types, Expr, Pred, ProgramAst, Stmt, VarId, VarKind};
use crate::catalog::ExecContext;
use crate::runtime::interp::{alu, interpret};
use crate::runtime::{Exec, ExecResult, Fault, Flow, SimKernel, STACK_TOP};

enum Step {
    Next,
    /// A tail call took over; this is its return value.
    Done(Option<u64>),
}

struct Eval<'a> {
    slots: BTreeMap<VarId, i16>,
    bufs: BTreeMap<VarId, bool>,
    handles: &'a [u32],
    pt: crate::catalog::ProgramTypeId,
}

impl Eval<'_> {
    fn slot_addr(&self, v: VarId) -> Result<u64, Fault> {
        let off = *self.slots.get(&v).ok_or(Fault)?;
        Ok(STACK_TOP.wrapping_add(off as i64 as u64))
    }

    fn var(&self, x: &mut Exec<'_, '_>, v: VarId) -> Result<u64, Fault> {
        let addr = self.slot_addr(v)?;
        if self.bufs.contains_key(&v) {
            return Ok(addr);
        }
        x.load(addr, 8)
    }

    fn set(&self, x: &mut Exec<'_, '_>, v: VarId, value: u64) -> Result<(), Fault> {
        x.store(self.slot_addr(v)?, 8, value)
    }

    fn expr(&self, x: &mut Exec<'_, '_>, e: &Expr) -> Result<u64, Fault> {
        Ok(match *e {
            Expr::Var(v) => self.var(x, v)?,
            Expr::Imm(i) => i as u64,
            Expr::Map(ord) => Exec::map_handle(*self.handles.get(ord as usize).ok_or(Fault)? as u64),
            Expr::Ctx => x.ctx_addr(),
        })
    }

    fn block(&self, x: &mut Exec<'_, '_>, stmts: &[Stmt]) -> Result<Step, Fault> {
        for s in stmts {
            if let Step::Done(r) = self.stmt(x, s)? {
                return Ok(Step::Done(r));
            }
        }
        Ok(Step::Next)
    }

    fn stmt(&self, x: &mut Exec<'_, '_>, s: &Stmt) -> Result<Step, Fault> {
        match s {
            Stmt::Literal { var, value } => self.set(x, *var, *value as u64)?,
            Stmt::StackBuf { var, size, fill } => {
                let base = self.slot_addr(*var)?;
                for k in 0..size.div_ceil(8) as u64 {
                    x.store(base + 8 * k, 8, *fill as i64 as u64)?;
                }
            }
            Stmt::Call { var, helper, args } => {
                let mut regs = [0u64; 5];
                for (r, a) in regs.iter_mut().zip(args) {
                    *r = self.expr(x, a)?;
                }
                match x.call_helper(helper.0, regs)? {
                    Flow::Ret(v) => {
                        if let Some(var) = var {
                            self.set(x, *var, v)?;
                        }
                    }
                    Flow::TailCall(p) => return Ok(Step::Done(interpret(x, p))),
                }
            }
            Stmt::Guarded { preds, body } => {
                for p in preds {
                    let v = self.var(x, p.var())?;
                    let pass = match *p {
                        Pred::NonNull(_) | Pred::NonZero(_) => v != 0,
                        Pred::SizeBound(_, bound) => v <= bound.min(i32::MAX as u32) as u64,
                    };
                    if !pass {
                        return Ok(Step::Next);
                    }
                }
                return self.block(x, body);
            }
            Stmt::BinOp { var, op, lhs, rhs } => {
                let (a, b) = (self.var(x, *lhs)?, self.expr(x, rhs)?);
                self.set(x, *var, alu(op.alu_op(), true, a, b, true))?;
            }
            Stmt::Load { var, ptr, offset, width } => {
                let p = self.var(x, *ptr)?;
                let v = x.load(p.wrapping_add(*offset as u64), *width as usize)?;
                self.set(x, *var, v)?;
            }
            Stmt::Store { ptr, offset, width, value } => {
                let p = self.var(x, *ptr)?;
                let v = self.expr(x, value)?;
                x.store(p.wrapping_add(*offset as u64), *width as usize, v)?;
            }
            Stmt::CtxStore { field, value } => {
                let f = x.k.catalog.program_type(self.pt).context.field(field).ok_or(Fault)?;
                let (off, width) = (f.offset as u64, f.width as usize);
                let v = self.expr(x, value)?;
                let ctx = x.ctx_addr();
                x.store(ctx + off, width, v)?;
            }
        }
        Ok(Step::Next)
    }
}

/// Evaluates `ast` as if it were the loaded program `prog`. `handles` maps
/// map ordinals to map ids, as for relocation.
pub fn eval_ast(
    kernel: &mut SimKernel<'_>,
    prog: u32,
    ast: &ProgramAst,
    handles: &[u32],
    payload: &[u8],
    ctx: ExecContext,
) -> ExecResult {
    let env = infer_types(ast, kernel.catalog);
    let slots = stack_layout(ast, &env).unwrap_or_default();
    let bufs = env.iter().filter(|(_, k)| matches!(k, VarKind::Buf { .. })).map(|(v, _)| (*v, true)).collect();
    let ev = Eval { slots, bufs, handles, pt: ast.prog_type };
    let mut x = kernel.begin(prog, ast.prog_type, payload, ctx);
    let run = |x: &mut Exec<'_, '_>| -> Result<Option<u64>, Fault> {
        let fields = &x.k.catalog.program_type(ast.prog_type).context;
        let mut bound = alloc::vec::Vec::new();
        for b in &ast.ctx_bindings {
            let f = fields.field(&b.field).ok_or(Fault)?;
            bound.push((b.var, f.offset as u64, f.width as usize));
        }
        for (v, off, width) in bound {
            let ctx = x.ctx_addr();
            let value = x.load(ctx + off, width)?;
            ev.set(x, v, value)?;
        }
        if let Step::Done(r) = ev.block(x, &ast.stmts)? {
            return Ok(r);
        }
        ev.expr(x, &ast.ret).map(Some)
    };
    let ret = run(&mut x).ok().flatten();
    x.finish(ret.unwrap_or(0))
}
