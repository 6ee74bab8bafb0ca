//! Source-level program model, generation, mutation and the textual
//! corpus format.
//!
//! A program is a list of statements around helper calls. Every variable
//! lives in its own stack slot; pointer-typed variables that may be null are
//! only used inside a [`Stmt::Guarded`] block whose predicates check them.

mod generate;
mod text;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::{ArgType, Catalog, HelperId, HelperProto, MapSpecRequest, ProgramTypeId, RetType, ValueType};

pub use generate::{generate_program, mutate_program, GenConfig};
pub use text::{deserialize, serialize, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expr {
    Var(VarId),
    Imm(i64),
    /// Pointer to `map_deps[ordinal]`.
    Map(u32),
    /// The program context.
    Ctx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pred {
    NonNull(VarId),
    /// `var <= bound`, unsigned.
    SizeBound(VarId, u32),
    NonZero(VarId),
}

impl Pred {
    pub fn var(&self) -> VarId {
        match *self {
            Pred::NonNull(v) | Pred::SizeBound(v, _) | Pred::NonZero(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Lsh,
    Rsh,
}

impl BinOp {
    pub const ALL: [BinOp; 8] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::And, BinOp::Or, BinOp::Xor, BinOp::Lsh, BinOp::Rsh];

    pub fn alu_op(self) -> u8 {
        use crate::isa::*;
        match self {
            BinOp::Add => BPF_ADD,
            BinOp::Sub => BPF_SUB,
            BinOp::Mul => BPF_MUL,
            BinOp::And => BPF_AND,
            BinOp::Or => BPF_OR,
            BinOp::Xor => BPF_XOR,
            BinOp::Lsh => BPF_LSH,
            BinOp::Rsh => BPF_RSH,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Lsh => "<<",
            BinOp::Rsh => ">>",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        Self::ALL.into_iter().find(|op| op.symbol() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Literal { var: VarId, value: i64 },
    /// `size` bytes of stack; every 8-byte word is set to `fill` sign-extended.
    StackBuf { var: VarId, size: u32, fill: i32 },
    Call { var: Option<VarId>, helper: HelperId, args: Vec<Expr> },
    Guarded { preds: Vec<Pred>, body: Vec<Stmt> },
    BinOp { var: VarId, op: BinOp, lhs: VarId, rhs: Expr },
    Load { var: VarId, ptr: VarId, offset: u32, width: u32 },
    Store { ptr: VarId, offset: u32, width: u32, value: Expr },
    CtxStore { field: String, value: Expr },
}

impl Stmt {
    /// Variable declared by this statement, if any.
    pub fn declares(&self) -> Option<VarId> {
        match self {
            Stmt::Literal { var, .. }
            | Stmt::StackBuf { var, .. }
            | Stmt::BinOp { var, .. }
            | Stmt::Load { var, .. } => Some(*var),
            Stmt::Call { var, .. } => *var,
            Stmt::Guarded { .. } | Stmt::Store { .. } | Stmt::CtxStore { .. } => None,
        }
    }

    /// Whether `v` is read by this statement or anything nested in it.
    /// Guard predicates count as uses only with `include_preds`.
    pub fn uses(&self, v: VarId, include_preds: bool) -> bool {
        let e = |x: &Expr| *x == Expr::Var(v);
        match self {
            Stmt::Literal { .. } | Stmt::StackBuf { .. } => false,
            Stmt::Call { args, .. } => args.iter().any(e),
            Stmt::Guarded { preds, body } => {
                (include_preds && preds.iter().any(|p| p.var() == v)) || body.iter().any(|s| s.uses(v, include_preds))
            }
            Stmt::BinOp { lhs, rhs, .. } => *lhs == v || e(rhs),
            Stmt::Load { ptr, .. } => *ptr == v,
            Stmt::Store { ptr, value, .. } => *ptr == v || e(value),
            Stmt::CtxStore { value, .. } => e(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtxBinding {
    pub var: VarId,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramAst {
    pub prog_type: ProgramTypeId,
    /// Context fields loaded once at program start.
    pub ctx_bindings: Vec<CtxBinding>,
    pub stmts: Vec<Stmt>,
    pub map_deps: Vec<MapSpecRequest>,
    pub ret: Expr,
}

impl ProgramAst {
    pub fn empty(prog_type: ProgramTypeId) -> Self {
        ProgramAst { prog_type, ctx_bindings: Vec::new(), stmts: Vec::new(), map_deps: Vec::new(), ret: Expr::Imm(0) }
    }

    /// Every statement, depth first, in program order.
    pub fn walk(&self, mut f: impl FnMut(&Stmt)) {
        fn go(stmts: &[Stmt], f: &mut dyn FnMut(&Stmt)) {
            for s in stmts {
                f(s);
                if let Stmt::Guarded { body, .. } = s {
                    go(body, f);
                }
            }
        }
        go(&self.stmts, &mut f);
    }

    pub fn helper_calls(&self) -> usize {
        let mut n = 0;
        self.walk(|s| n += matches!(s, Stmt::Call { .. }) as usize);
        n
    }

    pub fn next_var(&self) -> u32 {
        let mut max = 0;
        for b in &self.ctx_bindings {
            max = max.max(b.var.0 + 1);
        }
        self.walk(|s| {
            if let Some(v) = s.declares() {
                max = max.max(v.0 + 1);
            }
        });
        max
    }
}

/// What a variable holds, as far as generation and lowering care.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    /// Stack buffer; the variable's value is its address.
    Buf { size: u32 },
    /// Possibly-null pointer to a value of `map_deps[map]`.
    MapValue { map: u32 },
    /// Possibly-null pointer to helper-allocated memory.
    Mem { size: u32, acquired: bool },
    Sock,
}

impl VarKind {
    pub fn nullable(&self) -> bool {
        matches!(self, VarKind::MapValue { .. } | VarKind::Mem { .. })
    }

    /// Stack bytes reserved for the variable.
    pub fn stack_bytes(&self) -> u32 {
        match self {
            VarKind::Buf { size } => size.div_ceil(8) * 8,
            _ => 8,
        }
    }

    /// Size of the memory the variable points to.
    pub fn region(&self, ast: &ProgramAst) -> Option<u32> {
        match *self {
            VarKind::Buf { size } | VarKind::Mem { size, .. } => Some(size),
            VarKind::MapValue { map } => ast.map_deps.get(map as usize).map(|m| m.value_size),
            VarKind::Scalar | VarKind::Sock => None,
        }
    }
}

/// Kinds of all variables of a program.
pub type TypeEnv = BTreeMap<VarId, VarKind>;

/// Variable kind produced by a call to `proto` with `args`.
pub fn call_result_kind(proto: &HelperProto, args: &[Expr]) -> Option<VarKind> {
    match proto.ret {
        RetType::Integer => Some(VarKind::Scalar),
        RetType::Void => None,
        RetType::PtrToMapValueOrNull => match args.get(proto.map_arg()?) {
            Some(Expr::Map(m)) => Some(VarKind::MapValue { map: *m }),
            _ => None,
        },
        RetType::PtrToMemOrNull => {
            let size = proto
                .args
                .iter()
                .zip(args)
                .find_map(|(a, e)| match (a, e) {
                    (ArgType::ConstSize | ArgType::ConstSizeOrZero, Expr::Imm(v)) => Some(*v as u32),
                    _ => None,
                })
                .unwrap_or(0);
            Some(VarKind::Mem { size, acquired: proto.acquires.is_some() })
        }
    }
}

pub fn infer_types(ast: &ProgramAst, catalog: &Catalog) -> TypeEnv {
    let mut env = TypeEnv::new();
    let ctx = &catalog.program_type(ast.prog_type).context;
    for b in &ast.ctx_bindings {
        let sock = ctx.field(&b.field).is_some_and(|f| f.yields == ValueType::PtrToSockCommon);
        env.insert(b.var, if sock { VarKind::Sock } else { VarKind::Scalar });
    }
    ast.walk(|s| {
        let kind = match s {
            Stmt::Literal { var, .. } | Stmt::BinOp { var, .. } | Stmt::Load { var, .. } => Some((*var, VarKind::Scalar)),
            Stmt::StackBuf { var, size, .. } => Some((*var, VarKind::Buf { size: *size })),
            Stmt::Call { var: Some(var), helper, args } => {
                catalog.helper(*helper).and_then(|p| call_result_kind(p, args)).map(|k| (*var, k))
            }
            _ => None,
        };
        if let Some((v, k)) = kind {
            env.insert(v, k);
        }
    });
    env
}

/// Total stack bytes the program's variables occupy.
pub fn stack_usage(ast: &ProgramAst, env: &TypeEnv) -> u32 {
    let mut total = 0;
    for b in &ast.ctx_bindings {
        total += env.get(&b.var).map_or(8, VarKind::stack_bytes);
    }
    ast.walk(|s| {
        if let Some(v) = s.declares() {
            total += env.get(&v).map_or(8, VarKind::stack_bytes);
        }
    });
    total
}

/// Guard predicates that must hold before `call` may execute: null checks
/// for nullable pointers, and bounds for variable size arguments against the
/// region passed just before them.
pub fn wrap_safety_checks(
    helper: &HelperProto,
    args: &[Expr],
    env: &TypeEnv,
    ast: &ProgramAst,
) -> Vec<Pred> {
    let mut preds = Vec::new();
    for (k, (arg, e)) in helper.args.iter().zip(args).enumerate() {
        let Expr::Var(v) = *e else { continue };
        let Some(kind) = env.get(&v) else { continue };
        if kind.nullable() && *arg != ArgType::Anything {
            preds.push(Pred::NonNull(v));
        }
        if arg.is_size() && *kind == VarKind::Scalar && k > 0 {
            let region = match args[k - 1] {
                Expr::Var(p) => env.get(&p).and_then(|pk| pk.region(ast)),
                _ => None,
            };
            if let Some(r) = region {
                preds.push(Pred::SizeBound(v, r));
            }
            if *arg == ArgType::ConstSize {
                preds.push(Pred::NonZero(v));
            }
        }
    }
    preds
}

/// Nested guard blocks for `preds` around `body`. A null check on an
/// acquired reference gets its own outer block, so a failing inner
/// predicate cannot skip the release that follows inside that block.
pub fn guard(preds: Vec<Pred>, body: Vec<Stmt>, env: &TypeEnv) -> Vec<Stmt> {
    if preds.is_empty() {
        return body;
    }
    let is_ref = |p: &Pred| matches!(p, Pred::NonNull(v) if matches!(env.get(v), Some(VarKind::Mem { acquired: true, .. })));
    let (refs, rest): (Vec<Pred>, Vec<Pred>) = preds.into_iter().partition(is_ref);
    let mut body = if rest.is_empty() { body } else { alloc::vec![Stmt::Guarded { preds: rest, body }] };
    for p in refs.into_iter().rev() {
        body = alloc::vec![Stmt::Guarded { preds: alloc::vec![p], body }];
    }
    body
}

fn releasing_helper(catalog: &Catalog) -> Option<&HelperProto> {
    catalog.helpers().iter().find(|h| h.releases.is_some())
}

/// Balances reference acquisition and release.
///
/// Each acquired variable without a release gets one right after the
/// statement holding its last use, inside the guard that null-checks it.
/// A release whose argument is not an acquired reference gets a fresh
/// acquisition substituted in.
pub fn fixup_references(ast: &mut ProgramAst, catalog: &Catalog) {
    let env = infer_types(ast, catalog);
    let mut next = ast.next_var();
    let mut stmts = core::mem::take(&mut ast.stmts);
    substitute_bad_releases(&mut stmts, ast, catalog, &env, &mut next);
    ast.stmts = stmts;

    let env = infer_types(ast, catalog);
    let acquired: Vec<VarId> =
        env.iter().filter(|(_, k)| matches!(k, VarKind::Mem { acquired: true, .. })).map(|(v, _)| *v).collect();
    for v in acquired {
        if is_released(&ast.stmts, v, catalog) {
            continue;
        }
        let Some(release) = releasing_helper(catalog) else { return };
        let call = Stmt::Call { var: None, helper: release.id, args: release_args(release, v) };
        insert_release(&mut ast.stmts, v, call);
    }
}

fn release_args(release: &HelperProto, v: VarId) -> Vec<Expr> {
    release.args.iter().map(|a| if *a == ArgType::PtrToRef { Expr::Var(v) } else { Expr::Imm(0) }).collect()
}

fn is_release(s: &Stmt, v: VarId, catalog: &Catalog) -> bool {
    match s {
        Stmt::Call { helper, args, .. } => catalog.helper(*helper).is_some_and(|p| {
            p.releases.is_some() && p.args.iter().zip(args).any(|(a, e)| *a == ArgType::PtrToRef && *e == Expr::Var(v))
        }),
        _ => false,
    }
}

fn is_released(stmts: &[Stmt], v: VarId, catalog: &Catalog) -> bool {
    stmts.iter().any(|s| match s {
        Stmt::Guarded { body, .. } => is_released(body, v, catalog),
        s => is_release(s, v, catalog),
    })
}

fn declares_within(s: &Stmt, v: VarId) -> bool {
    match s {
        Stmt::Guarded { body, .. } => body.iter().any(|s| declares_within(s, v)),
        s => s.declares() == Some(v),
    }
}

/// Inserts `call` for `v`; returns whether it found a place.
fn insert_release(stmts: &mut Vec<Stmt>, v: VarId, call: Stmt) -> bool {
    // Inside the guard that null-checks v, after the last statement using v.
    for s in stmts.iter_mut() {
        if let Stmt::Guarded { preds, body } = s {
            if preds.contains(&Pred::NonNull(v)) {
                let pos = body.iter().rposition(|s| s.uses(v, true)).map_or(0, |p| p + 1);
                body.insert(pos, call);
                return true;
            }
            if body.iter().any(|s| s.uses(v, true) || declares_within(s, v)) && insert_release(body, v, call.clone()) {
                return true;
            }
        }
    }
    // No checking guard: add one right after the declaration.
    if let Some(pos) = stmts.iter().position(|s| s.declares() == Some(v)) {
        stmts.insert(pos + 1, Stmt::Guarded { preds: alloc::vec![Pred::NonNull(v)], body: alloc::vec![call] });
        return true;
    }
    false
}

fn substitute_bad_releases(
    stmts: &mut Vec<Stmt>,
    ast: &mut ProgramAst,
    catalog: &Catalog,
    env: &TypeEnv,
    next: &mut u32,
) {
    let mut i = 0;
    while i < stmts.len() {
        if let Stmt::Guarded { body, .. } = &mut stmts[i] {
            substitute_bad_releases(body, ast, catalog, env, next);
            i += 1;
            continue;
        }
        let bad = match &stmts[i] {
            Stmt::Call { helper, args, .. } => catalog.helper(*helper).and_then(|p| {
                p.releases.as_ref()?;
                let k = p.args.iter().position(|a| *a == ArgType::PtrToRef)?;
                let ok = matches!(args.get(k), Some(Expr::Var(v)) if matches!(env.get(v), Some(VarKind::Mem { acquired: true, .. })));
                (!ok).then_some(k)
            }),
            _ => None,
        };
        let Some(k) = bad else {
            i += 1;
            continue;
        };
        let Some((acquire, map_type)) = acquiring_helper(catalog, ast.prog_type) else {
            i += 1;
            continue;
        };
        let map = ensure_map(ast, catalog, map_type);
        let v = VarId(*next);
        *next += 1;
        let args = acquire
            .args
            .iter()
            .map(|a| match a {
                ArgType::ConstMapPtr => Expr::Map(map),
                a if a.is_size() => Expr::Imm(8),
                _ => Expr::Imm(0),
            })
            .collect();
        let mut release = stmts.remove(i);
        if let Stmt::Call { args, .. } = &mut release {
            args[k] = Expr::Var(v);
        }
        stmts.insert(i, Stmt::Call { var: Some(v), helper: acquire.id, args });
        stmts.insert(i + 1, Stmt::Guarded { preds: alloc::vec![Pred::NonNull(v)], body: alloc::vec![release] });
        i += 2;
    }
}

/// An acquiring helper available to `pt`, with the map type it will use.
fn acquiring_helper(catalog: &Catalog, pt: ProgramTypeId) -> Option<(&HelperProto, crate::catalog::MapTypeId)> {
    catalog.helpers().iter().filter(|h| h.acquires.is_some() && catalog.is_available(pt, h.id)).find_map(|h| {
        let mt = catalog.maps_for(pt, h.id).ok()?.first().copied()?;
        Some((h, mt))
    })
}

/// Ordinal of a plain map of type `mt`, adding one with minimal attributes
/// if none exists.
fn ensure_map(ast: &mut ProgramAst, catalog: &Catalog, mt: crate::catalog::MapTypeId) -> u32 {
    if let Some(i) = ast.map_deps.iter().position(|m| m.map_type == mt) {
        return i as u32;
    }
    let spec = catalog.map_attr_constraints(mt);
    let first = |r: Option<&crate::catalog::AttrRange>| r.and_then(|r| r.values().first().copied()).unwrap_or(0);
    ast.map_deps.push(MapSpecRequest {
        map_type: mt,
        key_size: first(spec.map(|s| &s.key_size)),
        value_size: first(spec.map(|s| &s.value_size)),
        max_entries: first(spec.map(|s| &s.max_entries)),
        flags: 0,
    });
    (ast.map_deps.len() - 1) as u32
}

/// Drops map dependencies no statement refers to and renumbers the rest.
pub fn prune_map_deps(ast: &mut ProgramAst) {
    let mut used = alloc::vec![false; ast.map_deps.len()];
    ast.walk(|s| {
        if let Stmt::Call { args, .. } = s {
            for a in args {
                if let Expr::Map(m) = a {
                    if let Some(u) = used.get_mut(*m as usize) {
                        *u = true;
                    }
                }
            }
        }
    });
    let mut remap = alloc::vec![0u32; used.len()];
    let mut next = 0;
    for (i, u) in used.iter().enumerate() {
        remap[i] = next;
        next += *u as u32;
    }
    fn rewrite(stmts: &mut [Stmt], remap: &[u32]) {
        for s in stmts {
            match s {
                Stmt::Call { args, .. } => {
                    for a in args.iter_mut() {
                        if let Expr::Map(m) = a {
                            *m = remap[*m as usize];
                        }
                    }
                }
                Stmt::Guarded { body, .. } => rewrite(body, remap),
                _ => {}
            }
        }
    }
    rewrite(&mut ast.stmts, &remap);
    let mut i = 0;
    ast.map_deps.retain(|_| {
        i += 1;
        used[i - 1]
    });
}

#[cfg(test)]
mod tests;
