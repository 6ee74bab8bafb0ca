//! Random program construction around target helper calls, and
//! argument-level mutation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::catalog::{helper_ids, MapTypeId};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// How deep argument production may recurse through helper calls.
    pub max_depth: u32,
    /// Range of top-level target calls per program.
    pub min_targets: u32,
    pub max_targets: u32,
    /// Relative weights of the direct-value, context-field and helper-call
    /// argument strategies.
    pub weights: [f64; 3],
    pub stack_budget: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_depth: 3, min_targets: 2, max_targets: 5, weights: [0.4, 0.3, 0.3], stack_budget: 512 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Direct,
    Context,
    Helper,
}

enum Item {
    S(Stmt),
    Open(Vec<Pred>),
}

fn fold(items: Vec<Item>, env: &TypeEnv) -> Vec<Stmt> {
    let mut body: Vec<Stmt> = Vec::new();
    for it in items.into_iter().rev() {
        match it {
            Item::S(s) => body.insert(0, s),
            Item::Open(p) => body = guard(p, body, env),
        }
    }
    body
}

#[derive(Default, Clone, Copy)]
struct CallState {
    map: Option<u32>,
    region: Option<u32>,
}

/// Requirements on a map's value region when a lookup result is used as
/// memory.
#[derive(Default, Clone, Copy)]
struct ValueNeed {
    min_size: u32,
    read: bool,
    write: bool,
}

#[derive(Clone)]
struct State {
    ast: ProgramAst,
    env: TypeEnv,
    visible: Vec<VarId>,
    next: u32,
    stack: u32,
}

struct Gen<'a, R: Rng> {
    cat: &'a Catalog,
    cfg: &'a GenConfig,
    rng: &'a mut R,
    s: State,
    rdonly_prog: u32,
    wronly_prog: u32,
}

impl<'a, R: Rng> Gen<'a, R> {
    fn new(cat: &'a Catalog, cfg: &'a GenConfig, rng: &'a mut R, s: State) -> Self {
        Gen {
            cat,
            cfg,
            rng,
            s,
            rdonly_prog: cat.flag_bit("RDONLY_PROG").unwrap_or(0),
            wronly_prog: cat.flag_bit("WRONLY_PROG").unwrap_or(0),
        }
    }

    fn pt(&self) -> ProgramTypeId {
        self.s.ast.prog_type
    }

    fn strategy(&mut self, depth: u32) -> Strategy {
        let [d, c, h] = self.cfg.weights;
        let h = if depth == 0 { 0.0 } else { h };
        let x = self.rng.gen::<f64>() * (d + c + h);
        if x < d {
            Strategy::Direct
        } else if x < d + c {
            Strategy::Context
        } else {
            Strategy::Helper
        }
    }

    fn declare(&mut self, kind: VarKind) -> Option<VarId> {
        let bytes = kind.stack_bytes();
        if self.s.stack + bytes > self.cfg.stack_budget {
            return None;
        }
        self.s.stack += bytes;
        let v = VarId(self.s.next);
        self.s.next += 1;
        self.s.env.insert(v, kind);
        self.s.visible.push(v);
        Some(v)
    }

    fn visible_where(&self, f: impl Fn(&VarKind) -> bool) -> Vec<VarId> {
        let ctx = self.s.ast.ctx_bindings.iter().map(|b| b.var);
        self.s.visible.iter().copied().chain(ctx).filter(|v| self.s.env.get(v).is_some_and(&f)).collect()
    }

    fn usable(&self, h: &HelperProto) -> bool {
        if !self.cat.is_available(self.pt(), h.id) {
            return false;
        }
        if h.map_arg().is_some() && self.cat.maps_for(self.pt(), h.id).map_or(true, |m| m.is_empty()) {
            return false;
        }
        if h.args.contains(&ArgType::PtrToRef) && self.acquirer().is_none() {
            return false;
        }
        true
    }

    fn acquirer(&self) -> Option<&'a HelperProto> {
        let cat = self.cat;
        cat.helpers().iter().find(|h| {
            h.acquires.is_some()
                && cat.is_available(self.pt(), h.id)
                && cat.maps_for(self.pt(), h.id).is_ok_and(|m| !m.is_empty())
        })
    }

    // ---- maps

    fn flags_ok(&self, flags: u32, h: &HelperProto, need: ValueNeed) -> bool {
        let ro = flags & self.rdonly_prog != 0;
        let wo = flags & self.wronly_prog != 0;
        !((h.map_writes || need.write) && ro) && !((h.map_reads || need.read) && wo)
    }

    fn pick_value(&mut self, range: &crate::catalog::AttrRange, at_least: u32, prefer_max: u32) -> Option<u32> {
        let all: Vec<u32> = range.values().into_iter().filter(|v| *v >= at_least).collect();
        let small: Vec<u32> = all.iter().copied().filter(|v| *v <= prefer_max.max(at_least)).collect();
        let pool = if !small.is_empty() && self.rng.gen_bool(0.9) { small } else { all };
        pool.choose(self.rng).copied()
    }

    fn new_map(&mut self, mt: MapTypeId, h: &HelperProto, need: ValueNeed) -> Option<MapSpecRequest> {
        let spec = self.cat.map_attr_constraints(mt)?.clone();
        let key_size = self.pick_value(&spec.key_size, 0, 16)?;
        let value_size = self.pick_value(&spec.value_size, need.min_size, 64)?;
        let max_entries = self.pick_value(&spec.max_entries, 0, 64)?;
        let forbidden = self.cat.program_type(self.pt()).forbidden_map_flags;
        let mut flags = 0;
        for group in &spec.flag_groups {
            if !self.rng.gen_bool(0.3) {
                continue;
            }
            let allowed: Vec<u32> = group
                .iter()
                .copied()
                .filter(|f| f & forbidden == 0 && self.flags_ok(*f, h, need))
                .collect();
            if let Some(f) = allowed.choose(self.rng) {
                flags |= f;
            }
        }
        let req = MapSpecRequest { map_type: mt, key_size, value_size, max_entries, flags };
        self.cat.validate_map_spec(&req).ok()?;
        Some(req)
    }

    fn pick_map(&mut self, h: &HelperProto, need: ValueNeed) -> Option<u32> {
        let types = self.cat.maps_for(self.pt(), h.id).ok()?;
        let existing: Vec<u32> = (0..self.s.ast.map_deps.len() as u32)
            .filter(|i| {
                let m = &self.s.ast.map_deps[*i as usize];
                types.contains(&m.map_type) && m.value_size >= need.min_size && self.flags_ok(m.flags, h, need)
            })
            .collect();
        if !existing.is_empty() && self.rng.gen_bool(0.5) {
            return existing.choose(self.rng).copied();
        }
        for _ in 0..4 {
            let mt = *types.choose(self.rng)?;
            if let Some(req) = self.new_map(mt, h, need) {
                self.s.ast.map_deps.push(req);
                return Some((self.s.ast.map_deps.len() - 1) as u32);
            }
        }
        existing.choose(self.rng).copied()
    }

    // ---- context

    fn ctx_var(&mut self, sock: bool) -> Option<VarId> {
        let pt = self.pt();
        let fields: Vec<alloc::string::String> = self
            .cat
            .context_fields(pt, false)
            .into_iter()
            .filter(|f| (f.yields == ValueType::PtrToSockCommon) == sock)
            .map(|f| f.name.clone())
            .collect();
        let field = fields.choose(self.rng)?.clone();
        if let Some(b) = self.s.ast.ctx_bindings.iter().find(|b| b.field == field) {
            return Some(b.var);
        }
        let kind = if sock { VarKind::Sock } else { VarKind::Scalar };
        let v = self.declare(kind)?;
        self.s.visible.pop();
        self.s.ast.ctx_bindings.push(CtxBinding { var: v, field });
        Some(v)
    }

    // ---- arguments

    fn scalar_producer(&mut self, depth: u32, items: &mut Vec<Item>) -> Option<VarId> {
        if depth == 0 {
            return None;
        }
        let cands: Vec<&'a HelperProto> = self
            .cat
            .helpers()
            .iter()
            .filter(|h| h.ret == RetType::Integer && h.id != helper_ids::TAIL_CALL && self.usable(h))
            .collect();
        let h = *cands.choose(self.rng)?;
        self.gen_call(h, depth - 1, items, true)?
    }

    fn gen_scalar(&mut self, depth: u32, items: &mut Vec<Item>) -> Option<Expr> {
        match self.strategy(depth) {
            Strategy::Helper => {
                if let Some(v) = self.scalar_producer(depth, items) {
                    return Some(Expr::Var(v));
                }
            }
            Strategy::Context => {
                if let Some(v) = self.ctx_var(false) {
                    return Some(Expr::Var(v));
                }
            }
            Strategy::Direct => {}
        }
        let scalars = self.visible_where(|k| *k == VarKind::Scalar);
        if !scalars.is_empty() && self.rng.gen_bool(0.2) {
            return scalars.choose(self.rng).map(|v| Expr::Var(*v));
        }
        Some(Expr::Imm(self.literal()))
    }

    fn literal(&mut self) -> i64 {
        match self.rng.gen_range(0..10) {
            0..=4 => 0,
            5..=7 => self.rng.gen_range(1..=16),
            8 => self.rng.gen::<u32>() as i64,
            _ => self.rng.gen::<i64>(),
        }
    }

    fn gen_anything(&mut self, h: &HelperProto, k: usize, st: CallState, depth: u32, items: &mut Vec<Item>) -> Option<Expr> {
        if h.id == helper_ids::TAIL_CALL && k > 0 && h.args[k - 1] == ArgType::ConstMapPtr {
            let max = st.map.map_or(1, |m| self.s.ast.map_deps[m as usize].max_entries.max(1));
            return Some(Expr::Imm(self.rng.gen_range(0..2 * max as i64)));
        }
        if h.id == helper_ids::MAP_UPDATE_ELEM && k == 3 {
            return Some(Expr::Imm(*[0i64, 0, 0, 1, 2].choose(self.rng)?));
        }
        if self.pt() == ProgramTypeId::SocketFilter && self.rng.gen_bool(0.05) {
            if let Some(v) = self.ctx_var(true) {
                return Some(Expr::Var(v));
            }
        }
        self.gen_scalar(depth, items)
    }

    fn gen_size(&mut self, arg: ArgType, st: CallState, after_map: bool, depth: u32, items: &mut Vec<Item>) -> Option<Expr> {
        if after_map {
            return Some(Expr::Imm(8 * self.rng.gen_range(1..=8)));
        }
        let zero_ok = arg == ArgType::ConstSizeOrZero;
        let lo = if zero_ok { 0 } else { 1 };
        let region = st.region.unwrap_or(1).max(1);
        let var = match self.strategy(depth) {
            Strategy::Helper => self.scalar_producer(depth, items),
            Strategy::Context => self.ctx_var(false),
            Strategy::Direct => None,
        };
        Some(match var {
            Some(v) => Expr::Var(v),
            None => Expr::Imm(self.rng.gen_range(lo..=region) as i64),
        })
    }

    /// A pointer to at least `min` bytes (a random size when `None`) that the
    /// helper may read or write.
    fn gen_region(
        &mut self,
        min: Option<u32>,
        write: bool,
        allow_acquire: bool,
        depth: u32,
        items: &mut Vec<Item>,
        deferred: &mut Vec<Stmt>,
    ) -> Option<(Expr, u32)> {
        let need = ValueNeed { min_size: min.unwrap_or(1), read: !write, write };
        if self.strategy(depth) == Strategy::Helper {
            if allow_acquire && self.rng.gen_bool(0.3) {
                if let Some(r) = self.gen_acquire(min, deferred) {
                    return Some(r);
                }
            }
            let reusable = self.visible_where(|k| match *k {
                VarKind::MapValue { map } => {
                    let m = &self.s.ast.map_deps[map as usize];
                    m.value_size >= need.min_size
                        && !(need.write && m.flags & self.rdonly_prog != 0)
                        && !(need.read && m.flags & self.wronly_prog != 0)
                }
                _ => false,
            });
            if !reusable.is_empty() && self.rng.gen_bool(0.3) {
                let v = *reusable.choose(self.rng)?;
                let size = self.s.env[&v].region(&self.s.ast)?;
                return Some((Expr::Var(v), size));
            }
            if let Some(lookup) = self.cat.helper(helper_ids::MAP_LOOKUP_ELEM).filter(|h| self.usable(h)) {
                if let Some(v) = self.gen_call_need(lookup, depth - 1, items, true, need)? {
                    let size = self.s.env[&v].region(&self.s.ast)?;
                    return Some((Expr::Var(v), size));
                }
            }
        }
        let bufs = self.visible_where(|k| matches!(k, VarKind::Buf { size } if *size >= need.min_size));
        if !bufs.is_empty() && self.rng.gen_bool(0.3) {
            let v = *bufs.choose(self.rng)?;
            let size = self.s.env[&v].region(&self.s.ast)?;
            return Some((Expr::Var(v), size));
        }
        let size = match min {
            Some(m) => m,
            None => self.rng.gen_range(1..=64),
        };
        let v = self.declare(VarKind::Buf { size })?;
        let fill = if self.rng.gen_bool(0.5) { 0 } else { self.rng.gen() };
        items.push(Item::S(Stmt::StackBuf { var: v, size, fill }));
        Some((Expr::Var(v), size))
    }

    /// An acquired reference, emitted just before the consuming call.
    fn gen_acquire(&mut self, min: Option<u32>, deferred: &mut Vec<Stmt>) -> Option<(Expr, u32)> {
        let h = self.acquirer()?;
        let map = self.pick_map(h, ValueNeed::default())?;
        let size = match min {
            Some(m) => m.div_ceil(8) * 8,
            None => 8 * self.rng.gen_range(1..=8),
        };
        let args: Vec<Expr> = h
            .args
            .iter()
            .map(|a| match a {
                ArgType::ConstMapPtr => Expr::Map(map),
                a if a.is_size() => Expr::Imm(size as i64),
                _ => Expr::Imm(0),
            })
            .collect();
        let v = self.declare(VarKind::Mem { size, acquired: true })?;
        deferred.push(Stmt::Call { var: Some(v), helper: h.id, args });
        Some((Expr::Var(v), size))
    }

    fn gen_arg(
        &mut self,
        h: &HelperProto,
        k: usize,
        st: &mut CallState,
        depth: u32,
        items: &mut Vec<Item>,
        deferred: &mut Vec<Stmt>,
    ) -> Option<Expr> {
        let arg = h.args[k];
        let map_spec = st.map.map(|m| self.s.ast.map_deps[m as usize]);
        Some(match arg {
            ArgType::ConstMapPtr => {
                let m = self.pick_map(h, ValueNeed::default())?;
                st.map = Some(m);
                Expr::Map(m)
            }
            ArgType::PtrToCtx => Expr::Ctx,
            ArgType::PtrToMapKey | ArgType::PtrToMapValue | ArgType::PtrToUninitMapValue => {
                let spec = map_spec?;
                let size = if arg == ArgType::PtrToMapKey { spec.key_size } else { spec.value_size };
                let write = arg == ArgType::PtrToUninitMapValue;
                self.gen_region(Some(size.max(1)), write, false, depth, items, deferred)?.0
            }
            ArgType::PtrToMem | ArgType::PtrToUninitMem => {
                let write = arg == ArgType::PtrToUninitMem;
                let (e, size) = self.gen_region(None, write, true, depth, items, deferred)?;
                st.region = Some(size);
                e
            }
            ArgType::ConstSize | ArgType::ConstSizeOrZero => {
                let after_map = k > 0 && h.args[k - 1] == ArgType::ConstMapPtr;
                self.gen_size(arg, *st, after_map, depth, items)?
            }
            ArgType::PtrToRef => self.gen_acquire(None, deferred)?.0,
            ArgType::Anything => self.gen_anything(h, k, *st, depth, items)?,
        })
    }

    fn gen_call(&mut self, h: &HelperProto, depth: u32, items: &mut Vec<Item>, want_var: bool) -> Option<Option<VarId>> {
        self.gen_call_need(h, depth, items, want_var, ValueNeed::default())
    }

    /// Emits a call to `h`; `need` constrains the map chosen for a lookup
    /// whose result will be used as memory.
    fn gen_call_need(
        &mut self,
        h: &HelperProto,
        depth: u32,
        items: &mut Vec<Item>,
        want_var: bool,
        need: ValueNeed,
    ) -> Option<Option<VarId>> {
        let mut st = CallState::default();
        let mut args = Vec::with_capacity(h.args.len());
        let mut deferred = Vec::new();
        for k in 0..h.args.len() {
            let e = if h.args[k] == ArgType::ConstMapPtr {
                let m = self.pick_map(h, need)?;
                st.map = Some(m);
                Expr::Map(m)
            } else {
                self.gen_arg(h, k, &mut st, depth, items, &mut deferred)?
            };
            args.push(e);
        }
        items.extend(deferred.into_iter().map(Item::S));
        let preds = wrap_safety_checks(h, &args, &self.s.env, &self.s.ast);
        if !preds.is_empty() {
            items.push(Item::Open(preds));
        }
        let var = match call_result_kind(h, &args) {
            Some(kind) if want_var || kind != VarKind::Scalar => Some(self.declare(kind)?),
            _ => None,
        };
        items.push(Item::S(Stmt::Call { var, helper: h.id, args }));
        Some(var)
    }

    // ---- extra statements

    fn use_pointer(&mut self, v: VarId, items: &mut Vec<Item>) {
        let Some(kind) = self.s.env.get(&v).copied() else { return };
        let Some(size) = kind.region(&self.s.ast) else { return };
        let flags = match kind {
            VarKind::MapValue { map } => self.s.ast.map_deps[map as usize].flags,
            _ => 0,
        };
        items.push(Item::Open(vec![Pred::NonNull(v)]));
        for _ in 0..self.rng.gen_range(1..=2) {
            let width = *[1u32, 2, 4, 8].iter().filter(|w| **w <= size).collect::<Vec<_>>().choose(self.rng).copied().unwrap_or(&1);
            let offset = self.rng.gen_range(0..=size - width);
            let can_write = flags & self.rdonly_prog == 0;
            let can_read = flags & self.wronly_prog == 0;
            if can_write && (!can_read || self.rng.gen_bool(0.5)) {
                let value = match self.visible_where(|k| *k == VarKind::Scalar).choose(self.rng) {
                    Some(s) if self.rng.gen_bool(0.5) => Expr::Var(*s),
                    _ => Expr::Imm(self.rng.gen_range(-8..256)),
                };
                items.push(Item::S(Stmt::Store { ptr: v, offset, width, value }));
            } else if can_read {
                if let Some(var) = self.declare(VarKind::Scalar) {
                    items.push(Item::S(Stmt::Load { var, ptr: v, offset, width }));
                }
            }
        }
    }

    fn extras(&mut self, items: &mut Vec<Item>) {
        let scalars = self.visible_where(|k| *k == VarKind::Scalar);
        if !scalars.is_empty() && self.rng.gen_bool(0.3) {
            let lhs = *scalars.choose(self.rng).unwrap();
            let op = *BinOp::ALL.choose(self.rng).unwrap();
            let rhs = match op {
                _ if self.rng.gen_bool(0.5) => Expr::Var(*scalars.choose(self.rng).unwrap()),
                BinOp::Lsh | BinOp::Rsh => Expr::Imm(self.rng.gen_range(0..64)),
                _ => Expr::Imm(self.rng.gen_range(-16..=16)),
            };
            if let Some(var) = self.declare(VarKind::Scalar) {
                items.push(Item::S(Stmt::BinOp { var, op, lhs, rhs }));
            }
        }
        if self.rng.gen_bool(0.15) {
            let fields: Vec<alloc::string::String> = self
                .cat
                .context_fields(self.pt(), true)
                .into_iter()
                .map(|f| f.name.clone())
                .collect();
            if let Some(field) = fields.choose(self.rng).cloned() {
                let value = match scalars.choose(self.rng) {
                    Some(s) if self.rng.gen_bool(0.5) => Expr::Var(*s),
                    _ => Expr::Imm(self.rng.gen_range(0..64)),
                };
                items.push(Item::S(Stmt::CtxStore { field, value }));
            }
        }
    }

    fn target(&mut self) -> Option<()> {
        let cands: Vec<&'a HelperProto> = self.cat.helpers().iter().filter(|h| self.usable(h)).collect();
        let h = *cands.choose(self.rng)?;
        let mark = self.s.visible.len();
        let mut items = Vec::new();
        let want_var = self.rng.gen_bool(0.5);
        let var = self.gen_call(h, self.cfg.max_depth, &mut items, want_var)?;
        if let Some(v) = var {
            if self.s.env[&v].nullable() && self.rng.gen_bool(0.6) {
                self.use_pointer(v, &mut items);
            }
        }
        self.extras(&mut items);
        // Only declarations before the first guard stay in scope.
        let mut keep = Vec::new();
        for it in &items {
            match it {
                Item::Open(_) => break,
                Item::S(s) => keep.extend(s.declares()),
            }
        }
        self.s.visible.truncate(mark);
        self.s.visible.extend(keep);
        let stmts = fold(items, &self.s.env);
        self.s.ast.stmts.extend(stmts);
        Some(())
    }
}

/// Builds a random program; `pt` fixes the program type, otherwise one is
/// drawn uniformly.
pub fn generate_program<R: Rng>(catalog: &Catalog, cfg: &GenConfig, rng: &mut R, pt: Option<ProgramTypeId>) -> ProgramAst {
    let pt = pt.unwrap_or_else(|| *ProgramTypeId::ALL.choose(rng).unwrap());
    let state = State { ast: ProgramAst::empty(pt), env: TypeEnv::new(), visible: Vec::new(), next: 0, stack: 0 };
    let mut g = Gen::new(catalog, cfg, rng, state);
    let targets = g.rng.gen_range(cfg.min_targets..=cfg.max_targets.max(cfg.min_targets));
    for _ in 0..targets {
        for _attempt in 0..4 {
            let saved = g.s.clone();
            if g.target().is_some() {
                break;
            }
            g.s = saved;
        }
    }
    let scalars = g.visible_where(|k| *k == VarKind::Scalar);
    if !scalars.is_empty() && g.rng.gen_bool(0.3) {
        g.s.ast.ret = Expr::Var(*scalars.choose(g.rng).unwrap());
    } else {
        g.s.ast.ret = Expr::Imm(g.rng.gen_range(0..4));
    }
    let mut ast = g.s.ast;
    fixup_references(&mut ast, catalog);
    prune_map_deps(&mut ast);
    ast
}

/// Index path to a statement inside nested guard bodies.
type Path = Vec<usize>;

fn call_paths(stmts: &[Stmt], prefix: &mut Path, out: &mut Vec<Path>) {
    for (i, s) in stmts.iter().enumerate() {
        prefix.push(i);
        match s {
            Stmt::Call { args, .. } if !args.is_empty() => out.push(prefix.clone()),
            Stmt::Guarded { body, .. } => call_paths(body, prefix, out),
            _ => {}
        }
        prefix.pop();
    }
}

fn stmt_at<'s>(stmts: &'s [Stmt], path: &[usize]) -> &'s Stmt {
    let s = &stmts[path[0]];
    match s {
        Stmt::Guarded { body, .. } if path.len() > 1 => stmt_at(body, &path[1..]),
        _ => s,
    }
}

/// Replaces the statement at `path` with `build(tail)`, where `tail` holds
/// the statements after it in the same block when `take_tail` says they
/// must move along.
fn splice_at(
    stmts: &mut Vec<Stmt>,
    path: &[usize],
    take_tail: &dyn Fn(&[Stmt]) -> bool,
    build: &mut dyn FnMut(Vec<Stmt>) -> Vec<Stmt>,
) {
    if path.len() == 1 {
        let i = path[0];
        let tail = if take_tail(&stmts[i + 1..]) { stmts.split_off(i + 1) } else { Vec::new() };
        stmts.remove(i);
        let replacement = build(tail);
        stmts.splice(i..i, replacement);
        return;
    }
    if let Stmt::Guarded { body, .. } = &mut stmts[path[0]] {
        splice_at(body, &path[1..], take_tail, build);
    }
}


/// Whether moving the tail after `path` would carry the release of a
/// reference acquired before it.
fn tail_releases_outer_ref(stmts: &[Stmt], path: &[usize], take_tail: &dyn Fn(&[Stmt]) -> bool, catalog: &Catalog) -> bool {
    if path.len() > 1 {
        return match &stmts[path[0]] {
            Stmt::Guarded { body, .. } => tail_releases_outer_ref(body, &path[1..], take_tail, catalog),
            _ => false,
        };
    }
    let tail = &stmts[path[0] + 1..];
    if !take_tail(tail) {
        return false;
    }
    let tail_ast = ProgramAst { stmts: tail.to_vec(), ..ProgramAst::empty(ProgramTypeId::Kprobe) };
    let mut declared = Vec::new();
    let mut released = Vec::new();
    tail_ast.walk(|s| {
        declared.extend(s.declares());
        if let Stmt::Call { helper, args, .. } = s {
            if let Some(h) = catalog.helper(*helper).filter(|h| h.releases.is_some()) {
                for (a, e) in h.args.iter().zip(args) {
                    if let (ArgType::PtrToRef, Expr::Var(v)) = (a, e) {
                        released.push(*v);
                    }
                }
            }
        }
    });
    released.iter().any(|v| !declared.contains(v))
}

fn visible_at(stmts: &[Stmt], path: &[usize], out: &mut Vec<VarId>) {
    for s in &stmts[..path[0]] {
        out.extend(s.declares());
    }
    if path.len() > 1 {
        if let Stmt::Guarded { body, .. } = &stmts[path[0]] {
            visible_at(body, &path[1..], out);
        }
    }
}

/// Regenerates one argument of one helper call and re-establishes guards,
/// reference balance and the map dependency list.
///
/// A map argument is swapped for another map with the same type and
/// element sizes, so the arguments sized after it stay valid. A memory
/// argument is regenerated together with the size argument that follows.
pub fn mutate_program<R: Rng>(ast: &ProgramAst, catalog: &Catalog, cfg: &GenConfig, rng: &mut R) -> ProgramAst {
    let mut paths = Vec::new();
    call_paths(&ast.stmts, &mut Vec::new(), &mut paths);
    for _attempt in 0..8 {
        let Some(path) = paths.choose(rng).cloned() else { break };
        if let Some(out) = try_mutate(ast, catalog, cfg, rng, &path) {
            return out;
        }
    }
    ast.clone()
}

fn try_mutate<R: Rng>(ast: &ProgramAst, catalog: &Catalog, cfg: &GenConfig, rng: &mut R, path: &[usize]) -> Option<ProgramAst> {
    let Stmt::Call { var, helper, args } = stmt_at(&ast.stmts, path).clone() else { return None };
    let h = catalog.helper(helper)?;
    let mutable: Vec<usize> = (0..h.args.len()).filter(|k| h.args[*k] != ArgType::PtrToCtx).collect();
    let k = *mutable.choose(rng)?;
    let env = infer_types(ast, catalog);
    let mut visible = Vec::new();
    visible_at(&ast.stmts, path, &mut visible);
    let stack = stack_usage(ast, &env);
    let state = State { ast: ast.clone(), env, visible, next: ast.next_var(), stack };
    let mut g = Gen::new(catalog, cfg, rng, state);

    let mut st = CallState::default();
    if let Some(m) = h.map_arg() {
        if let Some(Expr::Map(o)) = args.get(m) {
            st.map = Some(*o);
        }
    }
    let mut new_args = args.clone();
    let mut items = Vec::new();
    let mut deferred = Vec::new();
    let depth = cfg.max_depth;
    match h.args[k] {
        ArgType::ConstMapPtr => {
            let old = g.s.ast.map_deps[st.map? as usize];
            let prog_flags = g.rdonly_prog | g.wronly_prog;
            let same: Vec<u32> = (0..g.s.ast.map_deps.len() as u32)
                .filter(|i| {
                    let m = g.s.ast.map_deps[*i as usize];
                    Some(*i) != st.map
                        && m.map_type == old.map_type
                        && m.key_size == old.key_size
                        && m.value_size == old.value_size
                        && m.flags & prog_flags == old.flags & prog_flags
                })
                .collect();
            let ord = if !same.is_empty() && g.rng.gen_bool(0.5) {
                *same.choose(g.rng)?
            } else {
                let spec = catalog.map_attr_constraints(old.map_type)?.clone();
                let max_entries = g.pick_value(&spec.max_entries, 0, 64)?;
                let forbidden = catalog.program_type(ast.prog_type).forbidden_map_flags;
                let mut flags = old.flags & prog_flags;
                for group in &spec.flag_groups {
                    if group.iter().any(|f| f & prog_flags != 0) || !g.rng.gen_bool(0.3) {
                        continue;
                    }
                    let allowed: Vec<u32> = group.iter().copied().filter(|f| f & forbidden == 0).collect();
                    if let Some(f) = allowed.choose(g.rng) {
                        flags |= f;
                    }
                }
                let req = MapSpecRequest { max_entries, flags, ..old };
                catalog.validate_map_spec(&req).ok()?;
                g.s.ast.map_deps.push(req);
                (g.s.ast.map_deps.len() - 1) as u32
            };
            new_args[k] = Expr::Map(ord);
        }
        ArgType::PtrToMem | ArgType::PtrToUninitMem => {
            new_args[k] = g.gen_arg(h, k, &mut st, depth, &mut items, &mut deferred)?;
            if h.args.get(k + 1).is_some_and(|a| a.is_size()) {
                new_args[k + 1] = g.gen_arg(h, k + 1, &mut st, depth, &mut items, &mut deferred)?;
            }
        }
        a if a.is_size() => {
            if k > 0 && h.args[k - 1] == ArgType::ConstMapPtr {
                // Allocation size: only grow, so uses of the result stay in bounds.
                let Expr::Imm(old) = args[k] else { return None };
                new_args[k] = Expr::Imm(old + 8 * g.rng.gen_range(0..4));
            } else {
                st.region = match args.get(k.wrapping_sub(1)) {
                    Some(Expr::Var(p)) => g.s.env.get(p).and_then(|pk| pk.region(&g.s.ast)),
                    _ => None,
                };
                if st.region.is_none() {
                    return None;
                }
                new_args[k] = g.gen_arg(h, k, &mut st, depth, &mut items, &mut deferred)?;
            }
        }
        _ => {
            new_args[k] = g.gen_arg(h, k, &mut st, depth, &mut items, &mut deferred)?;
        }
    }
    // A reference must not live across the guards just generated, so a
    // releasing call always gets a fresh acquisition.
    if let Some(r) = h.args.iter().position(|a| *a == ArgType::PtrToRef) {
        if r != k {
            new_args[r] = g.gen_arg(h, r, &mut st, depth, &mut items, &mut deferred)?;
        }
    }
    items.extend(deferred.into_iter().map(Item::S));
    let preds = wrap_safety_checks(h, &new_args, &g.s.env, &g.s.ast);
    if !preds.is_empty() {
        items.push(Item::Open(preds));
    }
    items.push(Item::S(Stmt::Call { var, helper, args: new_args }));
    let env = g.s.env;
    let mut out = g.s.ast;
    let mut items = Some(items);
    let take_tail = |tail: &[Stmt]| var.is_some_and(|v| tail.iter().any(|s| s.uses(v, true)));
    if tail_releases_outer_ref(&out.stmts, path, &take_tail, catalog) {
        return None;
    }
    splice_at(&mut out.stmts, path, &take_tail, &mut |tail| {
        let mut items = items.take().unwrap_or_default();
        items.extend(tail.into_iter().map(Item::S));
        fold(items, &env)
    });
    if let Expr::Var(r) = out.ret {
        let top = out.ctx_bindings.iter().any(|b| b.var == r) || out.stmts.iter().any(|s| s.declares() == Some(r));
        if !top {
            out.ret = Expr::Imm(0);
        }
    }
    fixup_references(&mut out, catalog);
    prune_map_deps(&mut out);
    Some(out)
}
