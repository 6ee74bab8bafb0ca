//! Greedy input reduction.

use brf_core::astgen::{fixup_references, prune_map_deps, Expr, ProgramAst, Stmt};
use brf_core::catalog::Catalog;

use crate::input::FuzzInput;

/// Map ordinals still referenced, ascending.
fn used_maps(ast: &ProgramAst) -> Vec<u32> {
    let mut used = Vec::new();
    ast.walk(|s| {
        if let Stmt::Call { args, .. } = s {
            used.extend(args.iter().filter_map(|a| if let Expr::Map(m) = a { Some(*m) } else { None }));
        }
    });
    used.sort_unstable();
    used.dedup();
    used
}

/// Removes the `n`-th statement in depth-first order.
fn remove_nth(stmts: &mut Vec<Stmt>, n: &mut usize) -> bool {
    let mut i = 0;
    while i < stmts.len() {
        if *n == 0 {
            stmts.remove(i);
            return true;
        }
        *n -= 1;
        if let Stmt::Guarded { body, .. } = &mut stmts[i] {
            if remove_nth(body, n) {
                return true;
            }
        }
        i += 1;
    }
    false
}

fn declared(ast: &ProgramAst, v: brf_core::astgen::VarId) -> bool {
    let mut found = ast.ctx_bindings.iter().any(|b| b.var == v);
    ast.walk(|s| found |= s.declares() == Some(v));
    found
}

/// The input with statement `n` removed and everything derived from the
/// program brought back in line.
fn without_stmt(input: &FuzzInput, n: usize, catalog: &Catalog) -> Option<FuzzInput> {
    let mut ast = input.ast.clone();
    if !remove_nth(&mut ast.stmts, &mut { n }) {
        return None;
    }
    if let Expr::Var(v) = ast.ret {
        if !declared(&ast, v) {
            ast.ret = Expr::Imm(0);
        }
    }
    fixup_references(&mut ast, catalog);
    let kept = used_maps(&ast);
    prune_map_deps(&mut ast);
    let mut out = input.with_ast(ast, catalog);
    out.aux.retain_mut(|a| match kept.binary_search(&a.map) {
        Ok(rank) => {
            a.map = rank as u32;
            true
        }
        Err(_) => false,
    });
    Some(out)
}

/// Repeatedly drops single aux calls, triggers and program statements
/// while `keep` holds. An input `keep` rejects comes back unchanged.
pub fn minimize_input(input: &FuzzInput, catalog: &Catalog, mut keep: impl FnMut(&FuzzInput) -> bool) -> FuzzInput {
    let mut cur = input.clone();
    if !keep(&cur) {
        return cur;
    }
    loop {
        let mut changed = false;
        let mut i = cur.aux.len();
        while i > 0 {
            i -= 1;
            let mut c = cur.clone();
            c.aux.remove(i);
            if keep(&c) {
                cur = c;
                changed = true;
            }
        }
        let mut i = cur.triggers.len();
        while i > 0 {
            i -= 1;
            let mut c = cur.clone();
            c.triggers.remove(i);
            let n = c.triggers.len() as u32;
            for a in &mut c.aux {
                if a.at > i as u32 {
                    a.at -= 1;
                }
                a.at = a.at.min(n);
            }
            if keep(&c) {
                cur = c;
                changed = true;
            }
        }
        let mut count = 0;
        cur.ast.walk(|_| count += 1);
        let mut n = count;
        while n > 0 {
            n -= 1;
            if let Some(c) = without_stmt(&cur, n, catalog) {
                // Reference fixup can put a release back; only shrinking counts.
                if c.size() < cur.size() && keep(&c) {
                    cur = c;
                    changed = true;
                }
            }
        }
        if !changed {
            return cur;
        }
    }
}
