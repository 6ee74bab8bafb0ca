//! Line-oriented text form of [`ProgramAst`], used for the corpus and for
//! reproducers.
//!
//! ```text
//! prog socket_filter
//! map m0 array key=4 value=8 max=4 flags=0
//! ctx v0 = len
//! buf v1[8] = 0
//! v2 = call map_lookup_elem(&m0, v1)
//! if v2 != null {
//!   store u32 v2 + 0 = v0
//! }
//! return 0
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::*;
use crate::catalog::MapTypeId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn width_name(w: u32) -> &'static str {
    match w {
        1 => "u8",
        2 => "u16",
        4 => "u32",
        _ => "u64",
    }
}

fn expr_text(e: &Expr) -> String {
    match e {
        Expr::Var(v) => v.to_string(),
        Expr::Imm(i) => i.to_string(),
        Expr::Map(m) => format!("&m{m}"),
        Expr::Ctx => "ctx".to_string(),
    }
}

fn helper_text(catalog: &Catalog, h: HelperId) -> String {
    catalog.helper(h).map_or_else(|| format!("#{}", h.0), |p| p.name.clone())
}

fn write_stmts(out: &mut String, stmts: &[Stmt], indent: usize, catalog: &Catalog) {
    let pad = "  ".repeat(indent);
    for s in stmts {
        out.push_str(&pad);
        match s {
            Stmt::Literal { var, value } => {
                let _ = writeln!(out, "{var} = {value}");
            }
            Stmt::StackBuf { var, size, fill } => {
                let _ = writeln!(out, "buf {var}[{size}] = {fill}");
            }
            Stmt::Call { var, helper, args } => {
                if let Some(v) = var {
                    let _ = write!(out, "{v} = ");
                }
                let args: Vec<String> = args.iter().map(expr_text).collect();
                let _ = writeln!(out, "call {}({})", helper_text(catalog, *helper), args.join(", "));
            }
            Stmt::Guarded { preds, body } => {
                let preds: Vec<String> = preds
                    .iter()
                    .map(|p| match p {
                        Pred::NonNull(v) => format!("{v} != null"),
                        Pred::SizeBound(v, b) => format!("{v} <= {b}"),
                        Pred::NonZero(v) => format!("{v} != 0"),
                    })
                    .collect();
                let _ = writeln!(out, "if {} {{", preds.join(" && "));
                write_stmts(out, body, indent + 1, catalog);
                out.push_str(&pad);
                out.push_str("}\n");
            }
            Stmt::BinOp { var, op, lhs, rhs } => {
                let _ = writeln!(out, "{var} = {lhs} {} {}", op.symbol(), expr_text(rhs));
            }
            Stmt::Load { var, ptr, offset, width } => {
                let _ = writeln!(out, "{var} = load {} {ptr} + {offset}", width_name(*width));
            }
            Stmt::Store { ptr, offset, width, value } => {
                let _ = writeln!(out, "store {} {ptr} + {offset} = {}", width_name(*width), expr_text(value));
            }
            Stmt::CtxStore { field, value } => {
                let _ = writeln!(out, "ctx.{field} = {}", expr_text(value));
            }
        }
    }
}

pub fn serialize(ast: &ProgramAst, catalog: &Catalog) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "prog {}", ast.prog_type.name().to_ascii_lowercase());
    for (i, m) in ast.map_deps.iter().enumerate() {
        let _ = writeln!(
            out,
            "map m{i} {} key={} value={} max={} flags={}",
            m.map_type.name().to_ascii_lowercase(),
            m.key_size,
            m.value_size,
            m.max_entries,
            m.flags
        );
    }
    for b in &ast.ctx_bindings {
        let _ = writeln!(out, "ctx {} = {}", b.var, b.field);
    }
    write_stmts(&mut out, &ast.stmts, 0, catalog);
    let _ = writeln!(out, "return {}", expr_text(&ast.ret));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Sym(&'static str),
}

const SYMS: &[&str] = &["!=", "<=", "&&", "<<", ">>", "=", "(", ")", ",", "{", "}", "[", "]", "+", "-", "*", "&", "|", "^"];

fn lex(line: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let mut rest = line.trim();
    while !rest.is_empty() {
        let c = rest.chars().next().unwrap_or(' ');
        if c.is_whitespace() {
            rest = rest.trim_start();
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '#' {
            let end = rest.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '#')).unwrap_or(rest.len());
            toks.push(Tok::Word(rest[..end].to_string()));
            rest = &rest[end..];
            continue;
        }
        let Some(sym) = SYMS.iter().find(|s| rest.starts_with(**s)) else {
            return Err(format!("unexpected character {c:?}"));
        };
        toks.push(Tok::Sym(sym));
        rest = &rest[sym.len()..];
    }
    Ok(toks)
}

fn parse_int(s: &str) -> Result<i64, String> {
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    let v = if let Some(hex) = digits.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map(|v| v as i64)
    } else {
        digits.parse::<u64>().map(|v| v as i64)
    }
    .map_err(|_| format!("bad number {s:?}"))?;
    Ok(if neg { v.wrapping_neg() } else { v })
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let v = parse_int(s)?;
    u32::try_from(v).map_err(|_| format!("{s} out of range"))
}

fn parse_var(s: &str) -> Result<VarId, String> {
    s.strip_prefix('v')
        .and_then(|n| n.parse().ok())
        .map(VarId)
        .ok_or_else(|| format!("expected variable, got {s:?}"))
}

fn parse_width(s: &str) -> Result<u32, String> {
    match s {
        "u8" => Ok(1),
        "u16" => Ok(2),
        "u32" => Ok(4),
        "u64" => Ok(8),
        _ => Err(format!("bad width {s:?}")),
    }
}

struct Cursor<'t> {
    toks: &'t [Tok],
    pos: usize,
}

impl<'t> Cursor<'t> {
    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos)
    }

    fn word(&mut self) -> Result<&'t str, String> {
        match self.toks.get(self.pos) {
            Some(Tok::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            other => Err(format!("expected word, got {other:?}")),
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), String> {
        match self.toks.get(self.pos) {
            Some(Tok::Sym(t)) if *t == s => {
                self.pos += 1;
                Ok(())
            }
            other => Err(format!("expected {s:?}, got {other:?}")),
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        self.sym(s).is_ok()
    }

    fn done(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("trailing {t:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        if self.eat_sym("&") {
            let w = self.word()?;
            let m = w.strip_prefix('m').and_then(|n| n.parse().ok()).ok_or_else(|| format!("bad map reference {w:?}"))?;
            return Ok(Expr::Map(m));
        }
        if self.eat_sym("-") {
            let w = self.word()?;
            return parse_int(&format!("-{w}")).map(Expr::Imm);
        }
        let w = self.word()?;
        if w == "ctx" {
            Ok(Expr::Ctx)
        } else if w.starts_with('v') {
            parse_var(w).map(Expr::Var)
        } else {
            parse_int(w).map(Expr::Imm)
        }
    }

    fn key_value(&mut self, key: &str) -> Result<u32, String> {
        let k = self.word()?;
        if k != key {
            return Err(format!("expected {key}=, got {k:?}"));
        }
        self.sym("=")?;
        parse_u32(self.word()?)
    }

    fn call(&mut self, catalog: &Catalog, var: Option<VarId>) -> Result<Stmt, String> {
        let name = self.word()?;
        let helper = match name.strip_prefix('#') {
            Some(n) => HelperId(n.parse().map_err(|_| format!("bad helper {name:?}"))?),
            None => catalog.helper_by_name(name).ok_or_else(|| format!("unknown helper {name:?}"))?.id,
        };
        self.sym("(")?;
        let mut args = Vec::new();
        if !self.eat_sym(")") {
            loop {
                args.push(self.expr()?);
                if self.eat_sym(")") {
                    break;
                }
                self.sym(",")?;
            }
        }
        Ok(Stmt::Call { var, helper, args })
    }

    fn pred(&mut self) -> Result<Pred, String> {
        let v = parse_var(self.word()?)?;
        if self.eat_sym("<=") {
            return Ok(Pred::SizeBound(v, parse_u32(self.word()?)?));
        }
        self.sym("!=")?;
        match self.word()? {
            "null" => Ok(Pred::NonNull(v)),
            "0" => Ok(Pred::NonZero(v)),
            w => Err(format!("unexpected {w:?} in predicate")),
        }
    }
}

fn parse_stmt(c: &mut Cursor, catalog: &Catalog, pt: ProgramTypeId) -> Result<Stmt, String> {
    let first = c.word()?;
    match first {
        "buf" => {
            let var = parse_var(c.word()?)?;
            c.sym("[")?;
            let size = parse_u32(c.word()?)?;
            c.sym("]")?;
            c.sym("=")?;
            let fill = match c.expr()? {
                Expr::Imm(i) => i32::try_from(i).map_err(|_| "fill out of range".to_string())?,
                _ => return Err("buffer fill must be a number".into()),
            };
            Ok(Stmt::StackBuf { var, size, fill })
        }
        "call" => c.call(catalog, None),
        "store" => {
            let width = parse_width(c.word()?)?;
            let ptr = parse_var(c.word()?)?;
            c.sym("+")?;
            let offset = parse_u32(c.word()?)?;
            c.sym("=")?;
            Ok(Stmt::Store { ptr, offset, width, value: c.expr()? })
        }
        w if w.starts_with("ctx.") => {
            let field = &w[4..];
            if catalog.program_type(pt).context.field(field).is_none() {
                return Err(format!("no context field {field:?}"));
            }
            c.sym("=")?;
            Ok(Stmt::CtxStore { field: field.to_string(), value: c.expr()? })
        }
        w => {
            let var = parse_var(w)?;
            c.sym("=")?;
            match c.peek() {
                Some(Tok::Word(k)) if k == "call" => {
                    c.pos += 1;
                    c.call(catalog, Some(var))
                }
                Some(Tok::Word(k)) if k == "load" => {
                    c.pos += 1;
                    let width = parse_width(c.word()?)?;
                    let ptr = parse_var(c.word()?)?;
                    c.sym("+")?;
                    let offset = parse_u32(c.word()?)?;
                    Ok(Stmt::Load { var, ptr, offset, width })
                }
                Some(Tok::Word(k)) if k.starts_with('v') => {
                    let lhs = parse_var(c.word()?)?;
                    let op = match c.peek() {
                        Some(Tok::Sym(s)) => BinOp::from_symbol(s).ok_or_else(|| format!("bad operator {s:?}"))?,
                        other => return Err(format!("expected operator, got {other:?}")),
                    };
                    c.pos += 1;
                    Ok(Stmt::BinOp { var, op, lhs, rhs: c.expr()? })
                }
                _ => match c.expr()? {
                    Expr::Imm(value) => Ok(Stmt::Literal { var, value }),
                    e => Err(format!("unexpected {e:?} on right-hand side")),
                },
            }
        }
    }
}

pub fn deserialize(text: &str, catalog: &Catalog) -> Result<ProgramAst, ParseError> {
    let mut ast: Option<ProgramAst> = None;
    // Open guard blocks; the root body sits at index 0.
    let mut blocks: Vec<(Vec<Pred>, Vec<Stmt>)> = alloc::vec![(Vec::new(), Vec::new())];
    let mut returned = false;
    let mut last_line = 0;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let err = |message: String| ParseError { line: line_no, message };
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        if returned {
            return Err(err("statement after return".into()));
        }
        let toks = lex(line).map_err(err)?;
        let mut c = Cursor { toks: &toks, pos: 0 };
        let Some(prog) = ast.as_mut() else {
            let r: Result<ProgramAst, String> = (|| {
                if c.word()? != "prog" {
                    return Err("expected `prog <type>` first".into());
                }
                let name = c.word()?;
                let pt = ProgramTypeId::from_name(name).ok_or_else(|| format!("unknown program type {name:?}"))?;
                c.done()?;
                Ok(ProgramAst::empty(pt))
            })();
            ast = Some(r.map_err(err)?);
            continue;
        };
        let pt = prog.prog_type;
        let r: Result<(), String> = (|| {
            match c.peek() {
                Some(Tok::Word(w)) if w == "map" => {
                    c.pos += 1;
                    let ord = c.word()?;
                    if ord != format!("m{}", prog.map_deps.len()) {
                        return Err(format!("expected m{}, got {ord:?}", prog.map_deps.len()));
                    }
                    let name = c.word()?;
                    let map_type = MapTypeId::from_name(name).ok_or_else(|| format!("unknown map type {name:?}"))?;
                    let key_size = c.key_value("key")?;
                    let value_size = c.key_value("value")?;
                    let max_entries = c.key_value("max")?;
                    let flags = c.key_value("flags")?;
                    prog.map_deps.push(MapSpecRequest { map_type, key_size, value_size, max_entries, flags });
                }
                Some(Tok::Word(w)) if w == "ctx" => {
                    c.pos += 1;
                    let var = parse_var(c.word()?)?;
                    c.sym("=")?;
                    let field = c.word()?;
                    if catalog.program_type(pt).context.field(field).is_none() {
                        return Err(format!("no context field {field:?}"));
                    }
                    prog.ctx_bindings.push(CtxBinding { var, field: field.to_string() });
                }
                Some(Tok::Word(w)) if w == "if" => {
                    c.pos += 1;
                    let mut preds = alloc::vec![c.pred()?];
                    while c.eat_sym("&&") {
                        preds.push(c.pred()?);
                    }
                    c.sym("{")?;
                    blocks.push((preds, Vec::new()));
                }
                Some(Tok::Sym("}")) => {
                    c.pos += 1;
                    if blocks.len() < 2 {
                        return Err("unmatched }".into());
                    }
                    let (preds, body) = blocks.pop().unwrap_or_default();
                    if let Some(parent) = blocks.last_mut() {
                        parent.1.push(Stmt::Guarded { preds, body });
                    }
                }
                Some(Tok::Word(w)) if w == "return" => {
                    c.pos += 1;
                    if blocks.len() != 1 {
                        return Err("return inside a block".into());
                    }
                    prog.ret = c.expr()?;
                    returned = true;
                }
                _ => {
                    let s = parse_stmt(&mut c, catalog, pt)?;
                    if let Some(b) = blocks.last_mut() {
                        b.1.push(s);
                    }
                }
            }
            c.done()
        })();
        r.map_err(err)?;
    }
    let eof = |message: &str| ParseError { line: last_line, message: message.to_string() };
    let mut ast = ast.ok_or_else(|| eof("empty program"))?;
    if blocks.len() != 1 {
        return Err(eof("unclosed block"));
    }
    if !returned {
        return Err(eof("missing return"));
    }
    ast.stmts = blocks.pop().map(|b| b.1).unwrap_or_default();
    Ok(ast)
}
