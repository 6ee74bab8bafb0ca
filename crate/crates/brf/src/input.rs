//! Fuzz inputs: a program plus the syscall sequence that loads, attaches,
//! triggers and pokes at it.
//!
//! File format, one item per line:
//!
//! ```text
//! brf-input 1
//! trigger test_run 0a0b0c
//! trigger event trace_event -
//! aux 1 update m0 key=00000000 value=2a000000 flags=0
//! ast
//! prog kprobe
//! ...
//! ```
//!
//! `-` is an empty payload. The prologue is derived from the AST and is not
//! stored.

use std::fmt::Write as _;

use brf_core::astgen::{self, ProgramAst};
use brf_core::catalog::{AttachKind, Catalog, MapTypeId};
use brf_core::digest::digest64;
use rand::Rng;
use thiserror::Error;

/// Preparatory call derived from the program; never mutated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrologueCall {
    MapCreate(u32),
    Load,
    CreateTarget(AttachKind),
    Attach(AttachKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    TestRun { payload: Vec<u8> },
    Event { kind: AttachKind, payload: Vec<u8> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AuxOp {
    Lookup,
    Update,
    Delete,
    LookupAndDelete,
}

impl AuxOp {
    pub const ALL: [AuxOp; 4] = [AuxOp::Lookup, AuxOp::Update, AuxOp::Delete, AuxOp::LookupAndDelete];

    pub fn name(self) -> &'static str {
        match self {
            AuxOp::Lookup => "lookup",
            AuxOp::Update => "update",
            AuxOp::Delete => "delete",
            AuxOp::LookupAndDelete => "lookup_and_delete",
        }
    }
}

/// User-space map syscall issued between triggers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxCall {
    /// Runs before trigger `at`; past the last trigger it runs at the end.
    pub at: u32,
    pub op: AuxOp,
    /// Map ordinal in the program's `map_deps`.
    pub map: u32,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
    pub flags: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzInput {
    pub ast: ProgramAst,
    pub prologue: Vec<PrologueCall>,
    pub triggers: Vec<Trigger>,
    pub aux: Vec<AuxCall>,
}

/// Map creates in `map_deps` order, then load, then attach (creating the
/// target resource first when the attach kind needs one).
pub fn prologue_for(ast: &ProgramAst, catalog: &Catalog) -> Vec<PrologueCall> {
    let mut calls: Vec<PrologueCall> = (0..ast.map_deps.len() as u32).map(PrologueCall::MapCreate).collect();
    calls.push(PrologueCall::Load);
    let kind = catalog.program_type(ast.prog_type).attach_kind;
    if kind != AttachKind::TraceEvent {
        calls.push(PrologueCall::CreateTarget(kind));
    }
    calls.push(PrologueCall::Attach(kind));
    calls
}

pub(crate) fn random_payload<R: Rng>(rng: &mut R) -> Vec<u8> {
    let len = *[0usize, 14, 32, 60, 64, 128, 200].get(rng.gen_range(0..7)).unwrap_or(&64);
    (0..len).map(|_| rng.gen()).collect()
}

/// Key bytes biased towards values a program is likely to use too.
pub(crate) fn random_key<R: Rng>(rng: &mut R, size: usize, max_entries: u32) -> Vec<u8> {
    let mut key = vec![0u8; size];
    match rng.gen_range(0..4) {
        0 | 1 => {
            let idx = rng.gen_range(0..max_entries.max(1) * 2);
            let b = idx.to_le_bytes();
            let n = size.min(4);
            key[..n].copy_from_slice(&b[..n]);
        }
        2 => key.fill(*[0u8, 1, 0xff].get(rng.gen_range(0..3)).unwrap_or(&0)),
        _ => rng.fill(&mut key[..]),
    }
    key
}

pub(crate) fn random_aux<R: Rng>(rng: &mut R, ast: &ProgramAst, triggers: usize) -> Option<AuxCall> {
    if ast.map_deps.is_empty() {
        return None;
    }
    let map = rng.gen_range(0..ast.map_deps.len() as u32);
    let spec = ast.map_deps[map as usize];
    let op = if matches!(spec.map_type, MapTypeId::Queue | MapTypeId::Stack) {
        [AuxOp::Update, AuxOp::Update, AuxOp::Lookup, AuxOp::LookupAndDelete][rng.gen_range(0..4)]
    } else {
        AuxOp::ALL[rng.gen_range(0..4)]
    };
    let flags = [0u64, 0, 0, 1, 2][rng.gen_range(0..5)];
    let mut value = vec![0u8; spec.value_size as usize];
    rng.fill(&mut value[..]);
    Some(AuxCall {
        at: rng.gen_range(0..=triggers as u32),
        op,
        map,
        key: random_key(rng, spec.key_size as usize, spec.max_entries),
        value,
        flags,
    })
}

/// Assembles the syscalls around a freshly generated or mutated program:
/// one TEST_RUN, an event for the program's attach kind and a few random
/// map syscalls.
pub fn build_input<R: Rng>(ast: ProgramAst, catalog: &Catalog, rng: &mut R) -> FuzzInput {
    let kind = catalog.program_type(ast.prog_type).attach_kind;
    let triggers = vec![
        Trigger::TestRun { payload: random_payload(rng) },
        Trigger::Event { kind, payload: random_payload(rng) },
    ];
    let aux = (0..rng.gen_range(0..4)).filter_map(|_| random_aux(rng, &ast, triggers.len())).collect();
    FuzzInput { prologue: prologue_for(&ast, catalog), ast, triggers, aux }
}

impl FuzzInput {
    /// Replaces the program, recomputing the prologue.
    pub fn with_ast(&self, ast: ProgramAst, catalog: &Catalog) -> FuzzInput {
        FuzzInput { prologue: prologue_for(&ast, catalog), ast, triggers: self.triggers.clone(), aux: self.aux.clone() }
    }

    /// Number of removable elements, for minimization.
    pub fn size(&self) -> usize {
        let mut stmts = 0;
        self.ast.walk(|_| stmts += 1);
        stmts + self.triggers.len() + self.aux.len()
    }

    pub fn digest(&self, catalog: &Catalog) -> u64 {
        digest64(write_input(self, catalog).as_bytes())
    }
}

fn hex_or_dash(b: &[u8]) -> String {
    if b.is_empty() {
        "-".into()
    } else {
        hex::encode(b)
    }
}

pub fn write_input(input: &FuzzInput, catalog: &Catalog) -> String {
    let mut out = String::from("brf-input 1\n");
    for t in &input.triggers {
        match t {
            Trigger::TestRun { payload } => {
                let _ = writeln!(out, "trigger test_run {}", hex_or_dash(payload));
            }
            Trigger::Event { kind, payload } => {
                let _ = writeln!(out, "trigger event {} {}", kind.name(), hex_or_dash(payload));
            }
        }
    }
    for a in &input.aux {
        let _ = writeln!(
            out,
            "aux {} {} m{} key={} value={} flags={}",
            a.at,
            a.op.name(),
            a.map,
            hex_or_dash(&a.key),
            hex_or_dash(&a.value),
            a.flags
        );
    }
    out.push_str("ast\n");
    out.push_str(&astgen::serialize(&input.ast, catalog));
    out
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("program: {0}")]
    Ast(#[from] astgen::ParseError),
}

fn syntax(line: usize, message: impl Into<String>) -> InputError {
    InputError::Syntax { line, message: message.into() }
}

fn parse_hex(s: &str, line: usize) -> Result<Vec<u8>, InputError> {
    if s == "-" {
        return Ok(Vec::new());
    }
    hex::decode(s).map_err(|e| syntax(line, format!("bad hex {s:?}: {e}")))
}

fn field<'a>(tok: Option<&'a str>, name: &str, line: usize) -> Result<&'a str, InputError> {
    tok.and_then(|t| t.strip_prefix(name)).and_then(|t| t.strip_prefix('=')).ok_or_else(|| syntax(line, format!("expected {name}=")))
}

pub fn read_input(text: &str, catalog: &Catalog) -> Result<FuzzInput, InputError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, "brf-input 1")) => {}
        _ => return Err(syntax(1, "missing `brf-input 1` header")),
    }
    let (mut triggers, mut aux) = (Vec::new(), Vec::new());
    let mut ast_start = None;
    for (n, line) in lines.by_ref() {
        let mut t = line.split_whitespace();
        match t.next() {
            None => continue,
            Some("ast") => {
                ast_start = Some(n);
                break;
            }
            Some("trigger") => match t.next() {
                Some("test_run") => {
                    triggers.push(Trigger::TestRun { payload: parse_hex(t.next().unwrap_or("-"), n)? });
                }
                Some("event") => {
                    let kind = t.next().and_then(AttachKind::from_name).ok_or_else(|| syntax(n, "unknown attach kind"))?;
                    triggers.push(Trigger::Event { kind, payload: parse_hex(t.next().unwrap_or("-"), n)? });
                }
                _ => return Err(syntax(n, "unknown trigger")),
            },
            Some("aux") => {
                let at = t.next().and_then(|s| s.parse().ok()).ok_or_else(|| syntax(n, "bad position"))?;
                let op = t.next().and_then(|s| AuxOp::ALL.into_iter().find(|o| o.name() == s)).ok_or_else(|| syntax(n, "unknown op"))?;
                let map = t
                    .next()
                    .and_then(|s| s.strip_prefix('m'))
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| syntax(n, "bad map"))?;
                let key = parse_hex(field(t.next(), "key", n)?, n)?;
                let value = parse_hex(field(t.next(), "value", n)?, n)?;
                let flags = field(t.next(), "flags", n)?.parse().map_err(|_| syntax(n, "bad flags"))?;
                aux.push(AuxCall { at, op, map, key, value, flags });
            }
            Some(other) => return Err(syntax(n, format!("unexpected {other:?}"))),
        }
    }
    let start = ast_start.ok_or_else(|| syntax(0, "missing `ast` section"))?;
    let rest: Vec<&str> = text.lines().skip(start).collect();
    let ast = astgen::deserialize(&rest.join("\n"), catalog)?;
    Ok(FuzzInput { prologue: prologue_for(&ast, catalog), ast, triggers, aux })
}
