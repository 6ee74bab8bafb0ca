//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if a check fails that is not listed in `KNOWN_RED`.

use std::collections::BTreeMap;
use std::time::Instant;

use brf::repro::{replay, Reproducer};
use brf::{fuzz, FuzzConfig};
use brf_core::astgen::{deserialize, generate_program, mutate_program, serialize, GenConfig};
use brf_core::catalog::{Catalog, ProgramTypeId};
use brf_core::isa::*;
use brf_core::lower::{compile, read_container, write_container, Container};
use brf_core::runtime::SeededBugs;
use brf_core::verifier::{verify, Bounds, Checker, RegState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks known not to hold in this model; they still print FAIL but do
/// not fail the run.
const KNOWN_RED: &[&str] = &["coverage_guidance"];

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, name: &'static str, ok: bool, detail: String) {
        let tag = match (ok, KNOWN_RED.contains(&name)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag:12} {name:22} {detail}");
        if !ok && !KNOWN_RED.contains(&name) {
            self.failed.push(name);
        }
    }
}

fn main() {
    let cat = Catalog::builtin();
    let mut r = Report { failed: Vec::new() };
    generation(&cat, &mut r);
    attach_and_exec(&cat, &mut r);
    coverage_guidance(&cat, &mut r);
    seeded_bugs(&cat, &mut r);
    soundness(&cat, &mut r);
    small_programs(&cat, &mut r);
    round_trips(&cat, &mut r);
    range_soundness(&cat, &mut r);
    determinism(&cat, &mut r);
    if !r.failed.is_empty() {
        eprintln!("failed: {:?}", r.failed);
        std::process::exit(1);
    }
}

fn generation(cat: &Catalog, r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = GenConfig::default();
    let n = 10_000;
    let (mut ok, mut insns, mut helpers, mut maps, mut max_insns) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for _ in 0..n {
        let ast = generate_program(cat, &cfg, &mut rng, None);
        let Ok(prog) = compile(&ast, cat) else { continue };
        if verify(&prog, &ast.map_deps, cat).is_ok() {
            ok += 1;
            let k = prog.slot_count() as u64;
            insns += k;
            max_insns = max_insns.max(k);
            helpers += ast.helper_calls() as u64;
            maps += ast.map_deps.len() as u64;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let rate = ok as f64 / n as f64;
    r.line(
        "generation_validity",
        rate >= 0.95 && secs < 120.0,
        format!("{:.2}% of {n} verified in {secs:.1}s (need >= 95% in < 120s)", rate * 100.0),
    );
    let (mi, mh, mm) = (insns as f64 / ok as f64, helpers as f64 / ok as f64, maps as f64 / ok as f64);
    r.line(
        "expressiveness",
        mi >= 15.0 && mh >= 5.0 && mm >= 2.0 && max_insns >= 50,
        format!("mean insns {mi:.1} helpers {mh:.2} maps {mm:.2}, max insns {max_insns} (need 15 / 5 / 2, max 50)"),
    );
}

fn attach_and_exec(cat: &Catalog, r: &mut Report) {
    let s = fuzz(cat, &FuzzConfig { seed: 1, workers: 4, budget: 8000, ..FuzzConfig::default() });
    let (a, u) = (s.stats.attach_rate(), s.stats.unique_exec_rate());
    r.line(
        "attach_and_exec",
        a >= 0.85 && u >= 0.60,
        format!("attach {:.1}%, unique exec {:.1}% over {} inputs (need 85% / 60%)", a * 100.0, u * 100.0, s.stats.inputs),
    );
}

fn coverage_guidance(cat: &Catalog, r: &mut Report) {
    let mut ratios = Vec::new();
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let run = |guided| fuzz(cat, &FuzzConfig { seed, workers: 4, budget: 4000, guided, ..FuzzConfig::default() });
        let (g, b) = (run(true).stats.coverage, run(false).stats.coverage);
        ratios.push(g as f64 / b as f64);
        pairs.push(format!("{g}/{b}"));
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[2];
    r.line(
        "coverage_guidance",
        median >= 1.2,
        format!("guided/blind probes {} median ratio {median:.3} (need >= 1.200)", pairs.join(" ")),
    );
}

fn seeded_bugs(cat: &Catalog, r: &mut Report) {
    let s = fuzz(cat, &FuzzConfig { seed: 1, workers: 4, budget: 8000, bugs: SeededBugs::all(), ..FuzzConfig::default() });
    let mut replayed: BTreeMap<&'static str, bool> = BTreeMap::new();
    for f in &s.findings {
        let rep = Reproducer::from_finding(f);
        let (hit1, out1) = replay(&rep, cat);
        let (hit2, out2) = replay(&rep, cat);
        let ok = hit1 && hit2 && out1.findings == out2.findings && out1.coverage == out2.coverage;
        *replayed.entry(f.report.oracle.name()).or_insert(true) &= ok;
    }
    let good = replayed.values().filter(|v| **v).count();
    let names: Vec<String> = replayed.iter().map(|(k, v)| format!("{k}{}", if *v { "" } else { "(no replay)" })).collect();
    r.line(
        "seeded_bug_detection",
        good >= 4,
        format!("{good} oracles with deterministic reproducers: {} (need 4)", names.join(", ")),
    );
}

fn soundness(cat: &Catalog, r: &mut Report) {
    let s = fuzz(cat, &FuzzConfig { seed: 3, workers: 4, budget: 70_000, ..FuzzConfig::default() });
    let findings: u64 = s.stats.findings.values().sum();
    let divergences = s.stats.findings.get("exec_divergence").copied().unwrap_or(0);
    r.line(
        "soundness_bugs_off",
        s.stats.executions >= 100_000 && findings == 0,
        format!("{} executions, {findings} findings, {divergences} divergences (need 100000 / 0 / 0)", s.stats.executions),
    );
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Val {
    Uninit,
    Ctx,
    Scalar(u64),
}

fn concrete_alu(op: u8, a: u64, b: u64) -> u64 {
    match op {
        BPF_ADD => a.wrapping_add(b),
        BPF_SUB => a.wrapping_sub(b),
        BPF_MUL => a.wrapping_mul(b),
        BPF_DIV => a.checked_div(b).unwrap_or(0),
        BPF_MOD => a.checked_rem(b).unwrap_or(a),
        BPF_OR => a | b,
        BPF_AND => a & b,
        BPF_XOR => a ^ b,
        BPF_LSH => a << (b & 63),
        BPF_RSH => a >> (b & 63),
        BPF_ARSH => ((a as i64) >> (b & 63)) as u64,
        BPF_MOV => b,
        _ => unreachable!(),
    }
}

fn concrete_cmp(op: u8, a: u64, b: u64) -> bool {
    match op {
        BPF_JEQ => a == b,
        BPF_JNE => a != b,
        BPF_JGT => a > b,
        BPF_JGE => a >= b,
        BPF_JLT => a < b,
        BPF_JLE => a <= b,
        BPF_JSGT => (a as i64) > (b as i64),
        BPF_JSGE => (a as i64) >= (b as i64),
        BPF_JSLT => (a as i64) < (b as i64),
        BPF_JSLE => (a as i64) <= (b as i64),
        BPF_JSET => a & b != 0,
        _ => unreachable!(),
    }
}

/// Safety by direct simulation: structural checks on the jump graph, then
/// every path from the entry state run concretely. Only the context
/// pointer's address is unknown; it is never null.
fn brute_force_safe(p: &[Instruction]) -> bool {
    let n = p.len();
    if n == 0 || !matches!(p[n - 1].opcode, EXIT | JA) {
        return false;
    }
    let class = |x: &Instruction| x.opcode & 0x07;
    let mut succ: Vec<Vec<usize>> = Vec::new();
    for (i, x) in p.iter().enumerate() {
        let mut s = Vec::new();
        if x.opcode != EXIT {
            if class(x) == BPF_JMP {
                let t = i as i64 + 1 + x.offset as i64;
                if !(0..n as i64).contains(&t) {
                    return false;
                }
                s.push(t as usize);
            }
            if x.opcode != JA && i + 1 < n {
                s.push(i + 1);
            }
        }
        succ.push(s);
    }
    // Any walk longer than n revisits a node, so a cycle exists iff some
    // walk from some node reaches length n + 1.
    fn longest(i: usize, succ: &[Vec<usize>], depth: usize) -> usize {
        if depth > succ.len() {
            return depth;
        }
        succ[i].iter().map(|&j| longest(j, succ, depth + 1)).max().unwrap_or(depth)
    }
    if (0..n).any(|i| longest(i, &succ, 0) > n) {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        if !std::mem::replace(&mut seen[i], true) {
            stack.extend(&succ[i]);
        }
    }
    if seen.contains(&false) {
        return false;
    }
    let mut regs = [Val::Uninit, Val::Ctx, Val::Uninit];
    let mut pc = 0;
    loop {
        let x = p[pc];
        let (d, s) = (x.dst as usize, x.src as usize);
        let reg_src = x.opcode & BPF_X != 0;
        match class(&x) {
            BPF_ALU64 => {
                let op = x.opcode & 0xf0;
                let b = if reg_src { regs[s] } else { Val::Scalar(x.imm as i64 as u64) };
                regs[d] = match (op, regs[d], b) {
                    (_, _, Val::Uninit) => return false,
                    (BPF_MOV, _, b) => b,
                    (_, Val::Scalar(a), Val::Scalar(b)) => Val::Scalar(concrete_alu(op, a, b)),
                    _ => return false,
                };
                pc += 1;
            }
            _ if x.opcode == EXIT => return matches!(regs[0], Val::Scalar(_)),
            _ if x.opcode == JA => pc = (pc as i64 + 1 + x.offset as i64) as usize,
            _ => {
                let op = x.opcode & 0xf0;
                let b = if reg_src { regs[s] } else { Val::Scalar(x.imm as i64 as u64) };
                let taken = match (regs[d], b) {
                    (Val::Uninit, _) | (_, Val::Uninit) => return false,
                    (Val::Scalar(a), Val::Scalar(b)) => concrete_cmp(op, a, b),
                    (Val::Ctx, Val::Scalar(0)) | (Val::Scalar(0), Val::Ctx) if op == BPF_JEQ || op == BPF_JNE => op == BPF_JNE,
                    _ => return false,
                };
                pc = if taken { (pc as i64 + 1 + x.offset as i64) as usize } else { pc + 1 };
            }
        }
    }
}

fn small_alphabet() -> Vec<Instruction> {
    let mut v = Vec::new();
    for d in 0..3 {
        for imm in [0, 1, -1] {
            v.push(Instruction::mov64_imm(d, imm));
        }
        for s in 0..3 {
            for op in [BPF_ADD, BPF_SUB, BPF_MUL, BPF_DIV, BPF_MOD, BPF_LSH, BPF_ARSH, BPF_XOR, BPF_MOV] {
                v.push(Instruction::alu64_reg(op, d, s));
            }
            for op in [BPF_JEQ, BPF_JSGT] {
                for off in [0, 1] {
                    v.push(Instruction::jmp_reg(op, d, s, off));
                }
            }
        }
        for op in [BPF_JEQ, BPF_JNE, BPF_JGT, BPF_JSLT] {
            for imm in [0, 1] {
                for off in [-1, 0, 1] {
                    v.push(Instruction::jmp_imm(op, d, imm, off));
                }
            }
        }
    }
    for off in [-1, 0, 1] {
        v.push(Instruction::ja(off));
    }
    v.push(Instruction::exit());
    v
}

fn small_programs(cat: &Catalog, r: &mut Report) {
    let start = Instant::now();
    let alphabet = small_alphabet();
    let maps: Vec<brf_core::catalog::MapSpecRequest> = Vec::new();
    let (mut total, mut accepted, mut mismatches) = (0u64, 0u64, Vec::new());
    let mut check = |insns: Vec<Instruction>| {
        let prog = RawProgram {
            prog_type: ProgramTypeId::SocketFilter,
            section_name: String::new(),
            insns,
            relocations: Vec::new(),
        };
        let v = verify(&prog, &maps, cat).is_ok();
        let b = brute_force_safe(&prog.insns);
        total += 1;
        accepted += v as u64;
        if v != b && mismatches.len() < 3 {
            mismatches.push(format!("{:?} verifier {v} brute force {b}", prog.insns));
        }
    };
    for a in &alphabet {
        check(vec![*a]);
        for b in &alphabet {
            check(vec![*a, *b]);
            for c in &alphabet {
                check(vec![*a, *b, *c]);
            }
        }
    }
    r.line(
        "small_program_oracle",
        mismatches.is_empty(),
        format!(
            "{total} programs over {} instructions, {accepted} accepted, {} mismatches in {:.1}s {}",
            alphabet.len(),
            mismatches.len(),
            start.elapsed().as_secs_f64(),
            mismatches.join("; ")
        ),
    );
}

fn random_instruction(rng: &mut ChaCha8Rng) -> Instruction {
    if rng.gen_bool(0.15) {
        let mut i = Instruction::ld_imm64(rng.gen_range(0..=MAX_REG), rng.gen());
        i.src = rng.gen_range(0..=MAX_REG);
        return i;
    }
    loop {
        let op: u8 = rng.gen();
        if op == LD_DW_IMM || op_kind(op).is_none() {
            continue;
        }
        return Instruction::new(op, rng.gen_range(0..=MAX_REG), rng.gen_range(0..=MAX_REG), rng.gen(), rng.gen());
    }
}

fn round_trips(cat: &Catalog, r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let mut insn_ok = 0;
    for _ in 0..n {
        let x = random_instruction(&mut rng);
        let bytes = encode_program(&[x]).unwrap();
        insn_ok += (decode_program(&bytes).ok() == Some(vec![x])) as u32;
    }
    let cfg = GenConfig::default();
    let (mut ast_ok, mut brfp_ok) = (0, 0);
    for _ in 0..n {
        let mut ast = generate_program(cat, &cfg, &mut rng, None);
        for _ in 0..rng.gen_range(0..3) {
            ast = mutate_program(&ast, cat, &cfg, &mut rng);
        }
        ast_ok += (deserialize(&serialize(&ast, cat), cat).ok().as_ref() == Some(&ast)) as u32;
        let c = Container { prog: compile(&ast, cat).unwrap(), map_deps: ast.map_deps.clone() };
        brfp_ok += (read_container(&write_container(&c).unwrap()).ok().as_ref() == Some(&c)) as u32;
    }
    r.line(
        "round_trips",
        insn_ok == n && ast_ok == n && brfp_ok == n,
        format!("instruction {insn_ok}/{n}, AST text {ast_ok}/{n}, BRFP {brfp_ok}/{n}"),
    );
}

/// Concrete ALU semantics, written independently of the verifier's.
fn eval(x: &Instruction, regs: &mut [u64; 3]) {
    let wide = x.opcode & 0x07 == BPF_ALU64;
    let op = x.opcode & 0xf0;
    let d = x.dst as usize;
    let b = if x.opcode & BPF_X != 0 { regs[x.src as usize] } else { x.imm as i64 as u64 };
    let a = regs[d];
    regs[d] = if wide {
        match op {
            BPF_NEG => a.wrapping_neg(),
            _ => concrete_alu(op, a, b),
        }
    } else {
        let (a, b) = (a as u32, b as u32);
        let v = match op {
            BPF_ADD => a.wrapping_add(b),
            BPF_SUB => a.wrapping_sub(b),
            BPF_MUL => a.wrapping_mul(b),
            BPF_DIV => a.checked_div(b).unwrap_or(0),
            BPF_MOD => a.checked_rem(b).unwrap_or(a),
            BPF_OR => a | b,
            BPF_AND => a & b,
            BPF_XOR => a ^ b,
            BPF_LSH => a << (b & 31),
            BPF_RSH => a >> (b & 31),
            BPF_ARSH => ((a as i32) >> (b & 31)) as u32,
            BPF_NEG => a.wrapping_neg(),
            BPF_MOV => b,
            _ => unreachable!(),
        };
        v as u64
    };
}

fn range_soundness(cat: &Catalog, r: &mut Report) {
    const OPS: [u8; 13] =
        [BPF_ADD, BPF_SUB, BPF_MUL, BPF_DIV, BPF_OR, BPF_AND, BPF_LSH, BPF_RSH, BPF_NEG, BPF_MOD, BPF_XOR, BPF_MOV, BPF_ARSH];
    const BASES: [u64; 8] = [0, 1, 100, 0x7fff_fffc, 0xffff_fffa, 1 << 40, i64::MAX as u64 - 3, u64::MAX - 5];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let maps: Vec<brf_core::catalog::MapSpecRequest> = Vec::new();
    let (mut programs, mut checks, mut violations) = (0, 0u64, Vec::new());
    while programs < 1000 {
        let inputs: Vec<Vec<u64>> = (0..3)
            .map(|_| {
                let base = BASES[rng.gen_range(0..BASES.len())].wrapping_add(rng.gen_range(0..4));
                let w = rng.gen_range(0..8u64);
                (0..=w).map(|k| base.wrapping_add(k)).collect()
            })
            .collect();
        let prog: Vec<Instruction> = (0..rng.gen_range(1..=8))
            .map(|_| {
                let op = OPS[rng.gen_range(0..OPS.len())];
                let wide = rng.gen_bool(0.6);
                let class = if wide { BPF_ALU64 } else { BPF_ALU };
                let d = rng.gen_range(0..3);
                let shift = matches!(op, BPF_LSH | BPF_RSH | BPF_ARSH);
                if op != BPF_NEG && rng.gen_bool(0.5) {
                    Instruction::new(class | op | BPF_X, d, rng.gen_range(0..3), 0, 0)
                } else {
                    let imm = if shift { rng.gen_range(0..if wide { 64 } else { 32 }) } else { rng.gen_range(-4..300) };
                    Instruction::new(class | op | BPF_K, d, 0, 0, imm)
                }
            })
            .collect();
        let mut checker = Checker::new(cat, ProgramTypeId::SocketFilter, &maps);
        let mut st = checker.entry_state();
        for (k, vals) in inputs.iter().enumerate() {
            let (lo, hi) = (vals[0], *vals.last().unwrap());
            st.regs[k] = RegState::scalar(if lo <= hi {
                Bounds::unsigned(lo, hi)
            } else {
                Bounds::signed(lo as i64, hi as i64)
            });
        }
        let mut tracked = vec![[st.regs[0].bounds, st.regs[1].bounds, st.regs[2].bounds]];
        let mut rejected = false;
        for (i, x) in prog.iter().enumerate() {
            if checker.step(&mut st, x, i).is_err() {
                rejected = true;
                break;
            }
            tracked.push([st.regs[0].bounds, st.regs[1].bounds, st.regs[2].bounds]);
        }
        if rejected {
            continue;
        }
        programs += 1;
        for &a in &inputs[0] {
            for &b in &inputs[1] {
                for &c in &inputs[2] {
                    let mut regs = [a, b, c];
                    for (point, t) in tracked.iter().enumerate() {
                        if point > 0 {
                            eval(&prog[point - 1], &mut regs);
                        }
                        for k in 0..3 {
                            checks += 1;
                            if !t[k].contains(regs[k]) && violations.len() < 3 {
                                violations.push(format!("r{k}={:#x} outside {:?} after {:?}", regs[k], t[k], &prog[..point]));
                            }
                        }
                    }
                }
            }
        }
    }
    r.line(
        "range_soundness",
        violations.is_empty(),
        format!("{programs} programs, {checks} register/point checks, {} violations {}", violations.len(), violations.join("; ")),
    );
}

fn determinism(cat: &Catalog, r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FuzzConfig { seed: 5, workers: 4, budget: 3000, bugs: SeededBugs::all(), ..FuzzConfig::default() };
    let mut files = Vec::new();
    for k in 0..2 {
        let p = dir.path().join(format!("stats{k}.toml"));
        std::fs::write(&p, fuzz(cat, &cfg).stats.render()).unwrap();
        files.push(std::fs::read(&p).unwrap());
    }
    r.line(
        "determinism",
        files[0] == files[1],
        format!("two identical sessions wrote {} and {} byte stats files, identical: {}", files[0].len(), files[1].len(), files[0] == files[1]),
    );
}
