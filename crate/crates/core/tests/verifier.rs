use brf_core::catalog::{helper_ids as h, Catalog, MapSpecRequest, MapTypeId, ProgramTypeId as Pt, ValueType};
use brf_core::isa::*;
use brf_core::verifier::{check_cfg, verify, Bounds, Checker, RegState, RuleId, VerifierState};

fn prog(pt: Pt, insns: Vec<Instruction>) -> RawProgram {
    RawProgram { prog_type: pt, section_name: String::new(), insns, relocations: vec![] }
}

fn run(pt: Pt, maps: &[MapSpecRequest], insns: Vec<Instruction>) -> Result<(), RuleId> {
    verify(&prog(pt, insns), &maps, &Catalog::builtin()).map(|_| ()).map_err(|e| e.rule)
}

fn ringbuf() -> MapSpecRequest {
    MapSpecRequest { map_type: MapTypeId::Ringbuf, key_size: 0, value_size: 0, max_entries: 4096, flags: 0 }
}

fn array(value_size: u32, flags: u32) -> MapSpecRequest {
    MapSpecRequest { map_type: MapTypeId::Array, key_size: 4, value_size, max_entries: 4, flags }
}

fn mov(d: u8, v: i32) -> Instruction {
    Instruction::mov64_imm(d, v)
}

const EXIT: Instruction = Instruction::exit();

#[test]
fn cfg_examples() {
    assert!(check_cfg(&[EXIT]).is_ok());
    assert_eq!(check_cfg(&[Instruction::ja(-1)]).unwrap_err().rule, RuleId::LoopDetected);
    assert_eq!(check_cfg(&[Instruction::ja(5), EXIT]).unwrap_err().rule, RuleId::JumpOutOfRange);
    assert_eq!(check_cfg(&[]).unwrap_err().rule, RuleId::EmptyProgram);
    assert_eq!(check_cfg(&[mov(0, 0)]).unwrap_err().rule, RuleId::BadLastInsn);
    assert_eq!(check_cfg(&[EXIT, EXIT]).unwrap_err().rule, RuleId::UnreachableInsn);
    let into_lddw = [Instruction::ja(1), Instruction::ld_imm64(0, 1 << 40), EXIT];
    assert_eq!(check_cfg(&into_lddw).unwrap_err().rule, RuleId::JumpIntoLdImm64);
}

/// Rule definition restated over the 2-instruction space of `ja k` / `exit`.
#[test]
fn cfg_two_insn_jump_exit_space() {
    let choices: Vec<Instruction> = (-3..=3).map(Instruction::ja).chain([EXIT]).collect();
    for a in &choices {
        for b in &choices {
            let insns = [*a, *b];
            let target = |i: usize, x: &Instruction| i as i64 + 1 + x.offset as i64;
            let in_range = |i: usize, x: &Instruction| x.opcode == EXIT.opcode || (0..2).contains(&target(i, x));
            let expected = if !in_range(0, a) || !in_range(1, b) {
                Some(RuleId::JumpOutOfRange)
            } else {
                // Follow edges from 0; with two nodes every edge set is
                // tiny enough to reason about directly.
                let succ = |i: usize| -> Option<usize> {
                    let x = insns[i];
                    if x.opcode == EXIT.opcode { None } else { Some(target(i, &x) as usize) }
                };
                let mut seen = vec![0usize];
                let mut cur = 0usize;
                let mut looped = false;
                while let Some(n) = succ(cur) {
                    if seen.contains(&n) {
                        looped = true;
                        break;
                    }
                    seen.push(n);
                    cur = n;
                }
                if looped {
                    Some(RuleId::LoopDetected)
                } else if seen.len() < 2 {
                    Some(RuleId::UnreachableInsn)
                } else {
                    None
                }
            };
            let got = check_cfg(&insns).err().map(|e| e.rule);
            assert_eq!(got, expected, "{a:?} {b:?}");
        }
    }
}

#[test]
fn trivial_program_accepted_everywhere() {
    for pt in Pt::ALL {
        assert_eq!(run(*pt, &[], vec![mov(0, 0), EXIT]), Ok(()));
    }
}

#[test]
fn r0_uninit() {
    assert_eq!(run(Pt::SocketFilter, &[], vec![EXIT]), Err(RuleId::R0Uninit));
}

#[test]
fn returning_pointer_rejected() {
    assert_eq!(run(Pt::SocketFilter, &[], vec![Instruction::mov64_reg(0, 10), EXIT]), Err(RuleId::RetNotScalar));
}

#[test]
fn ctx_pointer_arithmetic_forbidden() {
    let p = vec![Instruction::alu64_imm(BPF_ADD, 1, 4), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::PtrArithForbidden));
}

#[test]
fn interval_shift_on_add() {
    let cat = Catalog::builtin();
    let maps: [MapSpecRequest; 0] = [];
    let mut ck = Checker::new(&cat, Pt::SocketFilter, &maps);
    let mut st = ck.entry_state();
    st.regs[1] = RegState::scalar(Bounds::unsigned(0, 10));
    ck.step(&mut st, &Instruction::alu64_imm(BPF_ADD, 1, 5), 0).unwrap();
    assert_eq!(st.regs[1].bounds, Bounds::unsigned(5, 15));
}

#[test]
fn branch_split() {
    let cat = Catalog::builtin();
    let maps: [MapSpecRequest; 0] = [];
    let mut ck = Checker::new(&cat, Pt::SocketFilter, &maps);
    let mut st = ck.entry_state();
    st.regs[2] = RegState::scalar(Bounds::unsigned(0, 100));
    let (fall, taken) = ck.step_branch(st, &Instruction::jmp_imm(BPF_JLT, 2, 16, 1), 0).unwrap();
    assert_eq!(taken.unwrap().regs[2].bounds, Bounds::unsigned(0, 15));
    assert_eq!(fall.unwrap().regs[2].bounds, Bounds::unsigned(16, 100));
}

#[test]
fn null_check_refines_pointer() {
    let cat = Catalog::builtin();
    let maps = [array(8, 0)];
    let mut ck = Checker::new(&cat, Pt::SocketFilter, &maps);
    let mut st = ck.entry_state();
    st.regs[1] = RegState { map: Some(0), id: 7, ..RegState::pointer(ValueType::PtrToMapValueOrNull, Some(8)) };
    st.regs[3] = st.regs[1];
    let (fall, taken) = ck.step_branch(st, &Instruction::jmp_imm(BPF_JNE, 1, 0, 1), 0).unwrap();
    let taken = taken.unwrap();
    assert_eq!(taken.regs[1].vtype, ValueType::PtrToMapValue);
    assert_eq!(taken.regs[3].vtype, ValueType::PtrToMapValue);
    assert_eq!(fall.unwrap().regs[3].known_const(), Some(0));
}

#[test]
fn stack_round_trip() {
    let p = vec![
        mov(1, 3),
        Instruction::stx(BPF_DW, 10, 1, -8),
        Instruction::ldx(BPF_DW, 0, 10, -8),
        EXIT,
    ];
    assert_eq!(run(Pt::SocketFilter, &[], p), Ok(()));
    let p = vec![Instruction::ldx(BPF_DW, 0, 10, -8), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::UninitStackRead));
    let p = vec![Instruction::st_imm(BPF_DW, 10, -520, 1), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::StackOob));
    let p = vec![Instruction::st_imm(BPF_DW, 10, 0, 1), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::StackOob));
}

#[test]
fn frame_pointer_is_read_only() {
    assert_eq!(run(Pt::SocketFilter, &[], vec![mov(10, 0), mov(0, 0), EXIT]), Err(RuleId::FramePointerWrite));
}

/// Key at fp-8, lookup into map 0; returns the instructions up to the call.
fn lookup_prefix() -> Vec<Instruction> {
    vec![
        Instruction::st_imm(BPF_W, 10, -8, 0),
        Instruction::ld_map(1, 0),
        Instruction::mov64_reg(2, 10),
        Instruction::alu64_imm(BPF_ADD, 2, -8),
        Instruction::call(h::MAP_LOOKUP_ELEM.0),
    ]
}

#[test]
fn map_value_needs_null_check() {
    let mut p = lookup_prefix();
    p.extend([Instruction::ldx(BPF_W, 0, 0, 0), EXIT]);
    assert_eq!(run(Pt::SocketFilter, &[array(8, 0)], p), Err(RuleId::NullDeref));
}

/// Accepted iff `off + width <= mem_size`, over a grid of all three.
#[test]
fn map_value_boundary_enumeration() {
    for mem in [1u32, 4, 8, 12, 16] {
        for off in 0i16..20 {
            for (size, w) in [(BPF_B, 1), (BPF_H, 2), (BPF_W, 4), (BPF_DW, 8)] {
                let mut p = lookup_prefix();
                p.extend([
                    Instruction::jmp_imm(BPF_JEQ, 0, 0, 1),
                    Instruction::ldx(size, 1, 0, off),
                    mov(0, 0),
                    EXIT,
                ]);
                let got = run(Pt::SocketFilter, &[array(mem, 0)], p);
                let expected = if off as u32 + w <= mem { Ok(()) } else { Err(RuleId::MemOob) };
                assert_eq!(got, expected, "mem={mem} off={off} w={w}");
            }
        }
    }
}

#[test]
fn map_prog_flags() {
    let cat = Catalog::builtin();
    let ro = cat.flag_bit("RDONLY_PROG").unwrap();
    let wo = cat.flag_bit("WRONLY_PROG").unwrap();
    let body = |insn| {
        let mut p = lookup_prefix();
        p.extend([Instruction::jmp_imm(BPF_JEQ, 0, 0, 1), insn, mov(0, 0), EXIT]);
        p
    };
    let store = Instruction::st_imm(BPF_W, 0, 0, 1);
    let load = Instruction::ldx(BPF_W, 1, 0, 0);
    assert_eq!(run(Pt::SocketFilter, &[array(8, ro)], body(store)), Err(RuleId::MapReadonly));
    assert_eq!(run(Pt::SocketFilter, &[array(8, wo)], body(load)), Err(RuleId::MapWriteonly));
    assert_eq!(run(Pt::SocketFilter, &[array(8, ro)], body(load)), Ok(()));
    assert_eq!(run(Pt::SocketFilter, &[array(8, wo)], body(store)), Ok(()));
}

#[test]
fn ctx_access_enumeration() {
    let cat = Catalog::builtin();
    for pts in cat.program_types() {
        let ctx = &pts.context;
        for off in (0..ctx.size as i16 + 8).step_by(4) {
            for (size, w) in [(BPF_W, 4u32), (BPF_DW, 8)] {
                let field = ctx.field_at(off as i64, w);
                let load = vec![Instruction::ldx(size, 2, 1, off), mov(0, 0), EXIT];
                let store = vec![Instruction::st_imm(size, 1, off, 0), mov(0, 0), EXIT];
                let want = |ok: bool| if ok { Ok(()) } else { Err(RuleId::CtxAccessDenied) };
                assert_eq!(run(pts.id, &[], load), want(field.is_some_and(|f| f.read)), "{} load {off}/{w}", pts.id);
                assert_eq!(run(pts.id, &[], store), want(field.is_some_and(|f| f.write)), "{} store {off}/{w}", pts.id);
            }
        }
    }
}

#[test]
fn helper_availability() {
    let p = vec![mov(1, 0), mov(2, 0), mov(3, 0), Instruction::call(h::PROBE_READ_KERNEL.0), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p.clone()), Err(RuleId::HelperUnavailable));
    assert_eq!(run(Pt::SocketFilter, &[], vec![Instruction::call(999), EXIT]), Err(RuleId::UnknownHelper));
}

#[test]
fn size_bounded_by_region() {
    // probe_read_kernel(fp-48, r2, 0) with r2 in [0, 64].
    let p = |max: i32| {
        vec![
            Instruction::call(h::GET_PRANDOM_U32.0),
            Instruction::mov64_reg(2, 0),
            Instruction::alu64_imm(BPF_AND, 2, max),
            Instruction::mov64_reg(1, 10),
            Instruction::alu64_imm(BPF_ADD, 1, -48),
            mov(3, 0),
            Instruction::call(h::PROBE_READ_KERNEL.0),
            mov(0, 0),
            EXIT,
        ]
    };
    assert_eq!(run(Pt::Kprobe, &[], p(63)), Err(RuleId::SizeExceedsMem));
    assert_eq!(run(Pt::Kprobe, &[], p(47)), Ok(()));
}

fn reserve() -> Vec<Instruction> {
    vec![Instruction::ld_map(1, 0), mov(2, 8), mov(3, 0), Instruction::call(h::RINGBUF_RESERVE.0)]
}

#[test]
fn reserve_then_submit_under_guard() {
    let mut p = reserve();
    p.extend([
        Instruction::jmp_imm(BPF_JEQ, 0, 0, 4),
        Instruction::st_imm(BPF_DW, 0, 0, 1),
        Instruction::mov64_reg(1, 0),
        mov(2, 0),
        Instruction::call(h::RINGBUF_SUBMIT.0),
        mov(0, 0),
        EXIT,
    ]);
    assert_eq!(run(Pt::SocketFilter, &[ringbuf()], p), Ok(()));
}

#[test]
fn reserve_without_release_leaks() {
    let mut p = reserve();
    p.extend([mov(0, 0), EXIT]);
    assert_eq!(run(Pt::SocketFilter, &[ringbuf()], p), Err(RuleId::RefLeak));
}

/// Use under one null check, release under a second one: safe, but the
/// merge after the first check loses the correlation.
#[test]
fn release_under_second_check_is_conservatively_rejected() {
    let mut p = reserve();
    p.extend([
        Instruction::mov64_reg(6, 0),
        Instruction::jmp_imm(BPF_JEQ, 6, 0, 1),
        Instruction::st_imm(BPF_DW, 6, 0, 1),
        Instruction::jmp_imm(BPF_JEQ, 6, 0, 3),
        Instruction::mov64_reg(1, 6),
        mov(2, 0),
        Instruction::call(h::RINGBUF_SUBMIT.0),
        mov(0, 0),
        EXIT,
    ]);
    assert_eq!(run(Pt::SocketFilter, &[ringbuf()], p), Err(RuleId::RefLeak));
}

#[test]
fn release_of_non_reference() {
    let p = vec![Instruction::mov64_reg(1, 10), mov(2, 0), Instruction::call(h::RINGBUF_SUBMIT.0), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::ArgTypeMismatch));
}

#[test]
fn map_compatibility() {
    // tail_call with an ARRAY map.
    let p = vec![
        Instruction::ld_map(2, 0),
        mov(3, 0),
        Instruction::call(h::TAIL_CALL.0),
        mov(0, 0),
        EXIT,
    ];
    assert_eq!(run(Pt::SocketFilter, &[array(4, 0)], p.clone()), Err(RuleId::MapFuncIncompat));
    let pa = MapSpecRequest { map_type: MapTypeId::ProgArray, key_size: 4, value_size: 4, max_entries: 36, flags: 0 };
    assert_eq!(run(Pt::CgroupSock, &[pa], p), Ok(()));
    let cs = MapSpecRequest { map_type: MapTypeId::CgroupStorage, key_size: 8, value_size: 8, max_entries: 0, flags: 0 };
    let p = vec![Instruction::ld_map(1, 0), mov(0, 0), EXIT];
    assert_eq!(run(Pt::SocketFilter, &[cs], p.clone()), Err(RuleId::MapProgIncompat));
    assert_eq!(run(Pt::SocketFilter, &[], p), Err(RuleId::InvalidMapRef));
}

#[test]
fn pointer_leak_through_store() {
    let mut p = lookup_prefix();
    p.extend([
        Instruction::jmp_imm(BPF_JEQ, 0, 0, 1),
        Instruction::stx(BPF_DW, 0, 10, 0),
        mov(0, 0),
        EXIT,
    ]);
    assert_eq!(run(Pt::SocketFilter, &[array(8, 0)], p), Err(RuleId::PtrLeak));
}

#[test]
fn div_and_shift_immediates() {
    let p = |insn| vec![mov(0, 1), insn, EXIT];
    assert_eq!(run(Pt::SocketFilter, &[], p(Instruction::alu64_imm(BPF_DIV, 0, 0))), Err(RuleId::DivByZeroImm));
    assert_eq!(run(Pt::SocketFilter, &[], p(Instruction::alu64_imm(BPF_LSH, 0, 64))), Err(RuleId::InvalidShift));
    assert_eq!(run(Pt::SocketFilter, &[], p(Instruction::alu64_imm(BPF_LSH, 0, 63))), Ok(()));
}

#[test]
fn entry_state_shape() {
    let st = VerifierState::entry(176);
    assert_eq!(st.regs[1].vtype, ValueType::PtrToCtx);
    assert_eq!(st.regs[10].vtype, ValueType::PtrToStack);
    assert!(!st.regs[0].is_init());
}
