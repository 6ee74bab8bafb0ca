use brf_core::catalog::{helper_ids as h, Catalog, ExecContext, MapSpecRequest, MapTypeId, ProgramTypeId};
use brf_core::isa::*;
use brf_core::lower::section_name;
use brf_core::runtime::maps::{EAGAIN, EINVAL, ENOENT};
use brf_core::runtime::{probe, Engine, MapInstance, Oracle, SeededBugs, SimKernel, SysError};

fn spec(map_type: MapTypeId, key_size: u32, value_size: u32, max_entries: u32) -> MapSpecRequest {
    MapSpecRequest { map_type, key_size, value_size, max_entries, flags: 0 }
}

fn load(k: &mut SimKernel, pt: ProgramTypeId, insns: Vec<Instruction>) -> u32 {
    let image = RawProgram { prog_type: pt, section_name: section_name(k.catalog, pt), insns, relocations: vec![] };
    k.load_image(image).unwrap()
}

fn bugs(name: &str) -> SeededBugs {
    SeededBugs::parse(name).unwrap()
}

/// r1 = ctx, r2 = program array, r3 = `index`, tail call, then return 7.
fn tail_call_prog(pa: u32, index: i32) -> Vec<Instruction> {
    vec![
        Instruction::ld_map(2, pa),
        Instruction::mov64_imm(3, index),
        Instruction::call(h::TAIL_CALL.0),
        Instruction::mov64_imm(0, 7),
        Instruction::exit(),
    ]
}

#[test]
fn tail_call_past_the_array() {
    let cat = Catalog::builtin();
    for (b, expect_finding) in [("none", false), ("tailcall_oob", true)] {
        let mut k = SimKernel::new(&cat, 0, bugs(b), 0);
        let pa = k.sys_map_create(spec(MapTypeId::ProgArray, 4, 4, 36)).unwrap();
        let id = load(&mut k, ProgramTypeId::SocketFilter, tail_call_prog(pa, 49));
        let r = k.run(id, &[], ExecContext::Task);
        let oob: Vec<_> = r.findings.iter().filter(|f| f.oracle == Oracle::OobAccess).collect();
        assert_eq!(!oob.is_empty(), expect_finding, "bugs {b}: {:?}", r.findings);
        if !expect_finding {
            assert_eq!(r.return_value, 7);
            assert_eq!(r.helper_trace.len(), 1);
        }
    }
}

#[test]
fn tail_call_into_stub_slot() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let pa = k.sys_map_create(spec(MapTypeId::ProgArray, 4, 4, 8)).unwrap();
    let even = load(&mut k, ProgramTypeId::SocketFilter, tail_call_prog(pa, 4));
    let odd = load(&mut k, ProgramTypeId::SocketFilter, tail_call_prog(pa, 5));
    // Even slots hold a stub returning its index; odd slots are empty.
    assert_eq!(k.run(even, &[], ExecContext::Task).return_value, 4);
    assert_eq!(k.run(odd, &[], ExecContext::Task).return_value, 7);
}

#[test]
fn self_tail_call_stops_at_depth_cap() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let pa = k.sys_map_create(spec(MapTypeId::ProgArray, 4, 4, 4)).unwrap();
    let id = load(&mut k, ProgramTypeId::SocketFilter, tail_call_prog(pa, 1));
    k.sys_map_update(pa, &1u32.to_le_bytes(), &id.to_le_bytes(), 0).unwrap();
    let r = k.run(id, &[], ExecContext::Task);
    // 33 successful transfers, then the 34th call fails and falls through.
    assert_eq!(r.return_value, 7);
    assert_eq!(r.helper_trace.len(), 34);
    assert!(r.coverage.contains(probe::tail_depth(33)));
    assert!(!r.coverage.contains(probe::tail_depth(34)));
    assert!(r.findings.is_empty());
}

#[test]
fn prog_array_update_needs_a_loaded_program() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let pa = k.sys_map_create(spec(MapTypeId::ProgArray, 4, 4, 4)).unwrap();
    assert_eq!(k.sys_map_update(pa, &1u32.to_le_bytes(), &999u32.to_le_bytes(), 0), Err(SysError::Errno(EINVAL)));
    assert_eq!(k.sys_map_delete(pa, &1u32.to_le_bytes()), Err(SysError::Errno(ENOENT)));
    assert_eq!(k.sys_map_delete(pa, &0u32.to_le_bytes()), Ok(()));
}

#[test]
fn cgroup_storage_needs_zero_max_entries() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let e = k.sys_map_create(spec(MapTypeId::CgroupStorage, 8, 8, 7)).unwrap_err();
    assert_eq!(e.rule_name(), "attr_invalid");
    assert!(e.to_string().starts_with("attr_invalid:"), "{e}");
    assert!(k.sys_map_create(spec(MapTypeId::CgroupStorage, 8, 8, 0)).is_ok());
}

/// r0 = 1; r1 = 64; r0 <<= r1
fn shift_by_64() -> Vec<Instruction> {
    vec![
        Instruction::mov64_imm(0, 1),
        Instruction::mov64_imm(1, 64),
        Instruction::alu64_reg(BPF_LSH, 0, 1),
        Instruction::exit(),
    ]
}

#[test]
fn oversized_register_shift_is_masked() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let id = load(&mut k, ProgramTypeId::SocketFilter, shift_by_64());
    let r = k.run(id, &[], ExecContext::Task);
    assert_eq!(r.return_value, 1);
    assert!(r.findings.is_empty());
}

#[test]
fn unmasked_shift_diverges() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, bugs("shift_ub"), 0);
    let id = load(&mut k, ProgramTypeId::SocketFilter, shift_by_64());
    let a = k.clone().run_engine(id, &[], ExecContext::Task, Engine::Interp);
    let b = k.clone().run_engine(id, &[], ExecContext::Task, Engine::Linear);
    assert_eq!((a.return_value, b.return_value), (1, 0));
    let r = k.run(id, &[], ExecContext::Task);
    assert_eq!(r.findings.len(), 1);
    assert_eq!(r.findings[0].oracle, Oracle::ExecDivergence);
}

#[test]
fn division_and_modulo_by_zero() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    for (op, expect) in [(BPF_DIV, 0u64), (BPF_MOD, 13)] {
        let prog = vec![
            Instruction::mov64_imm(0, 13),
            Instruction::mov64_imm(1, 0),
            Instruction::alu64_reg(op, 0, 1),
            Instruction::exit(),
        ];
        let id = load(&mut k, ProgramTypeId::SocketFilter, prog);
        assert_eq!(k.run(id, &[], ExecContext::Task).return_value, expect);
    }
}

/// Reserves a 16-byte ring buffer record and discards it.
fn reserve_discard(rb: u32) -> Vec<Instruction> {
    vec![
        Instruction::ld_map(1, rb),
        Instruction::mov64_imm(2, 16),
        Instruction::mov64_imm(3, 0),
        Instruction::call(h::RINGBUF_RESERVE.0),
        Instruction::jmp_imm(BPF_JEQ, 0, 0, 3),
        Instruction::mov64_reg(1, 0),
        Instruction::mov64_imm(2, 0),
        Instruction::call(h::RINGBUF_DISCARD.0),
        Instruction::mov64_imm(0, 0),
        Instruction::exit(),
    ]
}

#[test]
fn discard_that_keeps_the_record_leaks() {
    let cat = Catalog::builtin();
    for (b, leaks) in [("none", false), ("ringbuf_leak", true)] {
        let mut k = SimKernel::new(&cat, 0, bugs(b), 0);
        let rb = k.sys_map_create(spec(MapTypeId::Ringbuf, 0, 0, 4096)).unwrap();
        let id = load(&mut k, ProgramTypeId::SocketFilter, reserve_discard(rb));
        let r = k.run(id, &[], ExecContext::Task);
        assert_eq!(r.findings.iter().any(|f| f.oracle == Oracle::RefLeakRuntime), leaks, "bugs {b}");
        assert_eq!(r.helper_trace.len(), 2);
    }
}

#[test]
fn ring_without_consumer_fills_up() {
    let mut m = MapInstance::new(1, spec(MapTypeId::Ringbuf, 0, 0, 4096));
    let mut accepted = 0;
    while m.ringbuf_output(&[0; 120]).is_ok() {
        accepted += 1;
    }
    // Each record costs its length plus an 8-byte header.
    assert_eq!(accepted, 4096 / 128);
    assert_eq!(m.ringbuf_output(&[0; 120]), Err(EAGAIN));
    assert_eq!(m.reserve(1), None);
    assert_eq!(m.ringbuf_query(1), 4096);
}

/// `update(map, &7, &1, BPF_EXIST)` with the key on the stack.
fn update_exist(map: u32) -> Vec<Instruction> {
    vec![
        Instruction::st_imm(BPF_W, 10, -4, 7),
        Instruction::st_imm(BPF_DW, 10, -16, 1),
        Instruction::ld_map(1, map),
        Instruction::mov64_reg(2, 10),
        Instruction::alu64_imm(BPF_ADD, 2, -4),
        Instruction::mov64_reg(3, 10),
        Instruction::alu64_imm(BPF_ADD, 3, -16),
        Instruction::mov64_imm(4, 2),
        Instruction::call(h::MAP_UPDATE_ELEM.0),
        Instruction::exit(),
    ]
}

#[test]
fn update_existing_on_missing_key() {
    let cat = Catalog::builtin();
    for (b, deref) in [("none", false), ("lookup_null_passthrough", true)] {
        let mut k = SimKernel::new(&cat, 0, bugs(b), 0);
        let m = k.sys_map_create(spec(MapTypeId::Hash, 4, 8, 4)).unwrap();
        let id = load(&mut k, ProgramTypeId::SocketFilter, update_exist(m));
        let r = k.run(id, &[], ExecContext::Task);
        assert_eq!(r.findings.iter().any(|f| f.oracle == Oracle::NullDeref), deref, "bugs {b}");
        if !deref {
            assert_eq!(r.return_value as i64, -ENOENT);
        }
    }
}

/// Pushes one value onto `queue` and returns XDP_PASS.
fn push_prog(queue: u32) -> Vec<Instruction> {
    vec![
        Instruction::st_imm(BPF_DW, 10, -8, 5),
        Instruction::ld_map(1, queue),
        Instruction::mov64_reg(2, 10),
        Instruction::alu64_imm(BPF_ADD, 2, -8),
        Instruction::mov64_imm(3, 0),
        Instruction::call(h::MAP_PUSH_ELEM.0),
        Instruction::mov64_imm(0, 2),
        Instruction::exit(),
    ]
}

#[test]
fn queue_lock_in_interrupt_and_task_context() {
    let cat = Catalog::builtin();
    for (b, violation) in [("none", false), ("queue_lock_ctx", true)] {
        let mut k = SimKernel::new(&cat, 0, bugs(b), 0);
        let q = k.sys_map_create(spec(MapTypeId::Queue, 0, 8, 16)).unwrap();
        let id = load(&mut k, ProgramTypeId::Xdp, push_prog(q));
        let r = k.run(id, &[0; 64], ExecContext::Interrupt);
        assert_eq!(r.helper_trace.len(), 1);
        k.sys_map_update(q, &[], &[1; 8], 0).unwrap();
        let mut found: Vec<_> = r.findings;
        found.extend(k.take_findings());
        assert_eq!(found.iter().any(|f| f.oracle == Oracle::LockContextViolation), violation, "bugs {b}: {found:?}");
        assert_eq!(k.sys_map_lookup(q, &[]).unwrap(), vec![5; 1].into_iter().chain([0; 7]).collect::<Vec<u8>>());
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let cat = Catalog::builtin();
    let run = |seed| {
        let mut k = SimKernel::new(&cat, seed, SeededBugs::none(), 0);
        let m = k.sys_map_create(spec(MapTypeId::Hash, 4, 8, 4)).unwrap();
        let prog = vec![Instruction::call(h::GET_PRANDOM_U32.0), Instruction::exit()];
        let id = load(&mut k, ProgramTypeId::SocketFilter, prog);
        k.sys_map_update(m, &[1, 0, 0, 0], &[2; 8], 0).unwrap();
        let r = k.run(id, &[], ExecContext::Task);
        (r.return_value, k.state_digest())
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).0, run(4).0);
}

#[test]
fn user_writes_to_output_maps_are_refused() {
    let cat = Catalog::builtin();
    let mut k = SimKernel::new(&cat, 0, SeededBugs::none(), 0);
    let rb = k.sys_map_create(spec(MapTypeId::Ringbuf, 0, 0, 4096)).unwrap();
    assert_eq!(k.sys_map_update(rb, &[], &[], 0).unwrap_err().rule_name(), "errno");
}
