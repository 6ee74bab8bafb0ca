//! Generated programs through the whole pipeline: text, lowering,
//! container, verifier, both engines and the AST evaluator.

use brf_core::astgen::{deserialize, generate_program, mutate_program, serialize, GenConfig, ProgramAst};
use brf_core::catalog::{Catalog, ExecContext, ProgramTypeId};
use brf_core::lower::{compile, eval_ast, read_container, section_name, write_container, Container};
use brf_core::runtime::{Engine, SeededBugs, SimKernel};
use brf_core::verifier::verify;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn program(cat: &Catalog, seed: u64, mutations: u32) -> ProgramAst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GenConfig::default();
    let mut ast = generate_program(cat, &cfg, &mut rng, None);
    for _ in 0..mutations {
        ast = mutate_program(&ast, cat, &cfg, &mut rng);
    }
    ast
}

#[test]
fn generation_is_deterministic() {
    let cat = Catalog::builtin();
    for seed in 0..20 {
        assert_eq!(program(&cat, seed, 2), program(&cat, seed, 2));
    }
}

#[test]
fn kprobe_programs_call_kprobe_helpers() {
    let cat = Catalog::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let ast = generate_program(&cat, &GenConfig::default(), &mut rng, Some(ProgramTypeId::Kprobe));
        assert_eq!(ast.prog_type, ProgramTypeId::Kprobe);
        let prog = compile(&ast, &cat).unwrap();
        assert_eq!(prog.section_name, "kprobe/sys_nanosleep");
        let summary = verify(&prog, &ast.map_deps, &cat).unwrap();
        assert!(!summary.helpers_called.is_empty());
        assert!(summary.helpers_called.iter().all(|h| cat.helpers_for(ProgramTypeId::Kprobe).contains(h)));
    }
}

#[test]
fn section_names_are_distinct() {
    let cat = Catalog::builtin();
    let mut names: Vec<String> = ProgramTypeId::ALL.iter().map(|pt| section_name(&cat, *pt)).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), ProgramTypeId::ALL.len());
}

fn run_both(cat: &Catalog, ast: &ProgramAst, seed: u64, payload: &[u8]) {
    let mut k = SimKernel::new(cat, seed, SeededBugs::none(), 0);
    let handles: Vec<u32> = ast.map_deps.iter().map(|s| k.sys_map_create(*s).unwrap()).collect();
    let prog = compile(ast, cat).unwrap();
    let id = k.sys_prog_load(&Container { prog, map_deps: ast.map_deps.clone() }, &handles).unwrap();
    let ctx = cat.program_type(ast.prog_type).event_context;
    let a = k.clone().run_engine(id, payload, ctx, Engine::Interp);
    let b = k.clone().run_engine(id, payload, ctx, Engine::Linear);
    let c = eval_ast(&mut k.clone(), id, ast, &handles, payload, ctx);
    let key = |r: &brf_core::runtime::ExecResult| (r.return_value, r.helper_trace.clone(), r.map_digest);
    assert_eq!(key(&a), key(&b), "interp and linear disagree");
    assert_eq!(key(&a), key(&c), "bytecode and AST evaluation disagree\n{}", serialize(ast, cat));
    assert!(a.findings.is_empty(), "{:?}", a.findings);
    let r = k.run(id, payload, ExecContext::Task);
    assert!(r.findings.is_empty(), "{:?}", r.findings);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn generated_programs_verify_and_round_trip(seed in any::<u64>(), mutations in 0u32..4) {
        let cat = Catalog::builtin();
        let ast = program(&cat, seed, mutations);
        let text = serialize(&ast, &cat);
        prop_assert_eq!(&deserialize(&text, &cat).unwrap(), &ast);
        let prog = compile(&ast, &cat).unwrap();
        verify(&prog, &ast.map_deps, &cat).unwrap();
        let c = Container { prog, map_deps: ast.map_deps.clone() };
        prop_assert_eq!(read_container(&write_container(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn engines_and_evaluator_agree(seed in any::<u64>(), mutations in 0u32..3) {
        let cat = Catalog::builtin();
        let ast = program(&cat, seed, mutations);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let payload: Vec<u8> = (0..rng.gen_range(0..96)).map(|_| rng.gen()).collect();
        run_both(&cat, &ast, seed, &payload);
    }
}
