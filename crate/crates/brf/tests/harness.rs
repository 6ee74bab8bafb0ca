use brf::harness::{schedule_next, Action, Corpus, CorpusEntry, SchedulerConfig};
use brf::input::{read_input, write_input, AuxOp, PrologueCall, Trigger};
use brf::minimize::minimize_input;
use brf::mutate::mutate_aux;
use brf::repro::{minimize_repro, read_repro, replay, write_repro, Reproducer};
use brf::{build_input, execute_input, fuzz, FuzzConfig, FuzzInput, KernelEnv};
use brf_core::astgen::{generate_program, GenConfig};
use brf_core::catalog::{AttachKind, Catalog, ProgramTypeId};
use brf_core::runtime::{Coverage, SeededBugs};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn input(cat: &Catalog, seed: u64, pt: Option<ProgramTypeId>) -> FuzzInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ast = generate_program(cat, &GenConfig::default(), &mut rng, pt);
    let mut i = build_input(ast, cat, &mut rng);
    for _ in 0..seed % 6 {
        i = mutate_aux(&i, &mut rng);
    }
    i
}

fn env(bugs: SeededBugs) -> KernelEnv {
    KernelEnv { seed: 0, bugs, worker: 0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn input_text_round_trips(seed in any::<u64>()) {
        let cat = Catalog::builtin();
        let i = input(&cat, seed, None);
        prop_assert_eq!(read_input(&write_input(&i, &cat), &cat).unwrap(), i);
    }

    #[test]
    fn minimization_keeps_exactly_what_the_predicate_needs(seed in any::<u64>()) {
        let cat = Catalog::builtin();
        let i = input(&cat, seed, None);
        let has_update = |x: &FuzzInput| x.aux.iter().any(|a| a.op == AuxOp::Update);
        let m = minimize_input(&i, &cat, has_update);
        if has_update(&i) {
            prop_assert_eq!(m.aux.len(), 1);
            prop_assert!(m.triggers.is_empty());
            prop_assert!(m.size() <= i.size());
        } else {
            prop_assert_eq!(m, i);
        }
    }
}

#[test]
fn every_program_type_loads_attaches_and_runs() {
    let cat = Catalog::builtin();
    for (n, pt) in ProgramTypeId::ALL.iter().enumerate() {
        let i = input(&cat, n as u64, Some(*pt));
        let kind = cat.program_type(*pt).attach_kind;
        assert_eq!(i.prologue.last(), Some(&PrologueCall::Attach(kind)));
        assert!(matches!(i.triggers[0], Trigger::TestRun { .. }));
        assert!(matches!(i.triggers[1], Trigger::Event { kind: k, .. } if k == kind));
        let out = execute_input(&i, &cat, &env(SeededBugs::none()));
        assert!(out.loaded, "{pt:?}");
        assert_eq!(out.stats.attaches_succeeded, 1);
        // The event always runs the program; TEST_RUN only where supported.
        let events = i.triggers.iter().filter(|t| matches!(t, Trigger::Event { .. })).count();
        let runs = events + cat.program_type(*pt).test_run as usize;
        assert_eq!(out.results.len(), runs, "{pt:?}");
        assert!(out.findings.is_empty());
    }
}

#[test]
fn trace_event_kind_has_no_target() {
    let cat = Catalog::builtin();
    let i = input(&cat, 3, Some(ProgramTypeId::Kprobe));
    assert!(!i.prologue.contains(&PrologueCall::CreateTarget(AttachKind::TraceEvent)));
    let j = input(&cat, 3, Some(ProgramTypeId::Xdp));
    assert!(j.prologue.contains(&PrologueCall::CreateTarget(AttachKind::Device)));
}

#[test]
fn scheduler_frequencies() {
    let cfg = SchedulerConfig::default();
    cfg.validate().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        match schedule_next(10, &cfg, &mut rng) {
            Action::Generate => counts[0] += 1,
            Action::MutateProgram(i) | Action::MutateAux(i) if i >= 10 => panic!("entry {i} out of range"),
            Action::MutateProgram(_) => counts[1] += 1,
            Action::MutateAux(_) => counts[2] += 1,
        }
    }
    // Binomial standard error at n = 1e5 is below 0.0016; allow 4 sigma.
    for (c, p) in counts.iter().zip([0.3, 0.5, 0.2]) {
        assert!((*c as f64 / n as f64 - p).abs() < 0.0064, "{counts:?}");
    }
    assert_eq!(schedule_next(0, &cfg, &mut rng), Action::Generate);
    assert!(SchedulerConfig { generate: 0.5, mutate_program: 0.5, mutate_aux: 0.5 }.validate().is_err());
    assert!(SchedulerConfig { generate: -0.1, mutate_program: 0.6, mutate_aux: 0.5 }.validate().is_err());
}

fn entry(cat: &Catalog, seed: u64, probes: &[u32]) -> CorpusEntry {
    let mut coverage = Coverage::new();
    for p in probes {
        coverage.hit(*p);
    }
    let input = input(cat, seed, None);
    let digest = input.digest(cat);
    CorpusEntry { input, signature: brf::harness::coverage_signature(&coverage), coverage, digest, insns: 0, helpers: 0, maps: 0 }
}

#[test]
fn corpus_insertion_and_merge() {
    let cat = Catalog::builtin();
    let mut a = Corpus::default();
    assert!(a.insert_if_novel(entry(&cat, 1, &[1, 2])));
    assert!(!a.insert_if_novel(entry(&cat, 2, &[2])));
    assert!(a.insert_if_novel(entry(&cat, 3, &[3])));
    let mut b = Corpus::default();
    b.insert_if_novel(entry(&cat, 4, &[1, 2]));
    b.insert_if_novel(entry(&cat, 5, &[9]));
    let mut ab = a.clone();
    ab.merge(&b);
    let mut ba = b.clone();
    ba.merge(&a);
    let digests = |c: &Corpus| c.entries.iter().map(|e| e.digest).collect::<Vec<_>>();
    assert_eq!(digests(&ab), digests(&ba));
    assert_eq!(ab.len(), 3);
    let mut again = ab.clone();
    again.merge(&ab);
    assert_eq!(digests(&again), digests(&ab));
    assert_eq!(ab.coverage.count(), 4);
}

#[test]
fn sessions_are_reproducible() {
    let cat = Catalog::builtin();
    let cfg = FuzzConfig { seed: 9, workers: 3, budget: 600, sync_every: 50, ..FuzzConfig::default() };
    let a = fuzz(&cat, &cfg);
    let b = fuzz(&cat, &cfg);
    assert_eq!(a.stats.render(), b.stats.render());
    assert_eq!(a.stats.inputs, 600);
    let other = fuzz(&cat, &FuzzConfig { seed: 10, ..cfg });
    assert_ne!(a.stats.render(), other.stats.render());
}

#[test]
fn stats_file_is_toml() {
    let cat = Catalog::builtin();
    let s = fuzz(&cat, &FuzzConfig { budget: 200, bugs: SeededBugs::all(), ..FuzzConfig::default() });
    let v: toml::Table = s.stats.render().parse().unwrap();
    assert_eq!(v["schema"].as_str(), Some("brf-stats/1"));
    assert_eq!(v["inputs"].as_integer(), Some(200));
    assert!(v["expressiveness"]["insns_mean"].as_float().unwrap() > 0.0);
}

#[test]
fn blind_sessions_keep_no_corpus() {
    let cat = Catalog::builtin();
    let s = fuzz(&cat, &FuzzConfig { budget: 300, guided: false, ..FuzzConfig::default() });
    assert_eq!(s.corpus.len(), 0);
    assert_eq!(s.stats.generated, 300);
}

#[test]
fn findings_replay_and_minimize() {
    let cat = Catalog::builtin();
    let s = fuzz(&cat, &FuzzConfig { seed: 2, workers: 2, budget: 1500, bugs: SeededBugs::all(), ..FuzzConfig::default() });
    assert!(!s.findings.is_empty());
    for f in s.findings.iter().take(6) {
        let r = Reproducer::from_finding(f);
        let text = write_repro(&r, &cat);
        let back = read_repro(&text, &cat).unwrap();
        assert_eq!(back, r);
        let (hit, first) = replay(&back, &cat);
        assert!(hit, "{} does not replay", r.oracle);
        let (_, second) = replay(&back, &cat);
        assert_eq!(first.findings, second.findings);
        assert_eq!(first.stats.render(), second.stats.render());

        let m = minimize_repro(&r, &cat);
        assert!(replay(&m, &cat).0);
        assert!(m.input.size() <= r.input.size());
        // Local minimality over the syscall sequence.
        for i in 0..m.input.aux.len() {
            let mut c = m.clone();
            c.input.aux.remove(i);
            assert!(!replay(&c, &cat).0, "aux {i} of a minimized {} input is removable", r.oracle);
        }
        assert_eq!(minimize_repro(&m, &cat), m);
    }
}

#[test]
fn no_findings_without_seeded_bugs() {
    let cat = Catalog::builtin();
    let s = fuzz(&cat, &FuzzConfig { seed: 4, workers: 2, budget: 2000, ..FuzzConfig::default() });
    assert!(s.findings.is_empty(), "{:?}", s.findings.iter().map(|f| &f.report).collect::<Vec<_>>());
}
