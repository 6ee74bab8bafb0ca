//! The fuzzing loop: schedule, build, execute, keep what found new probes.

use std::collections::{BTreeMap, BTreeSet};

use brf_core::astgen::{generate_program, mutate_program, GenConfig};
use brf_core::catalog::{Catalog, MapTypeId};
use brf_core::lower::{compile, Container};
use brf_core::runtime::{BugReport, Coverage, ExecResult, Oracle, SeededBugs, SimKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::input::{build_input, AuxOp, FuzzInput, PrologueCall, Trigger};
use crate::mutate::mutate_aux;
use crate::stats::Stats;

/// Everything besides the input that determines an execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelEnv {
    pub seed: u64,
    pub bugs: SeededBugs,
    pub worker: u32,
}

#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub stats: Stats,
    pub coverage: Coverage,
    pub findings: Vec<BugReport>,
    pub loaded: bool,
    pub results: Vec<ExecResult>,
}

/// Runs the input against a fresh kernel. Failed calls are counted and
/// the sequence carries on.
pub fn execute_input(input: &FuzzInput, catalog: &Catalog, env: &KernelEnv) -> ExecOutcome {
    let mut k = SimKernel::new(catalog, env.seed, env.bugs, env.worker);
    let mut st = Stats { inputs: 1, ..Stats::default() };
    let mut handles = Vec::new();
    let mut prog: Option<(u32, u64)> = None;
    let mut target = None;
    for call in &input.prologue {
        match *call {
            PrologueCall::MapCreate(ord) => {
                let Some(spec) = input.ast.map_deps.get(ord as usize) else { continue };
                match k.sys_map_create(*spec) {
                    Ok(id) => handles.push(id),
                    Err(e) => {
                        st.syscall_error(e.rule_name());
                        // Id 0 is never allocated, so loading reports it.
                        handles.push(0);
                    }
                }
            }
            PrologueCall::Load => {
                st.loads_attempted += 1;
                let image = match compile(&input.ast, catalog) {
                    Ok(p) => p,
                    Err(_) => {
                        st.rule("compile_error");
                        continue;
                    }
                };
                let insns = image.slot_count() as u64;
                let c = Container { prog: image, map_deps: input.ast.map_deps.clone() };
                match k.sys_prog_load(&c, &handles) {
                    Ok(id) => {
                        st.loads_succeeded += 1;
                        st.insns.add(insns);
                        st.helpers.add(input.ast.helper_calls() as u64);
                        st.maps.add(input.ast.map_deps.len() as u64);
                        prog = Some((id, k.prog(id).map_or(0, |p| p.digest)));
                    }
                    Err(e) => st.rule(e.rule_name()),
                }
            }
            PrologueCall::CreateTarget(kind) => target = Some(k.sys_create_target(kind)),
            PrologueCall::Attach(kind) => {
                let Some((id, digest)) = prog else { continue };
                st.attaches_attempted += 1;
                match k.sys_prog_attach(id, kind, target) {
                    Ok(()) => {
                        st.attaches_succeeded += 1;
                        st.attached_programs.insert(digest);
                    }
                    Err(e) => st.syscall_error(e.rule_name()),
                }
            }
        }
    }

    let mut results = Vec::new();
    let n = input.triggers.len() as u32;
    for step in 0..=n {
        for a in input.aux.iter().filter(|a| a.at.min(n) == step) {
            let Some(&map) = handles.get(a.map as usize) else {
                st.syscall_error("no_such_map");
                continue;
            };
            let r = match a.op {
                AuxOp::Lookup => k.sys_map_lookup(map, &a.key).map(|_| ()),
                AuxOp::Update if input.ast.map_deps[a.map as usize].map_type == MapTypeId::ProgArray => {
                    // A program array takes a program fd; the only program
                    // an input owns is its own.
                    let id = prog.map_or(0, |(id, _)| id);
                    k.sys_map_update(map, &a.key, &id.to_le_bytes(), a.flags)
                }
                AuxOp::Update => k.sys_map_update(map, &a.key, &a.value, a.flags),
                AuxOp::Delete => k.sys_map_delete(map, &a.key),
                AuxOp::LookupAndDelete => k.sys_map_lookup_and_delete(map, &a.key).map(|_| ()),
            };
            if let Err(e) = r {
                st.syscall_error(e.rule_name());
            }
        }
        let Some(t) = input.triggers.get(step as usize) else { break };
        match t {
            Trigger::TestRun { payload } => match prog {
                Some((id, _)) => match k.sys_test_run(id, payload) {
                    Ok(r) => results.push(r),
                    Err(e) => st.syscall_error(e.rule_name()),
                },
                None => st.syscall_error("no_such_prog"),
            },
            Trigger::Event { kind, payload } => results.extend(k.trigger_event(*kind, payload)),
        }
    }

    let mut findings = Vec::new();
    for r in &results {
        st.executions += 1;
        if let Some((_, digest)) = prog {
            st.executed_programs.insert(digest);
        }
        findings.extend(r.findings.iter().cloned());
    }
    findings.extend(k.take_findings());
    let mut seen = BTreeSet::new();
    findings.retain(|f| seen.insert((f.oracle, f.location)));
    ExecOutcome { stats: st, coverage: k.coverage.clone(), findings, loaded: prog.is_some(), results }
}

/// Probabilities of the three scheduler actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub generate: f64,
    pub mutate_program: f64,
    pub mutate_aux: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { generate: 0.3, mutate_program: 0.5, mutate_aux: 0.2 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = [self.generate, self.mutate_program, self.mutate_aux];
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("scheduler probabilities {p:?} must lie in [0, 1] and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Generate,
    MutateProgram(usize),
    MutateAux(usize),
}

pub fn schedule_next<R: Rng>(corpus_len: usize, cfg: &SchedulerConfig, rng: &mut R) -> Action {
    if corpus_len == 0 {
        return Action::Generate;
    }
    let x: f64 = rng.gen();
    let entry = rng.gen_range(0..corpus_len);
    if x < cfg.generate {
        Action::Generate
    } else if x < cfg.generate + cfg.mutate_program {
        Action::MutateProgram(entry)
    } else {
        Action::MutateAux(entry)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub input: FuzzInput,
    pub coverage: Coverage,
    /// Digest of the coverage set.
    pub signature: u64,
    pub digest: u64,
    pub insns: u64,
    pub helpers: u64,
    pub maps: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub coverage: Coverage,
}

pub fn coverage_signature(c: &Coverage) -> u64 {
    let mut f = brf_core::digest::Fingerprint::new();
    for p in c.probes() {
        f.u64(p as u64);
    }
    f.finish()
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds the entry if it hits a probe the corpus has not.
    pub fn insert_if_novel(&mut self, e: CorpusEntry) -> bool {
        if !self.coverage.lacks_any_of(&e.coverage) {
            return false;
        }
        self.coverage.merge(&e.coverage);
        self.entries.push(e);
        true
    }

    /// Union keyed by coverage signature; on a clash the smaller input
    /// digest wins, so merging is commutative and idempotent.
    pub fn merge(&mut self, other: &Corpus) {
        let mut by_sig: BTreeMap<u64, CorpusEntry> = BTreeMap::new();
        for e in self.entries.drain(..).chain(other.entries.iter().cloned()) {
            match by_sig.get(&e.signature) {
                Some(old) if old.digest <= e.digest => {}
                _ => {
                    by_sig.insert(e.signature, e);
                }
            }
        }
        self.entries = by_sig.into_values().collect();
        self.coverage.merge(&other.coverage);
    }
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub seed: u64,
    pub workers: u32,
    /// Total inputs across all workers.
    pub budget: u64,
    /// Inputs per worker between corpus merges.
    pub sync_every: u64,
    pub scheduler: SchedulerConfig,
    pub gen: GenConfig,
    pub bugs: SeededBugs,
    /// Off: nothing enters the corpus, so every input is freshly generated.
    pub guided: bool,
    pub kernel_seed: u64,
    /// Wall-clock cap, checked between merges. Runs cut short by it are
    /// not reproducible.
    pub time_limit: Option<std::time::Duration>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 0,
            workers: 1,
            budget: 1000,
            sync_every: 250,
            scheduler: SchedulerConfig::default(),
            gen: GenConfig::default(),
            bugs: SeededBugs::none(),
            guided: true,
            kernel_seed: 0,
            time_limit: None,
        }
    }
}

/// A finding with the input that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub report: BugReport,
    pub input: FuzzInput,
    pub env: KernelEnv,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub stats: Stats,
    pub corpus: Corpus,
    pub coverage: Coverage,
    pub findings: Vec<Finding>,
}

struct Worker {
    id: u32,
    rng: ChaCha8Rng,
    corpus: Corpus,
    coverage: Coverage,
    stats: Stats,
    findings: Vec<Finding>,
    seen: BTreeSet<(Oracle, u32)>,
}

impl Worker {
    fn step(&mut self, catalog: &Catalog, cfg: &FuzzConfig) {
        let action = schedule_next(self.corpus.len(), &cfg.scheduler, &mut self.rng);
        let input = match action {
            Action::Generate => {
                self.stats.generated += 1;
                let ast = generate_program(catalog, &cfg.gen, &mut self.rng, None);
                build_input(ast, catalog, &mut self.rng)
            }
            Action::MutateProgram(i) => {
                self.stats.mutated_program += 1;
                let base = &self.corpus.entries[i].input;
                let ast = mutate_program(&base.ast, catalog, &cfg.gen, &mut self.rng);
                base.with_ast(ast, catalog)
            }
            Action::MutateAux(i) => {
                self.stats.mutated_aux += 1;
                mutate_aux(&self.corpus.entries[i].input, &mut self.rng)
            }
        };
        let env = KernelEnv { seed: cfg.kernel_seed, bugs: cfg.bugs, worker: self.id };
        let out = execute_input(&input, catalog, &env);
        self.stats.merge(&out.stats);
        self.coverage.merge(&out.coverage);
        let digest = input.digest(catalog);
        for mut f in out.findings {
            if self.seen.insert((f.oracle, f.location)) {
                *self.stats.findings.entry(f.oracle.name().to_string()).or_default() += 1;
                f.input_digest = digest;
                self.findings.push(Finding { report: f, input: input.clone(), env });
            }
        }
        if cfg.guided && out.loaded && self.corpus.coverage.lacks_any_of(&out.coverage) {
            let (insns, helpers, maps) = (out.stats.insns.sum, out.stats.helpers.sum, out.stats.maps.sum);
            let signature = coverage_signature(&out.coverage);
            self.corpus.insert_if_novel(CorpusEntry { input, coverage: out.coverage, signature, digest, insns, helpers, maps });
        }
    }
}

/// Runs a session. Workers run in parallel between checkpoints and are
/// merged in worker order, so the result does not depend on scheduling.
pub fn fuzz(catalog: &Catalog, cfg: &FuzzConfig) -> Session {
    let nw = cfg.workers.max(1);
    let mut workers: Vec<Worker> = (0..nw)
        .map(|id| Worker {
            id,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64)),
            corpus: Corpus::default(),
            coverage: Coverage::new(),
            stats: Stats::default(),
            findings: Vec::new(),
            seen: BTreeSet::new(),
        })
        .collect();
    let quota: Vec<u64> = (0..nw as u64).map(|w| cfg.budget / nw as u64 + (w < cfg.budget % nw as u64) as u64).collect();
    let mut done = vec![0u64; nw as usize];
    let mut session = Session { stats: Stats::default(), corpus: Corpus::default(), coverage: Coverage::new(), findings: Vec::new() };
    let mut seen = BTreeSet::new();
    let sync = cfg.sync_every.max(1);
    let start = std::time::Instant::now();
    while done.iter().zip(&quota).any(|(d, q)| d < q) && cfg.time_limit.map_or(true, |t| start.elapsed() < t) {
        std::thread::scope(|s| {
            for (w, d) in workers.iter_mut().zip(done.iter_mut()) {
                let n = sync.min(quota[w.id as usize] - *d);
                *d += n;
                s.spawn(move || {
                    for _ in 0..n {
                        w.step(catalog, cfg);
                    }
                });
            }
        });
        for w in &mut workers {
            session.stats.merge(&std::mem::take(&mut w.stats));
            session.corpus.merge(&w.corpus);
            session.coverage.merge(&w.coverage);
            for f in w.findings.drain(..) {
                if seen.insert((f.report.oracle, f.report.location)) {
                    session.findings.push(f);
                }
            }
        }
        // Findings counts are per distinct (oracle, location) over the session.
        session.stats.findings.clear();
        for f in &session.findings {
            *session.stats.findings.entry(f.report.oracle.name().to_string()).or_default() += 1;
        }
        for w in &mut workers {
            w.corpus = session.corpus.clone();
            w.coverage = session.coverage.clone();
            w.seen = seen.clone();
        }
        session.stats.coverage_curve.push((session.stats.inputs, session.coverage.count() as u64));
    }
    session.stats.coverage = session.coverage.count() as u64;
    session.stats.corpus_size = session.corpus.len() as u64;
    session
}
