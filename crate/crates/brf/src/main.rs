use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use brf::files::{load_catalog, write_corpus};
use brf::repro::{minimize_repro, read_repro, replay, write_repro, Reproducer};
use brf::{fuzz, FuzzConfig};
use brf_core::astgen::{deserialize, generate_program, serialize, GenConfig};
use brf_core::catalog::{Catalog, ProgramTypeId};
use brf_core::isa::disassemble;
use brf_core::lower::{compile, read_container, write_container, Container};
use brf_core::runtime::{Engine, ExecResult, SeededBugs, SimKernel};
use brf_core::verifier::verify;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "brf", version, about = "Semantics-aware eBPF runtime fuzzer over a simulated kernel")]
struct Cli {
    /// Catalog file to use instead of the bundled one.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate programs as AST text files.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Program type name, e.g. KPROBE; random per program if absent.
        #[arg(long)]
        prog_type: Option<String>,
        #[arg(long, default_value_t = 1)]
        count: u32,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Lower an AST file to a BRFP container.
    Compile {
        ast: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the instructions of a container.
    Disasm { container: PathBuf },
    /// Verify containers (files, or directories of .brfp files).
    Verify {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also print a histogram of rejection rules.
        #[arg(long)]
        stats: bool,
    },
    /// Load a container into a fresh kernel and run it once.
    Run {
        container: PathBuf,
        /// Raw bytes used as packet or event payload.
        #[arg(long)]
        payload: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EngineArg::Both)]
        engine: EngineArg,
        #[arg(long, default_value = "none")]
        seed_bugs: String,
        #[arg(long, default_value_t = 0)]
        kernel_seed: u64,
    },
    /// Run a fuzzing session.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of inputs, or a wall-clock limit such as `600s`.
        #[arg(long, default_value = "10000")]
        budget: String,
        #[arg(long, default_value_t = 1)]
        workers: u32,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        seed_bugs: String,
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Never add inputs to the corpus.
        #[arg(long)]
        blind: bool,
        #[arg(long, default_value_t = 0)]
        kernel_seed: u64,
        /// Write reproducers as found, without minimizing them.
        #[arg(long)]
        no_minimize: bool,
    },
    /// Replay a reproducer; exits non-zero if the finding does not recur.
    Replay { repro: PathBuf },
    /// Shrink a reproducer while it still reproduces.
    Minimize {
        repro: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Interp,
    Linear,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let catalog = load_catalog(cli.catalog.as_deref())?;
    match cli.cmd {
        Cmd::Gen { seed, prog_type, count, out_dir } => gen(&catalog, seed, prog_type.as_deref(), count, &out_dir),
        Cmd::Compile { ast, out } => {
            let text = fs::read_to_string(&ast).with_context(|| format!("reading {}", ast.display()))?;
            let ast = deserialize(&text, &catalog)?;
            let prog = compile(&ast, &catalog)?;
            let c = Container { prog, map_deps: ast.map_deps.clone() };
            fs::write(&out, write_container(&c)?).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Disasm { container } => {
            let c = read_container_file(&container)?;
            println!("; section {} type {}", c.prog.section_name, c.prog.prog_type.name());
            for (i, m) in c.map_deps.iter().enumerate() {
                println!(
                    "; map {i}: {} key {} value {} max {} flags {:#x}",
                    m.map_type.name(),
                    m.key_size,
                    m.value_size,
                    m.max_entries,
                    m.flags
                );
            }
            print!("{}", disassemble(&c.prog, &|id| catalog.helper_name(id)));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { paths, stats } => verify_cmd(&catalog, &paths, stats),
        Cmd::Run { container, payload, engine, seed_bugs, kernel_seed } => {
            let c = read_container_file(&container)?;
            let payload = match payload {
                Some(p) => fs::read(&p).with_context(|| format!("reading {}", p.display()))?,
                None => Vec::new(),
            };
            let bugs = SeededBugs::parse(&seed_bugs).map_err(anyhow::Error::msg)?;
            run_cmd(&catalog, &c, &payload, engine, bugs, kernel_seed)
        }
        Cmd::Fuzz { seed, budget, workers, corpus, seed_bugs, stats_out, blind, kernel_seed, no_minimize } => {
            let bugs = SeededBugs::parse(&seed_bugs).map_err(anyhow::Error::msg)?;
            let (budget, time_limit) = parse_budget(&budget)?;
            let cfg = FuzzConfig { seed, workers, budget, bugs, guided: !blind, kernel_seed, time_limit, ..FuzzConfig::default() };
            let session = fuzz(&catalog, &cfg);
            let repros: Vec<Reproducer> = session
                .findings
                .iter()
                .map(|f| {
                    let r = Reproducer::from_finding(f);
                    if no_minimize {
                        r
                    } else {
                        minimize_repro(&r, &catalog)
                    }
                })
                .collect();
            println!("{}", session.stats.summary());
            for r in &repros {
                println!("finding {} at {:#x}: {}", r.oracle.name(), r.location, r.detail);
            }
            if let Some(dir) = corpus {
                write_corpus(&dir, &session, &repros, &cfg, &catalog)?;
            }
            if let Some(p) = stats_out {
                fs::write(&p, session.stats.render()).with_context(|| format!("writing {}", p.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { repro } => {
            let r = read_repro_file(&repro, &catalog)?;
            let (hit, out) = replay(&r, &catalog);
            for f in &out.findings {
                println!("{} at {:#x}: {}", f.oracle.name(), f.location, f.detail);
            }
            if hit {
                println!("reproduced {} at {:#x}", r.oracle.name(), r.location);
                Ok(ExitCode::SUCCESS)
            } else {
                println!("did not reproduce {} at {:#x}", r.oracle.name(), r.location);
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Minimize { repro, out } => {
            let r = read_repro_file(&repro, &catalog)?;
            if !replay(&r, &catalog).0 {
                bail!("{} does not reproduce", repro.display());
            }
            let m = minimize_repro(&r, &catalog);
            println!("size {} -> {}", r.input.size(), m.input.size());
            fs::write(&out, write_repro(&m, &catalog)).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// `N` inputs, or `Ns` seconds with no input limit.
fn parse_budget(s: &str) -> Result<(u64, Option<Duration>)> {
    if let Some(secs) = s.strip_suffix('s') {
        let secs: u64 = secs.parse().with_context(|| format!("bad budget {s:?}"))?;
        return Ok((u64::MAX, Some(Duration::from_secs(secs))));
    }
    Ok((s.parse().with_context(|| format!("bad budget {s:?}"))?, None))
}

fn gen(catalog: &Catalog, seed: u64, prog_type: Option<&str>, count: u32, out_dir: &Path) -> Result<ExitCode> {
    let pt = match prog_type {
        Some(name) => Some(ProgramTypeId::from_name(name).with_context(|| format!("unknown program type {name:?}"))?),
        None => None,
    };
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GenConfig::default();
    for i in 0..count {
        let ast = generate_program(catalog, &cfg, &mut rng, pt);
        let path = out_dir.join(format!("{seed}-{i:05}.ast"));
        fs::write(&path, serialize(&ast, catalog)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_container_file(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    read_container(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn read_repro_file(path: &Path, catalog: &Catalog) -> Result<Reproducer> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_repro(&text, catalog).with_context(|| format!("parsing {}", path.display()))
}

fn verify_cmd(catalog: &Catalog, paths: &[PathBuf], stats: bool) -> Result<ExitCode> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "brfp"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut hist: BTreeMap<&'static str, u64> = BTreeMap::new();
    let mut rejected = 0;
    for f in &files {
        let c = read_container_file(f)?;
        match verify(&c.prog, &c.map_deps, catalog) {
            Ok(_) => {
                println!("{}: ok", f.display());
                *hist.entry("ok").or_default() += 1;
            }
            Err(e) => {
                rejected += 1;
                println!("{}: {} at insn {}: {}", f.display(), e.rule.as_str(), e.insn_index, e.message);
                *hist.entry(e.rule.as_str()).or_default() += 1;
            }
        }
    }
    if stats {
        println!("# {} programs, {} rejected", files.len(), rejected);
        for (rule, n) in &hist {
            println!("{rule} {n}");
        }
    }
    Ok(if rejected == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_cmd(catalog: &Catalog, c: &Container, payload: &[u8], engine: EngineArg, bugs: SeededBugs, seed: u64) -> Result<ExitCode> {
    let mut k = SimKernel::new(catalog, seed, bugs, 0);
    let mut handles = Vec::new();
    for spec in &c.map_deps {
        handles.push(k.sys_map_create(*spec)?);
    }
    let id = k.sys_prog_load(c, &handles)?;
    let ctx = catalog.program_type(c.prog.prog_type).event_context;
    let engines: &[Engine] = match engine {
        EngineArg::Interp => &[Engine::Interp],
        EngineArg::Linear => &[Engine::Linear],
        EngineArg::Both => &[Engine::Interp, Engine::Linear],
    };
    let mut results = Vec::new();
    for e in engines {
        let mut kk = k.clone();
        let r = kk.run_engine(id, payload, ctx, *e);
        print_result(match e {
            Engine::Interp => "interp",
            Engine::Linear => "linear",
        }, &r, catalog);
        results.push(r);
    }
    if let [a, b] = &results[..] {
        let same = a.return_value == b.return_value && a.helper_trace == b.helper_trace && a.map_digest == b.map_digest;
        println!("engines_agree = {same}");
        if !same {
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_result(engine: &str, r: &ExecResult, catalog: &Catalog) {
    println!("[{engine}]");
    println!("return = {:#x}", r.return_value);
    println!("insns = {}", r.insn_count);
    let calls: Vec<String> = r
        .helper_trace
        .iter()
        .map(|(id, d)| format!("\"{}:{d:016x}\"", catalog.helper_name(*id).unwrap_or_else(|| id.to_string())))
        .collect();
    println!("helpers = [{}]", calls.join(", "));
    println!("probes = {}", r.coverage.count());
    println!("map_digest = \"{:016x}\"", r.map_digest);
    for f in &r.findings {
        println!("finding = \"{} at {:#x}: {}\"", f.oracle.name(), f.location, f.detail);
    }
}
