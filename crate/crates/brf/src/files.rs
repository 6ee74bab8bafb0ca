//! On-disk artifacts: catalog, corpus directory, stats file.
//!
//! Corpus directory layout:
//!
//! ```text
//! DIR/manifest.toml              session parameters and entry list
//! DIR/queue/<digest>.input       fuzz input (syscalls + program text)
//! DIR/queue/<digest>.ast         program text alone
//! DIR/queue/<digest>.brfp        compiled container
//! DIR/crashes/<oracle>-<digest>.repro
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use brf_core::astgen::serialize;
use brf_core::catalog::Catalog;
use brf_core::lower::{compile, write_container, Container};

use crate::harness::{FuzzConfig, Session};
use crate::input::{read_input, write_input, FuzzInput};
use crate::repro::{write_repro, Reproducer};

/// The bundled catalog, or the file at `path`.
pub fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        None => Ok(Catalog::builtin()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading catalog {}", p.display()))?;
            Catalog::from_toml(&text).with_context(|| format!("parsing catalog {}", p.display()))
        }
    }
}

pub fn write_input_file(path: &Path, input: &FuzzInput, catalog: &Catalog) -> Result<()> {
    fs::write(path, write_input(input, catalog)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_input_file(path: &Path, catalog: &Catalog) -> Result<FuzzInput> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_input(&text, catalog).with_context(|| format!("parsing {}", path.display()))
}

/// Writes corpus entries, reproducers and the manifest under `dir`.
pub fn write_corpus(dir: &Path, session: &Session, repros: &[Reproducer], cfg: &FuzzConfig, catalog: &Catalog) -> Result<()> {
    let queue = dir.join("queue");
    let crashes = dir.join("crashes");
    fs::create_dir_all(&queue)?;
    fs::create_dir_all(&crashes)?;
    let mut m = String::from("schema = \"brf-corpus/1\"\n");
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "workers = {}", cfg.workers);
    let _ = writeln!(m, "budget = {}", cfg.budget);
    let _ = writeln!(m, "seed_bugs = \"{}\"", cfg.bugs);
    let _ = writeln!(m, "guided = {}", cfg.guided);
    let _ = writeln!(m, "kernel_seed = {}", cfg.kernel_seed);
    let names: Vec<String> = session.corpus.entries.iter().map(|e| format!("\"{:016x}\"", e.digest)).collect();
    let _ = writeln!(m, "entries = [{}]", names.join(", "));
    let crash_names: Vec<String> = repros.iter().map(|r| format!("\"{}\"", r.file_name(catalog))).collect();
    let _ = writeln!(m, "crashes = [{}]", crash_names.join(", "));
    for e in &session.corpus.entries {
        let stem = queue.join(format!("{:016x}", e.digest));
        write_input_file(&stem.with_extension("input"), &e.input, catalog)?;
        fs::write(stem.with_extension("ast"), serialize(&e.input.ast, catalog))?;
        if let Ok(prog) = compile(&e.input.ast, catalog) {
            let c = Container { prog, map_deps: e.input.ast.map_deps.clone() };
            fs::write(stem.with_extension("brfp"), write_container(&c)?)?;
        }
    }
    for r in repros {
        fs::write(crashes.join(r.file_name(catalog)), write_repro(r, catalog))?;
    }
    fs::write(dir.join("manifest.toml"), m)?;
    Ok(())
}
