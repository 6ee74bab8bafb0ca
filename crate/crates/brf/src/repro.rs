//! Reproducer files: a finding plus what is needed to replay it.
//!
//! ```text
//! brf-repro 1
//! oracle oob_access
//! location 3112
//! bugs all
//! kernel_seed 0
//! worker 2
//! detail tail call index 40 read past the 36-slot program array 3
//! brf-input 1
//! ...
//! ```

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use brf_core::catalog::Catalog;
use brf_core::runtime::{Oracle, SeededBugs};

use crate::harness::{execute_input, ExecOutcome, Finding, KernelEnv};
use crate::input::{read_input, write_input, FuzzInput};
use crate::minimize::minimize_input;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reproducer {
    pub oracle: Oracle,
    pub location: u32,
    pub detail: String,
    pub env: KernelEnv,
    pub input: FuzzInput,
}

impl Reproducer {
    pub fn from_finding(f: &Finding) -> Self {
        Reproducer {
            oracle: f.report.oracle,
            location: f.report.location,
            detail: f.report.detail.clone(),
            env: f.env,
            input: f.input.clone(),
        }
    }

    pub fn file_name(&self, catalog: &Catalog) -> String {
        format!("{}-{:016x}.repro", self.oracle.name(), self.input.digest(catalog))
    }
}

pub fn write_repro(r: &Reproducer, catalog: &Catalog) -> String {
    let mut o = String::from("brf-repro 1\n");
    let _ = writeln!(o, "oracle {}", r.oracle.name());
    let _ = writeln!(o, "location {}", r.location);
    let _ = writeln!(o, "bugs {}", r.env.bugs);
    let _ = writeln!(o, "kernel_seed {}", r.env.seed);
    let _ = writeln!(o, "worker {}", r.env.worker);
    let _ = writeln!(o, "detail {}", r.detail.replace('\n', " "));
    o.push_str(&write_input(&r.input, catalog));
    o
}

pub fn read_repro(text: &str, catalog: &Catalog) -> Result<Reproducer> {
    let mut lines = text.lines();
    if lines.next() != Some("brf-repro 1") {
        bail!("missing `brf-repro 1` header");
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines.next().with_context(|| format!("missing {name}"))?;
        let rest = line.strip_prefix(name).and_then(|r| r.strip_prefix(' ')).with_context(|| format!("expected {name}"))?;
        Ok(rest.to_string())
    };
    let oracle = field("oracle")?;
    let oracle = Oracle::from_name(&oracle).with_context(|| format!("unknown oracle {oracle}"))?;
    let location = field("location")?.parse()?;
    let bugs = SeededBugs::parse(&field("bugs")?).map_err(anyhow::Error::msg)?;
    let seed = field("kernel_seed")?.parse()?;
    let worker = field("worker")?.parse()?;
    let detail = field("detail")?;
    let rest: Vec<&str> = lines.collect();
    let input = read_input(&rest.join("\n"), catalog)?;
    Ok(Reproducer { oracle, location, detail, env: KernelEnv { seed, bugs, worker }, input })
}

/// Whether running `input` raises `oracle` at `location`.
pub fn reproduces(input: &FuzzInput, oracle: Oracle, location: u32, env: &KernelEnv, catalog: &Catalog) -> bool {
    execute_input(input, catalog, env).findings.iter().any(|f| f.oracle == oracle && f.location == location)
}

pub fn replay(r: &Reproducer, catalog: &Catalog) -> (bool, ExecOutcome) {
    let out = execute_input(&r.input, catalog, &r.env);
    let hit = out.findings.iter().any(|f| f.oracle == r.oracle && f.location == r.location);
    (hit, out)
}

/// Shrinks the reproducer's input while it still raises the same finding.
pub fn minimize_repro(r: &Reproducer, catalog: &Catalog) -> Reproducer {
    let input = minimize_input(&r.input, catalog, |i| reproduces(i, r.oracle, r.location, &r.env, catalog));
    Reproducer { input, ..r.clone() }
}
