//! Session statistics and the stats file.
//!
//! The stats file is TOML: one `key = value` per line, keys in a fixed
//! order, tables in a fixed order, map keys sorted. Schema `brf-stats/1`:
//!
//! | key | meaning |
//! |---|---|
//! | `inputs` | fuzz inputs executed |
//! | `generated`, `mutated_program`, `mutated_aux` | scheduler actions taken |
//! | `loads_attempted`, `loads_succeeded`, `load_rate`, `load_rate_stderr` | program loads |
//! | `attaches_attempted`, `attaches_succeeded`, `attach_rate` | attaches of loaded programs |
//! | `executions` | program runs (test runs plus event runs) |
//! | `unique_attached`, `unique_executed`, `unique_exec_rate` | distinct program images |
//! | `coverage` | probes hit over the session |
//! | `corpus_size` | corpus entries |
//! | `coverage_curve` | `[inputs, probes]` pairs at each checkpoint |
//! | `[expressiveness]` | `{insns,helpers,maps}_{mean,max}` over loaded programs |
//! | `[rules]` | verifier and load rejections by rule id |
//! | `[syscall_errors]` | other failed syscalls by error name |
//! | `[findings]` | distinct findings by oracle |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// Count, sum and maximum of a per-program metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Aggregate {
    pub n: u64,
    pub sum: u64,
    pub max: u64,
}

impl Aggregate {
    pub fn add(&mut self, v: u64) {
        self.n += 1;
        self.sum += v;
        self.max = self.max.max(v);
    }

    pub fn merge(&mut self, o: &Aggregate) {
        self.n += o.n;
        self.sum += o.sum;
        self.max = self.max.max(o.max);
    }

    pub fn mean(&self) -> f64 {
        ratio(self.sum, self.n)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub inputs: u64,
    pub generated: u64,
    pub mutated_program: u64,
    pub mutated_aux: u64,
    pub loads_attempted: u64,
    pub loads_succeeded: u64,
    pub attaches_attempted: u64,
    pub attaches_succeeded: u64,
    pub executions: u64,
    /// Digests of relocated program images.
    pub attached_programs: BTreeSet<u64>,
    pub executed_programs: BTreeSet<u64>,
    pub rules: BTreeMap<String, u64>,
    pub syscall_errors: BTreeMap<String, u64>,
    pub insns: Aggregate,
    pub helpers: Aggregate,
    pub maps: Aggregate,
    pub findings: BTreeMap<String, u64>,
    pub coverage: u64,
    pub corpus_size: u64,
    pub coverage_curve: Vec<(u64, u64)>,
}

impl Stats {
    pub fn rule(&mut self, name: &str) {
        *self.rules.entry(name.to_string()).or_default() += 1;
    }

    pub fn syscall_error(&mut self, name: &str) {
        *self.syscall_errors.entry(name.to_string()).or_default() += 1;
    }

    /// Adds a worker's counters. Session-level fields (coverage, corpus
    /// size, curve) are owned by the coordinator and left alone.
    pub fn merge(&mut self, o: &Stats) {
        self.inputs += o.inputs;
        self.generated += o.generated;
        self.mutated_program += o.mutated_program;
        self.mutated_aux += o.mutated_aux;
        self.loads_attempted += o.loads_attempted;
        self.loads_succeeded += o.loads_succeeded;
        self.attaches_attempted += o.attaches_attempted;
        self.attaches_succeeded += o.attaches_succeeded;
        self.executions += o.executions;
        self.attached_programs.extend(&o.attached_programs);
        self.executed_programs.extend(&o.executed_programs);
        for (k, v) in &o.rules {
            *self.rules.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &o.syscall_errors {
            *self.syscall_errors.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &o.findings {
            *self.findings.entry(k.clone()).or_default() += v;
        }
        self.insns.merge(&o.insns);
        self.helpers.merge(&o.helpers);
        self.maps.merge(&o.maps);
    }

    pub fn load_rate(&self) -> f64 {
        ratio(self.loads_succeeded, self.loads_attempted)
    }

    /// Standard error of the load rate as a binomial proportion.
    pub fn load_rate_stderr(&self) -> f64 {
        if self.loads_attempted == 0 {
            return 0.0;
        }
        let p = self.load_rate();
        (p * (1.0 - p) / self.loads_attempted as f64).sqrt()
    }

    pub fn attach_rate(&self) -> f64 {
        ratio(self.attaches_succeeded, self.attaches_attempted)
    }

    /// Distinct executed programs over distinct attached programs.
    pub fn unique_exec_rate(&self) -> f64 {
        let executed = self.executed_programs.intersection(&self.attached_programs).count() as u64;
        ratio(executed, self.attached_programs.len() as u64)
    }

    /// The stats file.
    pub fn render(&self) -> String {
        let mut o = String::from("schema = \"brf-stats/1\"\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("inputs", self.inputs.to_string());
        kv("generated", self.generated.to_string());
        kv("mutated_program", self.mutated_program.to_string());
        kv("mutated_aux", self.mutated_aux.to_string());
        kv("loads_attempted", self.loads_attempted.to_string());
        kv("loads_succeeded", self.loads_succeeded.to_string());
        kv("load_rate", format!("{:.6}", self.load_rate()));
        kv("load_rate_stderr", format!("{:.6}", self.load_rate_stderr()));
        kv("attaches_attempted", self.attaches_attempted.to_string());
        kv("attaches_succeeded", self.attaches_succeeded.to_string());
        kv("attach_rate", format!("{:.6}", self.attach_rate()));
        kv("executions", self.executions.to_string());
        kv("unique_attached", self.attached_programs.len().to_string());
        kv("unique_executed", self.executed_programs.len().to_string());
        kv("unique_exec_rate", format!("{:.6}", self.unique_exec_rate()));
        kv("coverage", self.coverage.to_string());
        kv("corpus_size", self.corpus_size.to_string());
        let curve: Vec<String> = self.coverage_curve.iter().map(|(i, c)| format!("[{i}, {c}]")).collect();
        kv("coverage_curve", format!("[{}]", curve.join(", ")));
        o.push_str("\n[expressiveness]\n");
        for (name, a) in [("insns", &self.insns), ("helpers", &self.helpers), ("maps", &self.maps)] {
            let _ = writeln!(o, "{name}_mean = {:.4}", a.mean());
            let _ = writeln!(o, "{name}_max = {}", a.max);
        }
        for (title, map) in [("rules", &self.rules), ("syscall_errors", &self.syscall_errors), ("findings", &self.findings)] {
            let _ = writeln!(o, "\n[{title}]");
            for (k, v) in map {
                let _ = writeln!(o, "{k} = {v}");
            }
        }
        o
    }

    /// Human-readable summary for the terminal.
    pub fn summary(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(
            o,
            "inputs {}  load {:.1}% ± {:.1}%  attach {:.1}%  unique exec {:.1}%  coverage {} probes  corpus {}",
            self.inputs,
            100.0 * self.load_rate(),
            100.0 * self.load_rate_stderr(),
            100.0 * self.attach_rate(),
            100.0 * self.unique_exec_rate(),
            self.coverage,
            self.corpus_size,
        );
        let _ = writeln!(
            o,
            "insns avg {:.1} max {}  helpers avg {:.1} max {}  maps avg {:.1} max {}",
            self.insns.mean(),
            self.insns.max,
            self.helpers.mean(),
            self.helpers.max,
            self.maps.mean(),
            self.maps.max
        );
        if !self.rules.is_empty() {
            let rules: Vec<String> = self.rules.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(o, "rejections: {}", rules.join(" "));
        }
        if !self.findings.is_empty() {
            let f: Vec<String> = self.findings.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(o, "findings: {}", f.join(" "));
        }
        o
    }
}
