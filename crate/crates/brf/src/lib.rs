//! Fuzzing harness and file formats around `brf_core`.
//!
//! [`harness::fuzz`] runs a session: each worker repeatedly picks an
//! action (generate a program, mutate a corpus program, mutate a corpus
//! input's map syscalls), assembles a [`input::FuzzInput`], runs it on a
//! fresh simulated kernel and keeps it if it hit new probes.

pub mod files;
pub mod harness;
pub mod input;
pub mod minimize;
pub mod mutate;
pub mod repro;
pub mod stats;

pub use harness::{execute_input, fuzz, FuzzConfig, KernelEnv, Session};
pub use input::{build_input, FuzzInput};
pub use stats::Stats;
