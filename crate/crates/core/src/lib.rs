//! Core of a desk-scale eBPF runtime fuzzer.
//!
//! Everything in this crate is pure computation over owned values: the
//! instruction set model, the domain-knowledge catalog, the static
//! verifier, the semantics-aware program generator, the lowering to
//! bytecode and the simulated kernel runtime that executes it. No I/O
//! happens here; the `brf` crate adds files, the fuzzing harness and the
//! command-line interface.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod astgen;
pub mod catalog;
pub mod digest;
pub mod isa;
pub mod lower;
pub mod runtime;
pub mod verifier;

pub use catalog::{Catalog, HelperId, MapTypeId, ProgramTypeId};
pub use isa::{Instruction, RawProgram};
