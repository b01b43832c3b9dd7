//! mircage — sandbox MiniMIR programs along their syntactic boundaries.
//!
//! mircage takes a program in MiniMIR (a small mid-level IR) plus a sandbox
//! specification naming functions, types, or crates to isolate, and:
//!
//! 1. finds the call sites where control crosses into a sandbox,
//! 2. computes, by a backward-reachability dataflow analysis, which heap
//!    allocations can produce data that crosses those boundaries,
//! 3. rewrites the program — boundary wrappers plus allocation redirection
//!    into shared data domains — and
//! 4. executes it on a simulated multi-domain isolation runtime with
//!    per-domain memory, access checks, and an in-process syscall filter.
//!
//! Cross-boundary heap data can either be deep-copied at every crossing
//! (`copy` mode) or allocated up front in a shared data domain visible to
//! both sides (`share` mode), which eliminates the copies.
//!
//! ## Examples
//!
//! The `examples/` directory is the guided tour — one runnable program per
//! capability:
//!
//! | example | shows |
//! |---------|-------|
//! | **`parse_and_print`** | the MiniMIR format, validation, canonical formatting |
//! | **`analyze_boundaries`** | boundary sites, the reachable place set, allocation sites, the shared-domain plan |
//! | **`instrument_program`** | wrapper synthesis, copy plans, the rewritten text and its sidecar |
//! | **`run_sandboxed`** | executing an instrumented program; event traces |
//! | **`block_oob_write`** | confining an out-of-bounds write to its sandbox |
//! | **`transient_sandboxes`** | per-call instances, persistent state, stale-address trapping |
//! | **`filter_syscalls`** | built-in deny rules, allow-lists, monitor exemption |
//! | **`share_vs_copy`** | the data-movement cost of the two modes |
//! | **`soundness_oracle`** | differential testing of the analysis against ground truth |
//!
//! ```bash
//! cargo run -p mircage --example analyze_boundaries
//! cargo run -p mircage --example share_vs_copy
//! ```
//!
//! ## Library layout
//!
//! - [`ir`] — MiniMIR syntax, parser, canonical formatter, validator
//! - [`spec`] — sandbox specification file and unit resolution
//! - [`callgraph`] — call graph, ownership, boundary classification
//! - [`analysis`] — backward reachability, context filtering, the
//!   shared-domain plan
//! - [`instrument`] — wrappers, copy plans, allocation redirection, sidecar
//! - [`runtime`] — domain table, access matrix, allocator, syscall policy
//! - [`interp`] — the interpreter and the dynamic oracle
//! - [`pipeline`] — stage glue used by the CLI, tests and examples
//! - [`corpus`] — deterministic program generator for differential testing
//! - [`cli`] — the `analyze | instrument | run | check` subcommands
//!
//! ## Quick start
//!
//! ```
//! use mircage::{instrument::Mode, interp, pipeline, runtime::MachineConfig};
//!
//! let program = r#"
//! crate lib;
//! pub fn lib::double(v1: vec<i32>) -> i32 {
//!   locals { v2: i32; }
//!   entry { v2 = *v1; v0 = v2; return; }
//! }
//! crate app;
//! pub fn app::main() -> i32 {
//!   locals { v1: vec<i32>; v2: i32; }
//!   entry {
//!     alloc v1 = vec<i32>;
//!     *v1 = 21;
//!     call v2 = lib::double(v1);
//!     v0 = v2;
//!     return;
//!   }
//! }
//! "#;
//! let spec = "[functions]\ndouble = { transient = false }\n";
//!
//! let analysis = pipeline::analyze(program, spec, None).unwrap();
//! assert_eq!(analysis.alloc_sites.len(), 1);
//!
//! let sandboxed = analysis.instrument(Mode::Share).unwrap();
//! let outcome = interp::run(&sandboxed, 0, MachineConfig::default()).unwrap();
//! assert!(outcome.completed());
//! assert_eq!(outcome.stats.heap_object_copies, 0);
//! ```
//!
//! The `mircage` binary exposes the same pipeline as batch subcommands; see
//! the README for the file formats and exit codes.

pub mod analysis;
pub mod callgraph;
pub mod cli;
pub mod corpus;
pub mod instrument;
pub mod interp;
pub mod ir;
pub mod pipeline;
pub mod runtime;
pub mod spec;
