//! The in-process syscall filter.
//!
//! Sandboxed code traps into the policy engine for every syscall. Built-in
//! deny rules reject anything that could subvert the isolation itself —
//! protection-key changes, opening the process's own memory image, mapping
//! pages writable+executable, or remapping the interposer's trampoline
//! region — regardless of allow-lists. Everything else needs the unit's
//! allow-list. The monitor is exempt; the root domain skips allow-lists but
//! still honors the deny rules.
//!
//! ```bash
//! cargo run -p mircage --example filter_syscalls
//! ```

use mircage::instrument::Mode;
use mircage::interp::run;
use mircage::pipeline::analyze;
use mircage::runtime::{DomainId, MachineConfig, SyscallPolicy};

fn program(stmt: &str) -> String {
    format!(
        r#"
crate lib;

pub fn lib::guest(v1: i32) -> i32 {{
  locals {{ v2: i32; }}
  entry {{
    {stmt}
    v0 = v1;
    return;
  }}
}}

crate app;

pub fn app::main() -> i32 {{
  locals {{ v1: i32; v2: i32; }}
  entry {{
    v1 = 9;
    call v2 = lib::guest(v1);
    v0 = v2;
    return;
  }}
}}
"#
    )
}

/// Everything is allow-listed, so only the built-in deny rules fire.
const SPEC: &str = "[functions]\nguest = { transient = false, syscalls = [\"write\", \"open\", \"pkey_mprotect\", \"mmap_wx\", \"mprotect\"] }\n";

fn main() {
    println!("from sandbox context:");
    for stmt in [
        "syscall v2 = write(v1);",
        "syscall v2 = open(\"/tmp/data\");",
        "syscall v2 = open(\"/proc/self/mem\");",
        "syscall v2 = pkey_mprotect(v1);",
        "syscall v2 = mmap_wx(v1);",
        "syscall v2 = mprotect(v2);",
    ] {
        let analysis = analyze(&program(stmt), SPEC, None).expect("pipeline runs");
        let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");
        let outcome = run(&inst, 0, MachineConfig::default()).expect("run finishes");
        match outcome.violation() {
            None => println!("  {stmt:<44} -> allow"),
            Some(v) => println!("  {stmt:<44} -> {v}"),
        }
    }

    println!("\nthe same names from the monitor context (exempt):");
    let policy = SyscallPolicy::default();
    for (name, path) in [
        ("pkey_mprotect", None),
        ("open", Some("/proc/self/mem")),
        ("mmap_wx", None),
        ("mprotect", None),
    ] {
        let decision = policy
            .filter_syscall(DomainId::MONITOR, name, &[0], path)
            .expect("known syscall");
        println!("  {name:<14} -> {}", if decision.is_ok() { "allow" } else { "deny" });
    }
}
