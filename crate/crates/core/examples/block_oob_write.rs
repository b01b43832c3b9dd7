//! Confine an out-of-bounds write to its sandbox.
//!
//! The `parse` function writes through a raw offset past its own buffer —
//! the shape of a length-confusion bug. Unsandboxed, the write lands in the
//! root domain's memory. Sandboxed, the access check traps it at the
//! domain boundary and the run ends with a memory-access violation instead
//! of silent corruption.
//!
//! ```bash
//! cargo run -p mircage --example block_oob_write
//! ```

use mircage::instrument::Mode;
use mircage::interp::run;
use mircage::pipeline::analyze;
use mircage::runtime::MachineConfig;

fn program(offset: i64) -> String {
    let off = if offset >= 0 { format!("+ {offset}") } else { format!("- {}", -offset) };
    format!(
        r#"
crate parser;

pub fn parser::parse(v1: i32) -> i32 {{
  locals {{ v2: vec<i32>; v3: i32; }}
  entry {{
    alloc v2 = vec<i32> * 4;
    v3 = 7;
    rawstore v2 {off} = v3;
    v0 = v1;
    return;
  }}
}}

crate app;

pub fn app::main() -> i32 {{
  locals {{ v1: i32; v2: i32; }}
  entry {{
    v1 = 1;
    call v2 = parser::parse(v1);
    v0 = v2;
    return;
  }}
}}
"#
    )
}

const SPEC: &str = "[functions]\nparse = { transient = false }\n";

fn main() {
    // A tiny address space keeps the domains close together, so small
    // offsets already reach foreign memory.
    let config = MachineConfig::tiny();
    for (offset, label) in [
        (2i64, "within the buffer"),
        (40i64, "past the sandbox heap"),
        (-220i64, "into root-owned memory"),
    ] {
        let analysis = analyze(&program(offset), SPEC, None).expect("pipeline runs");
        let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");
        let outcome = run(&inst, 0, config).expect("run finishes");
        match outcome.violation() {
            None => println!("offset {offset:>4} ({label}): completed"),
            Some(v) => println!("offset {offset:>4} ({label}): {v}"),
        }
    }
}
