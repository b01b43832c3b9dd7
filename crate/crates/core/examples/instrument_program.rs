//! Rewrite a program for sandboxed execution and inspect the artifacts.
//!
//! Instrumentation redirects every boundary call to a wrapper and, in share
//! mode, stamps planned allocation statements with their shared domain's
//! static id. The rewritten text plus the JSON sidecar are everything `run`
//! needs.
//!
//! ```bash
//! cargo run -p mircage --example instrument_program
//! ```

use mircage::instrument::Mode;
use mircage::pipeline::analyze;

const PROGRAM: &str = r#"
crate codec;

pub fn codec::compress(v1: vec<i32>) -> i32 {
  locals { v2: i32; }
  entry {
    v2 = *v1;
    v0 = v2;
    return;
  }
}

crate app;

pub fn app::main() -> i32 {
  locals { v1: vec<i32>; v2: i32; }
  entry {
    alloc v1 = vec<i32> * 64;
    *v1 = 5;
    call v2 = codec::compress(v1);
    v0 = v2;
    return;
  }
}
"#;

const SPEC: &str = "[crates]\ncodec = { transient = false }\n";

fn main() {
    let analysis = analyze(PROGRAM, SPEC, None).expect("pipeline runs");
    let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");

    println!("wrappers:");
    for w in &inst.wrappers {
        println!(
            "  {} (caller {}, unit u{}, transient={})",
            w.path, w.caller, w.unit, w.transient
        );
        println!("    param plans: {:?}", w.param_plans);
        println!("    return plan: {:?}", w.ret_plan);
    }

    println!("\nrewritten program:\n");
    print!("{}", inst.program_text());

    println!("\nsidecar:\n");
    print!("{}", inst.sidecar_json());
}
