//! Execute an instrumented program and read its event trace.
//!
//! The wrapper creates the sandbox instance, enters it, passes the shared
//! vec handle without copying, and exits on return. The branch decision
//! comes from the seed, so both aliases can be exercised deterministically.
//!
//! ```bash
//! cargo run -p mircage --example run_sandboxed
//! ```

use mircage::instrument::Mode;
use mircage::interp::run;
use mircage::pipeline::analyze;
use mircage::runtime::MachineConfig;

const PROGRAM: &str = r#"
crate app;

struct app::S { s: vec<i32>; }

pub fn app::process(v1: vec<i32>) -> i32 {
  locals { v2: i32; }
  entry {
    v2 = *v1;
    v0 = v2;
    return;
  }
}

pub fn app::main() -> i32 {
  locals { v1: app::S; v2: vec<i32>; v3: ref<vec<i32>>; v4: i32; }
  entry {
    alloc v1.s = vec<i32>;
    alloc v2 = vec<i32>;
    *v1.s = 11;
    *v2 = 22;
    branch left, right;
    call v4 = app::process(*v3);
    v0 = v4;
    return;
  }
  left  { v3 = &v1.s; }
  right { v3 = &v2; }
}
"#;

const SPEC: &str = "[functions]\nprocess = { transient = false }\n";

fn main() {
    let analysis = analyze(PROGRAM, SPEC, None).expect("pipeline runs");
    let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");

    for seed in [0u64, 1u64] {
        let outcome = run(&inst, seed, MachineConfig::default()).expect("run finishes");
        println!("seed {seed}: return = {}", outcome.return_rendered());
        println!(
            "  heap-object copies: {}, domain switches: {}",
            outcome.stats.heap_object_copies, outcome.stats.domain_switches
        );
        for line in outcome.render_trace().lines() {
            println!("  trace: {line}");
        }
        println!();
    }
}
