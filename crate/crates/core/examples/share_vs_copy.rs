//! The cost of crossing a boundary: deep copies versus shared placement.
//!
//! A 10,000-element vec crosses into the sandbox one hundred times. In copy
//! mode every crossing duplicates the backing store into the callee's
//! domain (and writes it back on exit). In share mode the store was
//! allocated in a shared data domain up front, so only the handle moves —
//! zero object copies — while both runs produce identical output.
//!
//! ```bash
//! cargo run -p mircage --example share_vs_copy
//! ```

use mircage::instrument::Mode;
use mircage::interp::run;
use mircage::pipeline::analyze;
use mircage::runtime::MachineConfig;

fn program(calls: usize, len: usize) -> String {
    let mut body = format!("    alloc v1 = vec<i32> * {len};\n    *v1 = 5;\n");
    for _ in 0..calls {
        body.push_str("    call v2 = codec::consume(v1);\n");
    }
    format!(
        r#"
crate codec;

pub fn codec::consume(v1: vec<i32>) -> i32 {{
  locals {{ v2: i32; }}
  entry {{
    v2 = *v1;
    v0 = v2;
    return;
  }}
}}

crate app;

pub fn app::main() -> i32 {{
  locals {{ v1: vec<i32>; v2: i32; }}
  entry {{
{body}    v0 = v2;
    return;
  }}
}}
"#
    )
}

const SPEC: &str = "[crates]\ncodec = { transient = false }\n";

fn main() {
    let text = program(100, 10_000);
    let analysis = analyze(&text, SPEC, None).expect("pipeline runs");

    for mode in [Mode::Copy, Mode::Share] {
        let inst = analysis.instrument(mode).expect("instrumentation succeeds");
        let outcome = run(&inst, 0, MachineConfig::default()).expect("run finishes");
        let s = &outcome.stats;
        println!(
            "{mode:>5} mode: return={} heap_object_copies={} bytes_copied={} domain_switches={}",
            outcome.return_rendered(),
            s.heap_object_copies,
            s.bytes_copied,
            s.domain_switches
        );
    }
}
