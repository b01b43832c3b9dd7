//! Transient versus persistent sandbox instances.
//!
//! A transient unit gets a freshly created, zero-initialized instance on
//! every boundary call, so state never leaks between calls — the isolation
//! needed between, say, two requests handled by the same code. A persistent
//! unit keeps one instance whose memory carries over. Addresses retained
//! from a destroyed transient instance trap as stale on any later use.
//!
//! ```bash
//! cargo run -p mircage --example transient_sandboxes
//! ```

use mircage::instrument::Mode;
use mircage::interp::run;
use mircage::pipeline::analyze;
use mircage::runtime::MachineConfig;

/// `tick` returns what its scratch local held on entry, then writes 42
/// into it. Fresh memory reads 0; a reused frame reads the 42.
const TICK: &str = r#"
crate lib;

pub fn lib::tick(v1: i32) -> i32 {
  locals { v2: i32; }
  entry {
    v0 = v2;
    v2 = 42;
    return;
  }
}

crate app;

pub fn app::main() -> i32 {
  locals { v1: i32; v2: i32; v3: i32; v4: i32; }
  entry {
    v1 = 0;
    call v2 = lib::tick(v1);
    call v3 = lib::tick(v1);
    syscall v4 = write(v2, v3);
    v0 = v3;
    return;
  }
}
"#;

/// `leak` smuggles the raw address of its own heap allocation out as an
/// integer; the caller dereferences it after the instance is gone.
const LEAK: &str = r#"
crate lib;

pub fn lib::leak() -> i32 {
  locals { v1: vec<i32>; v2: ref<vec<i32>>; v3: i32; }
  entry {
    alloc v1 = vec<i32>;
    v2 = &v1;
    rawload v3 = v2;
    v0 = v3;
    return;
  }
}

crate app;

pub fn app::main() -> i32 {
  locals { v1: i32; v2: i32; }
  entry {
    call v1 = lib::leak();
    rawload v2 = v1;
    v0 = v2;
    return;
  }
}
"#;

fn spec(unit: &str, transient: bool) -> String {
    format!("[functions]\n{unit} = {{ transient = {transient}, syscalls = [\"write\"] }}\n")
}

fn main() {
    for transient in [true, false] {
        let analysis = analyze(TICK, &spec("tick", transient), None).expect("pipeline runs");
        let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");
        let outcome = run(&inst, 0, MachineConfig::default()).expect("run finishes");
        println!(
            "tick with transient={transient}: the two calls observed [{}]",
            outcome.stdout.join("; ")
        );
    }

    println!();
    for transient in [true, false] {
        let analysis = analyze(LEAK, &spec("leak", transient), None).expect("pipeline runs");
        let inst = analysis.instrument(Mode::Share).expect("instrumentation succeeds");
        let outcome = run(&inst, 0, MachineConfig::default()).expect("run finishes");
        match outcome.violation() {
            Some(v) => println!("leak with transient={transient}: {v}"),
            None => println!(
                "leak with transient={transient}: completed (instance still alive, root may read it)"
            ),
        }
    }
}
