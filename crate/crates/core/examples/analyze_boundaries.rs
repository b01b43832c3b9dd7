//! Find the heap allocations that can cross a sandbox boundary.
//!
//! A vec reaches the sandboxed `process` function through a reference that
//! aliases one of two allocations, picked by a branch. The flow-insensitive
//! analysis must conservatively report both allocation sites, and both are
//! planned into one shared data domain between the root and the sandbox.
//!
//! ```bash
//! cargo run -p mircage --example analyze_boundaries
//! ```

use mircage::pipeline::analyze;

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

    println!("boundary call sites:");
    for site in &analysis.boundary {
        println!(
            "  {}#{} -> {} ({} -> u{})",
            site.edge.caller, site.edge.stmt, site.edge.callee, site.caller_side, site.callee_unit
        );
    }

    println!("\nbackward-reachable places ({} at fixed point):", analysis.reach.members.len());
    for (key, member) in &analysis.reach.members {
        println!("  {key}  [{}]", member.provenance.rule);
    }

    println!("\ncross-boundary allocation sites:");
    for site in &analysis.alloc_sites {
        let domain = analysis.plan.domain_of(&site.function, site.stmt).unwrap();
        println!("  {site}  -> shared domain {domain}");
    }

    println!("\nshared data domains:");
    for (id, participants) in analysis.plan.domains() {
        let names: Vec<String> = participants.iter().map(|p| p.to_string()).collect();
        println!("  domain {id}: {{{}}}", names.join(", "));
    }
}
