//! Differential testing: the dynamic oracle against the static analysis.
//!
//! The oracle executes a program without enforcement and records which
//! logical domains actually touch each heap object, over every branch
//! decision vector. Soundness means every object observed crossing domains
//! was allocated at a site the static analysis reported. This example runs
//! the comparison over a batch of generated programs.
//!
//! ```bash
//! cargo run -p mircage --example soundness_oracle
//! ```

use mircage::corpus;
use mircage::interp::{run_oracle, seeds_for};
use mircage::pipeline::analyze_parsed;
use mircage::runtime::MachineConfig;

fn main() {
    let mut total_runs = 0usize;
    let mut total_crossings = 0usize;
    let mut violations = 0usize;

    for seed in 0..50u64 {
        let case = corpus::generate(seed);
        let analysis =
            analyze_parsed(case.program.clone(), case.spec.clone()).expect("pipeline runs");
        let seeds = seeds_for(&analysis.program, 64);
        let report =
            run_oracle(&analysis.program, &analysis.units, &seeds, MachineConfig::default())
                .expect("oracle runs");
        total_runs += seeds.len();
        for (site, sides) in &report.crossing {
            total_crossings += 1;
            let covered = analysis
                .alloc_sites
                .iter()
                .any(|s| s.function == site.0 && s.stmt == site.1);
            if !covered {
                violations += 1;
                println!(
                    "UNSOUND program {seed}: {}#{} touched by {:?} but not reported",
                    site.0, site.1, sides
                );
            }
        }
    }

    println!("programs:        50");
    println!("oracle runs:     {total_runs}");
    println!("crossing sites:  {total_crossings}");
    println!("uncovered sites: {violations}");
    println!("verdict:         {}", if violations == 0 { "PASS" } else { "FAIL" });
}
