//! Subcommand surface: output shapes, exit codes, artifact round-trips.
//! Library-level calls cover most paths; one subprocess test pins the
//! installed binary's exit codes.

use std::path::PathBuf;
use std::process::Command;

use mircage::cli::{self, exit_code, OutputFormat, RunConfig};
use mircage::instrument::Mode;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_tmp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn analyze_reports_and_exit_codes() {
    let ok = cli::cmd_analyze(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        ..Default::default()
    });
    assert_eq!(ok.code, exit_code::OK);
    assert!(ok.output.contains("boundary sites: 1"));

    // Vacuous spec: no boundaries, no sites.
    let empty = cli::cmd_analyze(&RunConfig {
        program: fixture("alias_branch.mmir"),
        ..Default::default()
    });
    assert_eq!(empty.code, exit_code::OK);
    assert!(empty.output.contains("boundary sites: 0"));
    assert!(empty.output.contains("alloc sites: 0"));

    // Overlapping units are a hard error.
    let tmp = tempfile::tempdir().unwrap();
    let overlap = write_tmp(
        &tmp,
        "overlap.sbx",
        "[crates]\napp = { transient = false }\n[functions]\napp::process = { transient = true }\n",
    );
    let bad = cli::cmd_analyze(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(overlap),
        ..Default::default()
    });
    assert_eq!(bad.code, exit_code::ERROR);
    assert!(bad.output.contains("overlap"), "{}", bad.output);
}

#[test]
fn analyze_structured_output_is_schema_tagged_jsonl() {
    let result = cli::cmd_analyze(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        format: OutputFormat::Structured,
        ..Default::default()
    });
    assert_eq!(result.code, exit_code::OK);
    let mut kinds = Vec::new();
    for line in result.output.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], 1);
        kinds.push(v["record"].as_str().unwrap().to_string());
    }
    for expected in ["summary", "unit", "boundary", "reach", "alloc_site", "shared_domain"] {
        assert!(kinds.iter().any(|k| k == expected), "missing record kind {expected}");
    }
}

#[test]
fn analyze_emits_call_graph_exports() {
    for (flavor, needle) in [("edges", "app::main -> app::process"), ("dot", "digraph callgraph")] {
        let result = cli::cmd_analyze(&RunConfig {
            program: fixture("alias_branch.mmir"),
            spec: Some(fixture("alias_branch.sbx")),
            emit_graph: Some(flavor.to_string()),
            ..Default::default()
        });
        assert_eq!(result.code, exit_code::OK);
        assert!(result.output.contains(needle), "{flavor}: {}", result.output);
    }
}

#[test]
fn instrument_then_run_round_trips_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("alias");
    let inst = cli::cmd_instrument(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        mode: Some(Mode::Share),
        output: Some(base.clone()),
        ..Default::default()
    });
    assert_eq!(inst.code, exit_code::OK, "{}", inst.output);

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cli::sidecar_path_for(&base)).unwrap())
            .unwrap();
    assert_eq!(sidecar["schema"], 1);
    assert_eq!(sidecar["mode"], "share");
    assert_eq!(sidecar["alloc_domains"].as_array().unwrap().len(), 2);

    let run = cli::cmd_run(&RunConfig {
        program: cli::program_path_for(&base),
        seed: 0,
        ..Default::default()
    });
    assert_eq!(run.code, exit_code::OK, "{}", run.output);
    assert!(run.output.contains("status: completed"));
    assert!(run.output.contains("return: 11"));

    // Mode assertion against the sidecar.
    let clash = cli::cmd_run(&RunConfig {
        program: cli::program_path_for(&base),
        mode: Some(Mode::Copy),
        ..Default::default()
    });
    assert_eq!(clash.code, exit_code::ERROR);
}

#[test]
fn running_instrumented_text_without_its_sidecar_fails_with_a_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("alias");
    cli::cmd_instrument(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        mode: Some(Mode::Share),
        output: Some(base.clone()),
        ..Default::default()
    });
    std::fs::remove_file(cli::sidecar_path_for(&base)).unwrap();
    let result = cli::cmd_run(&RunConfig {
        program: cli::program_path_for(&base),
        ..Default::default()
    });
    assert_eq!(result.code, exit_code::ERROR);
    assert!(result.output.contains("sidecar"), "{}", result.output);
}

#[test]
fn plain_run_warns_and_violated_run_exits_two() {
    // Plain program without a sidecar: warning, then completion.
    let plain = cli::cmd_run(&RunConfig {
        program: fixture("alias_branch.mmir"),
        ..Default::default()
    });
    assert_eq!(plain.code, exit_code::OK);
    assert!(plain.output.contains("warning: no sidecar"));

    // A denied syscall from a sandbox exits with the violation code.
    let tmp = tempfile::tempdir().unwrap();
    let program = write_tmp(
        &tmp,
        "attack.mmir",
        "crate lib;\npub fn lib::attack(v1: i32) -> i32 {\n  locals { v2: i32; }\n  entry {\n    syscall v2 = open(\"/proc/self/mem\");\n    v0 = v1;\n    return;\n  }\n}\ncrate app;\npub fn app::main() -> i32 {\n  locals { v1: i32; v2: i32; }\n  entry {\n    v1 = 3;\n    call v2 = lib::attack(v1);\n    v0 = v2;\n    return;\n  }\n}\n",
    );
    let spec = write_tmp(&tmp, "attack.sbx", "[functions]\nattack = { transient = false }\n");
    let base = tmp.path().join("attack");
    let inst = cli::cmd_instrument(&RunConfig {
        program,
        spec: Some(spec),
        mode: Some(Mode::Share),
        output: Some(base.clone()),
        ..Default::default()
    });
    assert_eq!(inst.code, exit_code::OK, "{}", inst.output);
    let run = cli::cmd_run(&RunConfig {
        program: cli::program_path_for(&base),
        ..Default::default()
    });
    assert_eq!(run.code, exit_code::VIOLATED);
    assert!(run.output.contains("syscall-denied"), "{}", run.output);
}

#[test]
fn check_verdicts_and_seed_parsing() {
    let pass = cli::cmd_check(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        ..Default::default()
    });
    assert_eq!(pass.code, exit_code::OK);
    assert!(pass.output.contains("verdict: PASS"));
    assert!(pass.output.contains("seeds: 2"), "exhaustive over one branch: {}", pass.output);

    let listed = cli::cmd_check(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        seeds: Some("0,1,2".to_string()),
        ..Default::default()
    });
    assert!(listed.output.contains("seeds: 3"));

    let ranged = cli::cmd_check(&RunConfig {
        program: fixture("alias_branch.mmir"),
        spec: Some(fixture("alias_branch.sbx")),
        seeds: Some("0..8".to_string()),
        format: OutputFormat::Structured,
        ..Default::default()
    });
    let v: serde_json::Value = serde_json::from_str(ranged.output.lines().next().unwrap()).unwrap();
    assert_eq!(v["seeds"], 8);
    assert_eq!(v["verdict"], "PASS");

    // No units: vacuous pass.
    let vacuous = cli::cmd_check(&RunConfig {
        program: fixture("alias_branch.mmir"),
        ..Default::default()
    });
    assert_eq!(vacuous.code, exit_code::OK);
    assert!(vacuous.output.contains("oracle crossing sites: 0"));
}

#[test]
fn check_reports_inconclusive_seeds_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    // Branch 1 loops back into the entry block: the all-ones seed diverges
    // and runs into the step budget.
    let program = write_tmp(
        &tmp,
        "loopy.mmir",
        "crate lib;\npub fn lib::f(v1: i32) -> i32 { entry { v0 = v1; return; } }\ncrate app;\npub fn app::main() -> i32 {\n  locals { v1: i32; v2: i32; }\n  entry {\n    v1 = 1;\n    branch fine, fine2;\n    call v2 = lib::f(v1);\n    v0 = v2;\n    return;\n  }\n  fine { v1 = 2; }\n  fine2 { branch fine2a, fine2a; }\n  fine2a { branch fine2, fine; }\n}\n",
    );
    let spec = write_tmp(&tmp, "loopy.sbx", "[functions]\nf = { transient = false }\n");
    let result = cli::cmd_check(&RunConfig {
        program,
        spec: Some(spec),
        step_budget: Some(2000),
        ..Default::default()
    });
    assert_eq!(result.code, exit_code::INCONCLUSIVE, "{}", result.output);
    assert!(result.output.contains("verdict: INCONCLUSIVE"));
    assert!(result.output.contains("step budget exceeded"));
}

#[test]
fn installed_binary_exit_codes_match() {
    let bin = env!("CARGO_BIN_EXE_mircage");
    let out = Command::new(bin)
        .args([
            "analyze",
            fixture("alias_branch.mmir").to_str().unwrap(),
            "--spec",
            fixture("alias_branch.sbx").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("alloc sites: 2"));

    let missing = Command::new(bin).args(["analyze", "/nonexistent.mmir"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(exit_code::ERROR));
}
