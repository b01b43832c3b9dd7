//! Batch subcommands: analyze, instrument, run, check.
//!
//! Each command is a plain function over a config struct so it can be
//! driven from tests as easily as from the binary. Commands return their
//! rendered output plus a process exit code:
//!
//! | code | meaning                                          |
//! |------|--------------------------------------------------|
//! | 0    | success / run completed / check passed           |
//! | 1    | usage, parse, validation or internal error       |
//! | 2    | run ended in a violation / check found a leak    |
//! | 3    | check inconclusive (step budget) on some seeds   |
//!
//! With `--format structured`, output is line-delimited JSON records, each
//! carrying the schema version.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::instrument::{InstrumentedProgram, Mode};
use crate::interp::{run, run_oracle, run_plain, seeds_for, Outcome};
use crate::ir::Statement;
use crate::pipeline::{analyze, Analysis};
use crate::runtime::MachineConfig;

pub const OUTPUT_SCHEMA: u32 = 1;

/// Exit codes shared by all subcommands.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const VIOLATED: i32 = 2;
    pub const INCONCLUSIVE: i32 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Structured,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "structured" => Ok(OutputFormat::Structured),
            other => Err(format!("unknown format `{other}`; expected `text` or `structured`")),
        }
    }
}

/// Options common to every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub program: PathBuf,
    pub spec: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub seed: u64,
    /// Seed set for `check`: `N`, `a..b`, or a comma list. Empty = auto.
    pub seeds: Option<String>,
    pub format: OutputFormat,
    /// Container-kind override (replaces the spec's list).
    pub containers: Option<Vec<String>>,
    pub step_budget: Option<u64>,
    /// Output base path for `instrument`.
    pub output: Option<PathBuf>,
    /// Sidecar path override for `run`.
    pub sidecar: Option<PathBuf>,
    /// Emit the call graph from `analyze`: "edges" or "dot".
    pub emit_graph: Option<String>,
    /// Append the event trace to `run` output.
    pub trace: bool,
}

/// Rendered output plus exit code.
pub struct CmdResult {
    pub output: String,
    pub code: i32,
}

impl CmdResult {
    fn ok(output: String) -> Self {
        CmdResult { output, code: exit_code::OK }
    }

    fn fail(message: String) -> Self {
        CmdResult { output: message, code: exit_code::ERROR }
    }
}

fn read_file(path: &Path) -> Result<String, CmdResult> {
    std::fs::read_to_string(path)
        .map_err(|e| CmdResult::fail(format!("error: cannot read {}: {e}\n", path.display())))
}

fn read_spec(config: &RunConfig) -> Result<String, CmdResult> {
    match &config.spec {
        Some(path) => read_file(path),
        None => Ok(String::new()),
    }
}

fn machine_config(config: &RunConfig) -> MachineConfig {
    let mut mc = MachineConfig::default();
    if let Some(b) = config.step_budget {
        mc.step_budget = b;
    }
    mc
}

fn load_analysis(config: &RunConfig) -> Result<Analysis, CmdResult> {
    let program_text = read_file(&config.program)?;
    let spec_text = read_spec(config)?;
    analyze(&program_text, &spec_text, config.containers.clone())
        .map_err(|e| CmdResult::fail(format!("error: {e}\n")))
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Analyze a program against a sandbox spec and report boundary sites, the
/// reachable place set, cross-boundary allocation sites and the
/// shared-domain plan.
pub fn cmd_analyze(config: &RunConfig) -> CmdResult {
    let analysis = match load_analysis(config) {
        Ok(a) => a,
        Err(e) => return e,
    };
    let output = match config.format {
        OutputFormat::Text => render_analysis_text(&analysis, config),
        OutputFormat::Structured => render_analysis_structured(&analysis),
    };
    CmdResult::ok(output)
}

fn render_analysis_text(analysis: &Analysis, config: &RunConfig) -> String {
    let mut out = String::new();
    let p = &analysis.program;
    writeln!(
        out,
        "program: {} crate(s), {} function(s), {} aggregate(s)",
        p.crates.len(),
        p.functions().count(),
        p.aggregates().count()
    )
    .unwrap();
    writeln!(out, "units: {}", analysis.units.len()).unwrap();
    for u in &analysis.units {
        writeln!(
            out,
            "  u{}: {} `{}` transient={} entries={} members={} cloned={}",
            u.id,
            u.decl.kind,
            u.decl.path,
            u.decl.transient,
            u.entries.len(),
            u.members.len(),
            u.cloned.len()
        )
        .unwrap();
        for c in &u.cloned {
            writeln!(out, "    cloned helper: {c}").unwrap();
        }
    }
    writeln!(
        out,
        "call graph: {} node(s), {} edge(s)",
        analysis.graph.nodes.len(),
        analysis.graph.edges.len()
    )
    .unwrap();
    writeln!(out, "boundary sites: {}", analysis.boundary.len()).unwrap();
    for b in &analysis.boundary {
        writeln!(
            out,
            "  {}#{} -> {} ({} -> u{})",
            b.edge.caller, b.edge.stmt, b.edge.callee, b.caller_side, b.callee_unit
        )
        .unwrap();
    }
    writeln!(
        out,
        "reach: {} place(s) at fixed point ({} before context filtering, {} pass(es))",
        analysis.reach.members.len(),
        analysis.reach_raw.members.len(),
        analysis.reach_raw.passes
    )
    .unwrap();
    writeln!(out, "alloc sites: {}", analysis.alloc_sites.len()).unwrap();
    for site in &analysis.alloc_sites {
        let domain = analysis
            .plan
            .domain_of(&site.function, site.stmt)
            .map(|d| format!(" -> shared domain {d}"))
            .unwrap_or_default();
        writeln!(out, "  {site}{domain}").unwrap();
    }
    writeln!(out, "shared domains: {}", analysis.plan.groups.len()).unwrap();
    for (id, participants) in analysis.plan.domains() {
        let names: Vec<String> = participants.iter().map(|s| s.to_string()).collect();
        writeln!(out, "  domain {id}: participants {}", names.join(", ")).unwrap();
    }
    match config.emit_graph.as_deref() {
        Some("dot") => {
            out.push('\n');
            out.push_str(&analysis.graph.render_dot());
        }
        Some("edges") => {
            out.push('\n');
            out.push_str(&analysis.graph.render_edge_list());
        }
        _ => {}
    }
    out
}

fn render_analysis_structured(analysis: &Analysis) -> String {
    let mut out = String::new();
    let mut emit = |v: serde_json::Value| {
        writeln!(out, "{v}").unwrap();
    };
    emit(json!({
        "schema": OUTPUT_SCHEMA,
        "record": "summary",
        "crates": analysis.program.crates.len(),
        "functions": analysis.program.functions().count(),
        "units": analysis.units.len(),
        "edges": analysis.graph.edges.len(),
        "boundary_sites": analysis.boundary.len(),
        "reach_places": analysis.reach.members.len(),
        "reach_passes": analysis.reach_raw.passes,
        "alloc_sites": analysis.alloc_sites.len(),
        "shared_domains": analysis.plan.groups.len(),
    }));
    for u in &analysis.units {
        emit(json!({
            "schema": OUTPUT_SCHEMA,
            "record": "unit",
            "id": u.id,
            "kind": u.decl.kind,
            "path": u.decl.path,
            "transient": u.decl.transient,
            "entries": u.entries,
            "members": u.members,
            "cloned": u.cloned,
        }));
    }
    for b in &analysis.boundary {
        emit(json!({
            "schema": OUTPUT_SCHEMA,
            "record": "boundary",
            "caller": b.edge.caller,
            "stmt": b.edge.stmt,
            "callee": b.edge.callee,
            "caller_side": b.caller_side.to_string(),
            "callee_unit": b.callee_unit,
        }));
    }
    for (key, member) in &analysis.reach.members {
        emit(json!({
            "schema": OUTPUT_SCHEMA,
            "record": "reach",
            "place": key.to_string(),
            "rule": member.provenance.rule,
            "from": member.provenance.from.as_ref().map(|k| k.to_string()),
            "via": member.provenance.via,
            "truncated": member.truncated,
        }));
    }
    for site in &analysis.alloc_sites {
        emit(json!({
            "schema": OUTPUT_SCHEMA,
            "record": "alloc_site",
            "function": site.function,
            "stmt": site.stmt,
            "kind": site.kind,
            "dst": site.dst.to_string(),
            "shared_domain": analysis.plan.domain_of(&site.function, site.stmt),
        }));
    }
    for (id, participants) in analysis.plan.domains() {
        emit(json!({
            "schema": OUTPUT_SCHEMA,
            "record": "shared_domain",
            "id": id,
            "participants": participants.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        }));
    }
    out
}

// ---------------------------------------------------------------------------
// instrument
// ---------------------------------------------------------------------------

/// Default output base: the program path with its extension dropped, plus
/// `.sandboxed`.
pub fn default_output_base(program: &Path) -> PathBuf {
    let stem = program.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    program.with_file_name(format!("{stem}.sandboxed"))
}

pub fn sidecar_path_for(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".sidecar.json");
    PathBuf::from(s)
}

pub fn program_path_for(base: &Path) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".mmir");
    PathBuf::from(s)
}

/// Instrument a program and write the rewritten text plus its sidecar.
/// Re-running over identical inputs produces identical bytes.
pub fn cmd_instrument(config: &RunConfig) -> CmdResult {
    let analysis = match load_analysis(config) {
        Ok(a) => a,
        Err(e) => return e,
    };
    let Some(mode) = config.mode else {
        return CmdResult::fail("error: instrument requires --mode copy|share\n".to_string());
    };
    let inst = match analysis.instrument(mode) {
        Ok(i) => i,
        Err(e) => return CmdResult::fail(format!("error: {e}\n")),
    };
    let base = config.output.clone().unwrap_or_else(|| default_output_base(&config.program));
    let program_path = program_path_for(&base);
    let sidecar_path = sidecar_path_for(&base);
    if let Err(e) = std::fs::write(&program_path, inst.program_text()) {
        return CmdResult::fail(format!("error: cannot write {}: {e}\n", program_path.display()));
    }
    if let Err(e) = std::fs::write(&sidecar_path, inst.sidecar_json()) {
        return CmdResult::fail(format!("error: cannot write {}: {e}\n", sidecar_path.display()));
    }
    let mut out = String::new();
    writeln!(out, "wrote {}", program_path.display()).unwrap();
    writeln!(out, "wrote {}", sidecar_path.display()).unwrap();
    writeln!(
        out,
        "mode={} wrappers={} redirected_calls={} shared_allocs={}",
        inst.mode,
        inst.wrappers.len(),
        inst.redirects.len(),
        inst.plan.assignment.len()
    )
    .unwrap();
    for w in &inst.warnings {
        writeln!(out, "warning: {w}").unwrap();
    }
    CmdResult::ok(out)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn render_outcome(outcome: &Outcome, config: &RunConfig) -> String {
    let mut out = String::new();
    match config.format {
        OutputFormat::Text => {
            match &outcome.status {
                crate::interp::RunStatus::Completed(_) => {
                    writeln!(out, "status: completed").unwrap();
                    writeln!(out, "return: {}", outcome.return_rendered()).unwrap();
                }
                crate::interp::RunStatus::Violated(v) => {
                    writeln!(out, "status: violated").unwrap();
                    writeln!(out, "violation: {v}").unwrap();
                }
            }
            for line in &outcome.stdout {
                writeln!(out, "stdout: {line}").unwrap();
            }
            let s = &outcome.stats;
            writeln!(
                out,
                "stats: steps={} copies={} heap_object_copies={} cells_copied={} bytes_copied={} domain_switches={}",
                s.steps, s.copies, s.heap_object_copies, s.cells_copied, s.bytes_copied, s.domain_switches
            )
            .unwrap();
            for (domain, count) in &s.allocs_per_domain {
                writeln!(out, "stats: allocs domain={domain} count={count}").unwrap();
            }
            if config.trace {
                out.push_str(&outcome.render_trace());
            }
        }
        OutputFormat::Structured => {
            let status = match &outcome.status {
                crate::interp::RunStatus::Completed(_) => "completed",
                crate::interp::RunStatus::Violated(_) => "violated",
            };
            writeln!(
                out,
                "{}",
                json!({
                    "schema": OUTPUT_SCHEMA,
                    "record": "outcome",
                    "status": status,
                    "return": outcome.return_rendered(),
                    "violation": outcome.violation().map(|v| v.to_string()),
                    "stdout": outcome.stdout,
                    "steps": outcome.stats.steps,
                    "copies": outcome.stats.copies,
                    "heap_object_copies": outcome.stats.heap_object_copies,
                    "bytes_copied": outcome.stats.bytes_copied,
                    "domain_switches": outcome.stats.domain_switches,
                })
            )
            .unwrap();
            if config.trace {
                for e in &outcome.trace {
                    writeln!(
                        out,
                        "{}",
                        json!({"schema": OUTPUT_SCHEMA, "record": "trace", "event": e.to_string()})
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}

/// Execute a program. Instrumented input needs its sidecar next to it (or
/// `--sidecar`); plain programs run uninstrumented with a warning.
pub fn cmd_run(config: &RunConfig) -> CmdResult {
    let program_text = match read_file(&config.program) {
        Ok(t) => t,
        Err(e) => return e,
    };
    let sidecar_path = config.sidecar.clone().unwrap_or_else(|| {
        let s = config.program.as_os_str().to_string_lossy();
        let base = s.strip_suffix(".mmir").unwrap_or(&s).to_string();
        PathBuf::from(format!("{base}.sidecar.json"))
    });
    let mc = machine_config(config);
    let mut preamble = String::new();
    let outcome = if sidecar_path.exists() {
        let sidecar_json = match read_file(&sidecar_path) {
            Ok(t) => t,
            Err(e) => return e,
        };
        let inst = match InstrumentedProgram::load(&program_text, &sidecar_json) {
            Ok(i) => i,
            Err(e) => return CmdResult::fail(format!("error: {e}\n")),
        };
        if let Some(mode) = config.mode {
            if mode != inst.mode {
                return CmdResult::fail(format!(
                    "error: --mode {mode} contradicts the sidecar mode {}\n",
                    inst.mode
                ));
            }
        }
        run(&inst, config.seed, mc)
    } else {
        // No sidecar: parse as a plain program. Instrumented text then
        // fails resolution, which is the "missing sidecar" diagnosis.
        match crate::ir::parse_program(&program_text) {
            Ok(program) => {
                writeln!(
                    preamble,
                    "warning: no sidecar at {}; running uninstrumented in the root domain",
                    sidecar_path.display()
                )
                .unwrap();
                run_plain(&program, config.seed, mc)
            }
            Err(e) => {
                return CmdResult::fail(format!(
                    "error: {e}\nhint: instrumented programs need their sidecar ({})\n",
                    sidecar_path.display()
                ))
            }
        }
    };
    match outcome {
        Ok(outcome) => {
            let code = if outcome.completed() { exit_code::OK } else { exit_code::VIOLATED };
            CmdResult { output: preamble + &render_outcome(&outcome, config), code }
        }
        Err(e) => CmdResult::fail(format!("error: {e}\n")),
    }
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{spec}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{spec}`"))?;
        return Ok((a..b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| format!("bad seed `{s}`")))
        .collect()
}

/// Compare the dynamic oracle against the static analysis: every heap
/// object observed crossing domains must be allocated at a reported site.
pub fn cmd_check(config: &RunConfig) -> CmdResult {
    let analysis = match load_analysis(config) {
        Ok(a) => a,
        Err(e) => return e,
    };
    let seeds = match &config.seeds {
        Some(spec) => match parse_seeds(spec) {
            Ok(s) => s,
            Err(e) => return CmdResult::fail(format!("error: {e}\n")),
        },
        None => seeds_for(&analysis.program, 64),
    };
    let report =
        match run_oracle(&analysis.program, &analysis.units, &seeds, machine_config(config)) {
            Ok(r) => r,
            Err(e) => return CmdResult::fail(format!("error: {e}\n")),
        };

    // Only container kinds the analysis recognizes participate in the
    // comparison; other allocations are outside the tracked universe.
    let listed = |func: &str, stmt: usize| -> bool {
        analysis
            .program
            .function(func)
            .and_then(|f| f.statements().find(|(i, _)| *i == stmt))
            .map(|(_, s)| match s {
                Statement::Alloc { kind, .. } => {
                    analysis.spec.containers.iter().any(|c| c == kind)
                }
                _ => false,
            })
            .unwrap_or(false)
    };
    let mut leaks: Vec<(String, usize, u64)> = Vec::new();
    for site in report.crossing.keys() {
        if !listed(&site.0, site.1) {
            continue;
        }
        let covered =
            analysis.alloc_sites.iter().any(|s| s.function == site.0 && s.stmt == site.1);
        if !covered {
            let seed = report.first_seen.get(site).copied().unwrap_or_default();
            leaks.push((site.0.clone(), site.1, seed));
        }
    }

    let verdict = if !leaks.is_empty() {
        "FAIL"
    } else if !report.inconclusive.is_empty() {
        "INCONCLUSIVE"
    } else {
        "PASS"
    };
    let mut out = String::new();
    match config.format {
        OutputFormat::Text => {
            writeln!(out, "seeds: {}", seeds.len()).unwrap();
            writeln!(out, "oracle crossing sites: {}", report.crossing.len()).unwrap();
            writeln!(out, "static alloc sites: {}", analysis.alloc_sites.len()).unwrap();
            for (func, stmt, seed) in &leaks {
                writeln!(out, "counterexample: {func}#{stmt} crosses under seed {seed} but is not a static alloc site").unwrap();
            }
            for seed in &report.inconclusive {
                writeln!(out, "inconclusive: step budget exceeded for seed {seed}").unwrap();
            }
            writeln!(out, "verdict: {verdict}").unwrap();
        }
        OutputFormat::Structured => {
            writeln!(
                out,
                "{}",
                json!({
                    "schema": OUTPUT_SCHEMA,
                    "record": "check",
                    "seeds": seeds.len(),
                    "oracle_crossing_sites": report.crossing.len(),
                    "static_alloc_sites": analysis.alloc_sites.len(),
                    "counterexamples": leaks
                        .iter()
                        .map(|(f, s, seed)| json!({"function": f, "stmt": s, "seed": seed}))
                        .collect::<Vec<_>>(),
                    "inconclusive_seeds": report.inconclusive,
                    "verdict": verdict,
                })
            )
            .unwrap();
        }
    }
    let code = match verdict {
        "PASS" => exit_code::OK,
        "INCONCLUSIVE" => exit_code::INCONCLUSIVE,
        _ => exit_code::VIOLATED,
    };
    CmdResult { output: out, code }
}
