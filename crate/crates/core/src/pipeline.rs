//! End-to-end pipeline glue: parse, resolve, analyze, instrument.
//!
//! The stages compose the other modules in their canonical order and carry
//! every intermediate artifact, so callers (the CLI, tests, examples) can
//! inspect any of them.

use thiserror::Error;

use crate::analysis::{
    compute_reach, filter_context, find_alloc_sites, plan_shared_domains, AllocSite, ReachSet,
    SharedDomainPlan,
};
use crate::callgraph::{
    boundary_call_sites, build_call_graph, compute_owners, BoundaryError, BoundarySite, CallGraph,
    Owner,
};
use crate::instrument::{instrument, InstrumentError, InstrumentedProgram, Mode};
use crate::ir::{parse_program, validate_program, ParseError, Program};
use crate::spec::{parse_spec, resolve_units, SandboxSpec, SandboxUnit, SpecError};
use std::collections::BTreeMap;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("program: {0}")]
    Parse(#[from] ParseError),
    #[error("program validation failed:\n{0}")]
    Invalid(String),
    #[error("spec: {0}")]
    Spec(#[from] SpecError),
    #[error("boundary: {0}")]
    Boundary(#[from] BoundaryError),
    #[error("instrument: {0}")]
    Instrument(#[from] InstrumentError),
}

/// Every artifact of one analysis run.
pub struct Analysis {
    pub program: Program,
    pub spec: SandboxSpec,
    pub units: Vec<SandboxUnit>,
    pub graph: CallGraph,
    pub owners: BTreeMap<String, Owner>,
    pub boundary: Vec<BoundarySite>,
    /// Context-insensitive fixed point.
    pub reach_raw: ReachSet,
    /// After call/return-matching filtering; the set downstream stages use.
    pub reach: ReachSet,
    pub alloc_sites: Vec<AllocSite>,
    pub plan: SharedDomainPlan,
}

/// Run the full analysis over program and spec text.
///
/// `containers_override`, when set, replaces the spec's container list.
pub fn analyze(
    program_text: &str,
    spec_text: &str,
    containers_override: Option<Vec<String>>,
) -> Result<Analysis, PipelineError> {
    let program = parse_program(program_text)?;
    let diags = validate_program(&program);
    if !diags.is_empty() {
        let rendered: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
        return Err(PipelineError::Invalid(rendered.join("\n")));
    }
    let mut spec = parse_spec(spec_text)?;
    if let Some(containers) = containers_override {
        spec.containers = containers;
    }
    analyze_parsed(program, spec)
}

/// Analysis over already-parsed artifacts.
pub fn analyze_parsed(program: Program, spec: SandboxSpec) -> Result<Analysis, PipelineError> {
    let units = resolve_units(&spec, &program)?;
    let graph = build_call_graph(&program);
    let owners = compute_owners(&program, &units);
    let boundary = boundary_call_sites(&graph, &units, &owners)?;
    let reach_raw = compute_reach(&program, &units, &boundary);
    let reach = filter_context(&program, &reach_raw);
    let alloc_sites = find_alloc_sites(&reach, &program, &spec.containers);
    let plan = plan_shared_domains(&alloc_sites, &boundary, &reach);
    Ok(Analysis {
        program,
        spec,
        units,
        graph,
        owners,
        boundary,
        reach_raw,
        reach,
        alloc_sites,
        plan,
    })
}

impl Analysis {
    /// Rewrite the analyzed program for the given mode.
    pub fn instrument(&self, mode: Mode) -> Result<InstrumentedProgram, InstrumentError> {
        let mut out = instrument(
            &self.program,
            &self.units,
            &self.boundary,
            &self.reach,
            &self.plan,
            mode,
        )?;
        out.containers = self.spec.containers.clone();
        Ok(out)
    }
}
