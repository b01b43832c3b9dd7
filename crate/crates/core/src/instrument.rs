//! Boundary instrumentation: wrapper synthesis, allocation-site redirection
//! and copy plans.
//!
//! For every boundary call site the original callee is redirected to a
//! wrapper. At run time the wrapper resolves the target sandbox instance
//! (fresh for transient units), enters it, moves the arguments according to
//! their copy plans, invokes the entry function, moves the return value
//! back, exits, and tears down transient instances.
//!
//! Two data-movement modes exist. In `copy` mode every indirection is
//! deep-copied into the callee's domain (and copied back on exit, so benign
//! programs behave identically). In `share` mode heap containers whose
//! allocation sites are all covered by the shared-domain plan are passed as
//! bare handles; only stack data is copied. Covered allocation statements
//! are rewritten to carry their shared domain's static id.
//!
//! The instrumented program serializes in the ordinary MiniMIR textual
//! format plus a JSON sidecar holding everything the runtime needs to
//! execute it standalone: units, policy, shared domains, wrapper table and
//! redirects.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{place_key, Chan, ReachSet, SharedDomainPlan, Tag};
use crate::callgraph::{BoundarySite, Side};
use crate::ir::{format_program, FunctionDef, LocalId, Program, Statement, TypeExpr};
use crate::spec::SandboxUnit;

/// Data-movement mode for boundary crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Copy,
    Share,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Copy => write!(f, "copy"),
            Mode::Share => write!(f, "share"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(Mode::Copy),
            "share" => Ok(Mode::Share),
            other => Err(format!("unknown mode `{other}`; expected `copy` or `share`")),
        }
    }
}

/// How one value moves across a boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CopyAction {
    /// Verbatim cell copy; scalars.
    Bitwise,
    /// Field-wise recursion over an aggregate's cells.
    Aggregate { fields: Vec<(String, CopyAction)> },
    /// Follow the indirection and duplicate the referenced object into the
    /// target domain (references always; containers in copy mode).
    Referent { inner: Box<CopyAction> },
    /// Transfer the container handle only; the backing store lives in a
    /// shared data domain both sides can touch.
    PassShared,
}

impl CopyAction {
    /// Does executing this plan ever duplicate an object?
    pub fn copies_objects(&self) -> bool {
        match self {
            CopyAction::Bitwise | CopyAction::PassShared => false,
            CopyAction::Referent { .. } => true,
            CopyAction::Aggregate { fields } => fields.iter().any(|(_, a)| a.copies_objects()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("parameter {param} of `{entry}`: type `{ty}` has no finite copy plan (recursive through indirections)")]
    UnsupportedCopyType { entry: String, param: String, ty: String },
    #[error("boundary call at {0}#{1} is not a call statement")]
    NotACall(String, usize),
}

/// A synthesized boundary wrapper. Wrappers execute natively in the
/// monitor's transition layer; they have no MiniMIR body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapperDef {
    /// Synthetic path the redirected calls target.
    pub path: String,
    /// Caller side(s) this wrapper serves, rendered (`root`, `u0`, ...).
    pub caller: String,
    /// Callee unit.
    pub unit: u32,
    pub transient: bool,
    /// The wrapped entry function.
    pub entry: String,
    /// One plan per parameter, in order.
    pub param_plans: Vec<CopyAction>,
    pub ret_plan: CopyAction,
}

/// One redirected call site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redirect {
    pub function: String,
    pub stmt: usize,
    pub wrapper: String,
}

/// A rewritten program plus the tables the runtime needs to execute it.
#[derive(Debug, Clone)]
pub struct InstrumentedProgram {
    pub program: Program,
    pub mode: Mode,
    pub units: Vec<SandboxUnit>,
    pub plan: SharedDomainPlan,
    pub containers: Vec<String>,
    pub wrappers: Vec<WrapperDef>,
    pub redirects: Vec<Redirect>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Copy plans
// ---------------------------------------------------------------------------

/// True when `ty` can reach a reference type without crossing a container
/// boundary... references anywhere in the value make its heap placement
/// unshareable, since they may point at stack cells of the source domain.
fn contains_ref(program: &Program, ty: &TypeExpr, visiting: &mut BTreeSet<String>) -> bool {
    match ty {
        TypeExpr::Bool | TypeExpr::I32 => false,
        TypeExpr::Ref(_) | TypeExpr::RefMut(_) => true,
        TypeExpr::Vec(t) => contains_ref(program, t, visiting),
        TypeExpr::Aggregate(path) => {
            if !visiting.insert(path.clone()) {
                return false;
            }
            let out = program
                .aggregate(path)
                .map(|a| a.fields.iter().any(|(_, t)| contains_ref(program, t, visiting)))
                .unwrap_or(false);
            visiting.remove(path);
            out
        }
    }
}

/// Context for building one parameter's plan.
struct PlanCtx<'a> {
    program: &'a Program,
    mode: Mode,
    plan: &'a SharedDomainPlan,
    /// Allocation statements (location, container kind) that can feed the
    /// value being planned.
    origin_sites: &'a BTreeSet<(String, usize)>,
    warnings: &'a mut Vec<String>,
    what: String,
}

/// Build the copy plan for a type.
///
/// Scalars copy bitwise, aggregates recurse field-wise, references copy
/// their referent. A container handle passes shared exactly when the mode
/// is share, every origin site is covered by the plan, and its element type
/// is reference-free; otherwise it falls back to a deep copy (with a
/// warning in share mode, since that trades performance for soundness).
pub fn copy_plan_for_type(
    program: &Program,
    ty: &TypeExpr,
    mode: Mode,
    plan: &SharedDomainPlan,
    origin_sites: &BTreeSet<(String, usize)>,
) -> Result<(CopyAction, Vec<String>), String> {
    let mut warnings = Vec::new();
    let mut ctx = PlanCtx {
        program,
        mode,
        plan,
        origin_sites,
        warnings: &mut warnings,
        what: ty.to_string(),
    };
    let action = plan_type(&mut ctx, ty, &mut BTreeSet::new())?;
    Ok((action, warnings))
}

fn plan_type(
    ctx: &mut PlanCtx<'_>,
    ty: &TypeExpr,
    visiting: &mut BTreeSet<String>,
) -> Result<CopyAction, String> {
    match ty {
        TypeExpr::Bool | TypeExpr::I32 => Ok(CopyAction::Bitwise),
        TypeExpr::Ref(t) | TypeExpr::RefMut(t) => {
            let inner = plan_type(ctx, t, visiting)?;
            Ok(CopyAction::Referent { inner: Box::new(inner) })
        }
        TypeExpr::Vec(t) => {
            if ctx.mode == Mode::Share {
                let covered = ctx
                    .origin_sites
                    .iter()
                    .all(|loc| ctx.plan.assignment.contains_key(loc));
                let shareable = !contains_ref(ctx.program, t, &mut BTreeSet::new());
                if covered && shareable {
                    return Ok(CopyAction::PassShared);
                }
                if !covered {
                    ctx.warnings.push(format!(
                        "{}: container has allocation sites outside the shared-domain plan; falling back to a deep copy",
                        ctx.what
                    ));
                } else {
                    ctx.warnings.push(format!(
                        "{}: container elements hold references; falling back to a deep copy",
                        ctx.what
                    ));
                }
            }
            let inner = plan_type(ctx, t, visiting)?;
            Ok(CopyAction::Referent { inner: Box::new(inner) })
        }
        TypeExpr::Aggregate(path) => {
            if !visiting.insert(path.clone()) {
                return Err(path.clone());
            }
            let agg = ctx.program.aggregate(path).ok_or_else(|| path.clone())?;
            let mut fields = Vec::new();
            for (name, fty) in &agg.fields {
                fields.push((name.clone(), plan_type(ctx, fty, visiting)?));
            }
            visiting.remove(path);
            Ok(CopyAction::Aggregate { fields })
        }
    }
}

// ---------------------------------------------------------------------------
// Instrumentation
// ---------------------------------------------------------------------------

fn side_designator(sides: &BTreeSet<Side>) -> String {
    sides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("_")
}

fn wrapper_path(designator: &str, entry: &str) -> String {
    format!("__wrap::{designator}::{entry}")
}

/// Allocation statements whose reached destination carries one of `tags`.
fn origins_with_tags(
    program: &Program,
    reach: &ReachSet,
    wanted: &BTreeSet<Tag>,
) -> BTreeSet<(String, usize)> {
    let mut out = BTreeSet::new();
    for func in program.functions() {
        for (idx, stmt) in func.statements() {
            let Statement::Alloc { dst, .. } = stmt else { continue };
            let Some(key) = place_key(program, func, dst) else { continue };
            let tags = reach.tags_of(&key);
            if tags.iter().any(|t| wanted.contains(t)) {
                out.insert((func.path.clone(), idx));
            }
        }
    }
    out
}

/// Rewrite a program for sandboxed execution.
///
/// Every boundary call is redirected to a wrapper; in share mode, planned
/// allocation statements are stamped with their shared domain's static id.
/// Function bodies are otherwise untouched. With no boundary sites the
/// output program equals the input.
pub fn instrument(
    program: &Program,
    units: &[SandboxUnit],
    boundary: &[BoundarySite],
    reach: &ReachSet,
    plan: &SharedDomainPlan,
    mode: Mode,
) -> Result<InstrumentedProgram, InstrumentError> {
    let mut rewritten = program.clone();
    let mut warnings = Vec::new();

    // Group boundary sites by call statement: a statement from a cloned
    // caller carries one site per owning unit but can only name one wrapper.
    let mut by_stmt: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, site) in boundary.iter().enumerate() {
        by_stmt.entry((site.edge.caller.clone(), site.edge.stmt)).or_default().push(i);
    }

    // One wrapper per (caller designator, entry function).
    let mut wrappers: BTreeMap<String, WrapperDef> = BTreeMap::new();
    let mut wrapper_sites: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    let mut redirects = Vec::new();

    for ((caller_fn, stmt_idx), site_indices) in &by_stmt {
        let first = &boundary[site_indices[0]];
        let entry = &first.edge.callee;
        let sides: BTreeSet<Side> =
            site_indices.iter().map(|&i| boundary[i].caller_side).collect();
        let designator = side_designator(&sides);
        let path = wrapper_path(&designator, entry);
        let unit = &units[first.callee_unit as usize];
        wrappers.entry(path.clone()).or_insert_with(|| WrapperDef {
            path: path.clone(),
            caller: designator.clone(),
            unit: unit.id,
            transient: unit.decl.transient,
            entry: entry.clone(),
            param_plans: Vec::new(),
            ret_plan: CopyAction::Bitwise,
        });
        wrapper_sites
            .entry(path.clone())
            .or_default()
            .extend(site_indices.iter().map(|&i| i as u32));
        redirects.push(Redirect {
            function: caller_fn.clone(),
            stmt: *stmt_idx,
            wrapper: path.clone(),
        });
    }

    // Fill in plans now that each wrapper knows all its boundary sites.
    for wrapper in wrappers.values_mut() {
        let entry_fn = program.function(&wrapper.entry).expect("entry exists");
        let group = &wrapper_sites[&wrapper.path];
        let mut param_plans = Vec::new();
        for i in 1..=entry_fn.param_count {
            let ty = &entry_fn.local(LocalId(i)).expect("param declared").ty;
            let wanted: BTreeSet<Tag> = group
                .iter()
                .map(|&s| Tag::Site { site: s, chan: Chan::Arg(i - 1) })
                .collect();
            let origins = origins_with_tags(program, reach, &wanted);
            let (action, mut warns) =
                copy_plan_for_type(program, ty, mode, plan, &origins).map_err(|cycle| {
                    InstrumentError::UnsupportedCopyType {
                        entry: wrapper.entry.clone(),
                        param: format!("v{i}"),
                        ty: cycle,
                    }
                })?;
            warnings.append(&mut warns);
            param_plans.push(action);
        }
        let ret_ty = entry_fn.return_type();
        let wanted: BTreeSet<Tag> =
            group.iter().map(|&s| Tag::Site { site: s, chan: Chan::Ret }).collect();
        let origins = origins_with_tags(program, reach, &wanted);
        let (ret_plan, mut warns) = copy_plan_for_type(program, ret_ty, mode, plan, &origins)
            .map_err(|cycle| InstrumentError::UnsupportedCopyType {
                entry: wrapper.entry.clone(),
                param: "v0".to_string(),
                ty: cycle,
            })?;
        warnings.append(&mut warns);
        wrapper.param_plans = param_plans;
        wrapper.ret_plan = ret_plan;
    }

    // Apply redirects to the rewritten program.
    for redirect in &redirects {
        let func = rewritten
            .crates
            .iter_mut()
            .flat_map(|c| c.functions.iter_mut())
            .find(|f| f.path == redirect.function)
            .expect("caller exists");
        let stmt = stmt_at_mut(func, redirect.stmt)
            .ok_or_else(|| InstrumentError::NotACall(redirect.function.clone(), redirect.stmt))?;
        match stmt {
            Statement::Call { callee, .. } => *callee = redirect.wrapper.clone(),
            _ => return Err(InstrumentError::NotACall(redirect.function.clone(), redirect.stmt)),
        }
    }

    // Stamp planned allocation sites with their shared domain ids.
    if mode == Mode::Share {
        for func in rewritten.crates.iter_mut().flat_map(|c| c.functions.iter_mut()) {
            let path = func.path.clone();
            let mut linear = 0usize;
            for block in &mut func.blocks {
                for stmt in &mut block.statements {
                    if let Statement::Alloc { domain, .. } = stmt {
                        if let Some(id) = plan.assignment.get(&(path.clone(), linear)) {
                            *domain = Some(*id);
                        }
                    }
                    linear += 1;
                }
            }
        }
    }

    Ok(InstrumentedProgram {
        program: rewritten,
        mode,
        units: units.to_vec(),
        plan: plan.clone(),
        containers: Vec::new(),
        wrappers: wrappers.into_values().collect(),
        redirects,
        warnings,
    })
}

fn stmt_at_mut(func: &mut FunctionDef, linear: usize) -> Option<&mut Statement> {
    let mut n = linear;
    for block in &mut func.blocks {
        if n < block.statements.len() {
            return Some(&mut block.statements[n]);
        }
        n -= block.statements.len();
    }
    None
}

// ---------------------------------------------------------------------------
// Sidecar
// ---------------------------------------------------------------------------

/// Everything `run` needs besides the program text, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: u32,
    pub mode: Mode,
    pub containers: Vec<String>,
    pub units: Vec<SandboxUnit>,
    pub shared_domains: Vec<SharedDomainEntry>,
    pub alloc_domains: Vec<AllocDomainEntry>,
    pub wrappers: Vec<WrapperDef>,
    pub redirects: Vec<Redirect>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharedDomainEntry {
    pub id: u64,
    pub participants: Vec<Side>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocDomainEntry {
    pub function: String,
    pub stmt: usize,
    pub domain: u64,
}

pub const SIDECAR_SCHEMA: u32 = 1;

impl InstrumentedProgram {
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            schema: SIDECAR_SCHEMA,
            mode: self.mode,
            containers: self.containers.clone(),
            units: self.units.clone(),
            shared_domains: self
                .plan
                .domains()
                .into_iter()
                .map(|(id, participants)| SharedDomainEntry {
                    id,
                    participants: participants.into_iter().collect(),
                })
                .collect(),
            alloc_domains: self
                .plan
                .assignment
                .iter()
                .map(|((function, stmt), domain)| AllocDomainEntry {
                    function: function.clone(),
                    stmt: *stmt,
                    domain: *domain,
                })
                .collect(),
            wrappers: self.wrappers.clone(),
            redirects: self.redirects.clone(),
        }
    }

    /// The instrumented MiniMIR text.
    pub fn program_text(&self) -> String {
        format_program(&self.program)
    }

    /// Rebuild from the two serialized artifacts.
    pub fn load(program_text: &str, sidecar_json: &str) -> Result<Self, String> {
        let sidecar: Sidecar =
            serde_json::from_str(sidecar_json).map_err(|e| format!("sidecar: {e}"))?;
        if sidecar.schema != SIDECAR_SCHEMA {
            return Err(format!("unsupported sidecar schema {}", sidecar.schema));
        }
        let externals: BTreeSet<String> =
            sidecar.wrappers.iter().map(|w| w.path.clone()).collect();
        let program = crate::ir::parse_program_with_externals(program_text, &externals)
            .map_err(|e| format!("program: {e}"))?;
        let mut plan = SharedDomainPlan::default();
        for entry in &sidecar.shared_domains {
            plan.groups
                .insert(entry.participants.iter().copied().collect(), entry.id);
        }
        for entry in &sidecar.alloc_domains {
            plan.assignment.insert((entry.function.clone(), entry.stmt), entry.domain);
        }
        Ok(InstrumentedProgram {
            program,
            mode: sidecar.mode,
            units: sidecar.units,
            plan,
            containers: sidecar.containers,
            wrappers: sidecar.wrappers,
            redirects: sidecar.redirects,
            warnings: Vec::new(),
        })
    }

    pub fn sidecar_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.sidecar()).expect("sidecar serializes");
        s.push('\n');
        s
    }

    pub fn wrapper(&self, path: &str) -> Option<&WrapperDef> {
        self.wrappers.iter().find(|w| w.path == path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{compute_reach, filter_context, find_alloc_sites, plan_shared_domains};
    use crate::callgraph::{boundary_call_sites, build_call_graph, compute_owners};
    use crate::ir::parse_program;
    use crate::spec::{parse_spec, resolve_units};

    fn pipeline(
        text: &str,
        spec_text: &str,
        mode: Mode,
    ) -> Result<InstrumentedProgram, InstrumentError> {
        let program = parse_program(text).unwrap();
        let spec = parse_spec(spec_text).unwrap();
        let units = resolve_units(&spec, &program).unwrap();
        let cg = build_call_graph(&program);
        let owners = compute_owners(&program, &units);
        let boundary = boundary_call_sites(&cg, &units, &owners).unwrap();
        let reach = filter_context(&program, &compute_reach(&program, &units, &boundary));
        let sites = find_alloc_sites(&reach, &program, &spec.containers);
        let plan = plan_shared_domains(&sites, &boundary, &reach);
        let mut out = instrument(&program, &units, &boundary, &reach, &plan, mode)?;
        out.containers = spec.containers.clone();
        Ok(out)
    }

    const SCALAR: &str = "crate lib;\npub fn lib::f(v1: i32) -> i32 { entry { v0 = v1; return; } }\ncrate app;\npub fn app::main() -> i32 { locals { v1: i32; v2: i32; } entry { v1 = 3; call v2 = lib::f(v1); v0 = v2; return; } }";

    #[test]
    fn scalar_boundary_gets_a_bitwise_wrapper() {
        let out = pipeline(SCALAR, "[functions]\nf = { transient = false }\n", Mode::Copy).unwrap();
        assert_eq!(out.wrappers.len(), 1);
        let w = &out.wrappers[0];
        assert_eq!(w.path, "__wrap::root::lib::f");
        assert_eq!(w.param_plans, vec![CopyAction::Bitwise]);
        assert_eq!(w.ret_plan, CopyAction::Bitwise);
        assert!(!w.transient);
        // The call statement was redirected; nothing else changed.
        let main = out.program.function("app::main").unwrap();
        let call = main.statements().nth(1).unwrap().1;
        match call {
            Statement::Call { callee, .. } => assert_eq!(callee, "__wrap::root::lib::f"),
            other => panic!("expected call, got {other:?}"),
        }
    }

    #[test]
    fn no_units_is_a_structural_no_op() {
        let out = pipeline(SCALAR, "", Mode::Share).unwrap();
        let original = parse_program(SCALAR).unwrap();
        assert_eq!(out.program, original);
        assert!(out.wrappers.is_empty());
        assert!(out.redirects.is_empty());
    }

    #[test]
    fn share_mode_stamps_planned_alloc_sites() {
        let out = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Share,
        )
        .unwrap();
        let main = out.program.function("app::main").unwrap();
        let mut stamped = 0;
        for (_, stmt) in main.statements() {
            if let Statement::Alloc { domain: Some(d), .. } = stmt {
                assert_eq!(*d, crate::analysis::SHARED_ID_BASE);
                stamped += 1;
            }
        }
        assert_eq!(stamped, 2);
        // Copy mode leaves them unstamped.
        let out = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Copy,
        )
        .unwrap();
        let main = out.program.function("app::main").unwrap();
        for (_, stmt) in main.statements() {
            if let Statement::Alloc { domain, .. } = stmt {
                assert!(domain.is_none());
            }
        }
    }

    #[test]
    fn share_mode_passes_covered_vec_params() {
        let out = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Share,
        )
        .unwrap();
        let w = out.wrapper("__wrap::root::app::process").unwrap();
        assert_eq!(w.param_plans, vec![CopyAction::PassShared]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn copy_mode_deep_copies_vec_params() {
        let out = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Copy,
        )
        .unwrap();
        let w = out.wrapper("__wrap::root::app::process").unwrap();
        assert_eq!(
            w.param_plans,
            vec![CopyAction::Referent { inner: Box::new(CopyAction::Bitwise) }]
        );
    }

    #[test]
    fn uncovered_container_kind_falls_back_with_a_warning() {
        let text = "\
crate lib;
pub fn lib::entry(v1: vec<i32>) -> i32 { locals { v2: i32; } entry { v2 = *v1; v0 = v2; return; } }
crate app;
pub fn app::main() -> i32 {
  locals { v1: vec<i32>; v2: i32; }
  entry {
    alloc v1 = ring<i32>;
    call v2 = lib::entry(v1);
    v0 = v2;
    return;
  }
}
";
        let out =
            pipeline(text, "[functions]\nentry = { transient = false }\n", Mode::Share).unwrap();
        let w = &out.wrappers[0];
        assert!(matches!(w.param_plans[0], CopyAction::Referent { .. }));
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("outside the shared-domain plan"));
    }

    #[test]
    fn ref_bearing_containers_are_never_passed_shared() {
        let text = "\
crate lib;
pub fn lib::entry(v1: vec<ref<i32>>) -> i32 { entry { return; } }
crate app;
pub fn app::main() -> i32 {
  locals { v1: vec<ref<i32>>; v2: i32; }
  entry {
    alloc v1 = vec<ref<i32>>;
    call v2 = lib::entry(v1);
    v0 = v2;
    return;
  }
}
";
        let out =
            pipeline(text, "[functions]\nentry = { transient = false }\n", Mode::Share).unwrap();
        let w = &out.wrappers[0];
        assert!(matches!(w.param_plans[0], CopyAction::Referent { .. }));
        assert!(out.warnings.iter().any(|w| w.contains("references")));
    }

    #[test]
    fn recursive_type_in_copy_mode_names_the_parameter() {
        let text = "\
crate lib;
struct lib::Node { next: ref<lib::Node>; val: i32; }
pub fn lib::entry(v1: ref<lib::Node>) -> i32 { entry { return; } }
crate app;
pub fn app::main() -> i32 {
  locals { v1: lib::Node; v2: ref<lib::Node>; v3: i32; }
  entry {
    v2 = &v1;
    call v3 = lib::entry(v2);
    v0 = v3;
    return;
  }
}
";
        let err = pipeline(text, "[functions]\nentry = { transient = false }\n", Mode::Copy)
            .unwrap_err();
        match err {
            InstrumentError::UnsupportedCopyType { entry, param, ty } => {
                assert_eq!(entry, "lib::entry");
                assert_eq!(param, "v1");
                assert_eq!(ty, "lib::Node");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sidecar_round_trips_and_is_deterministic() {
        let out = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Share,
        )
        .unwrap();
        let text = out.program_text();
        let json = out.sidecar_json();
        let loaded = InstrumentedProgram::load(&text, &json).unwrap();
        assert_eq!(loaded.program, out.program);
        assert_eq!(loaded.wrappers, out.wrappers);
        assert_eq!(loaded.plan, out.plan);
        assert_eq!(loaded.mode, out.mode);
        // Re-running the pipeline yields byte-identical artifacts.
        let again = pipeline(
            crate::analysis::tests::ALIAS_BRANCH,
            crate::analysis::tests::ALIAS_BRANCH_SPEC,
            Mode::Share,
        )
        .unwrap();
        assert_eq!(again.program_text(), text);
        assert_eq!(again.sidecar_json(), json);
    }

    #[test]
    fn plain_parse_of_instrumented_text_fails_without_the_sidecar() {
        let out = pipeline(SCALAR, "[functions]\nf = { transient = false }\n", Mode::Copy).unwrap();
        let text = out.program_text();
        assert!(parse_program(&text).is_err());
    }
}
