//! Structural and type validation for MiniMIR programs.
//!
//! Validation never fails hard; it returns a list of diagnostics, each
//! carrying the function path and statement index it refers to. An empty
//! list means every invariant holds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::ast::*;

/// Classification of a diagnostic. The parser promotes the resolution
/// categories to hard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagCategory {
    UnresolvedLocal,
    UnresolvedFunction,
    UnresolvedAggregate,
    IllTypedProjection,
    TypeMismatch,
    Visibility,
    Arity,
    Entry,
    Duplicate,
    Alloc,
    Syscall,
    Branch,
    RawOp,
    RecursiveType,
}

/// One validation finding.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub category: DiagCategory,
    pub function: Option<String>,
    pub stmt: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    fn global(category: DiagCategory, message: String) -> Self {
        Diagnostic { category, function: None, stmt: None, message }
    }

    fn at(category: DiagCategory, function: &str, stmt: usize, message: String) -> Self {
        Diagnostic { category, function: Some(function.to_string()), stmt: Some(stmt), message }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.function, self.stmt) {
            (Some(func), Some(i)) => write!(f, "{func}#{i}: {}", self.message),
            (Some(func), None) => write!(f, "{func}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// Names the simulator's syscall table recognizes.
pub const KNOWN_SYSCALLS: &[&str] = &[
    "write",
    "open",
    "mmap",
    "mmap_wx",
    "mprotect",
    "mremap",
    "pkey_alloc",
    "pkey_free",
    "pkey_mprotect",
];

/// Validate `p` against all structural invariants. Empty result = valid.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    validate_program_internal(p, &BTreeSet::new())
}

/// Validation with a set of external callee paths (sidecar-defined wrapper
/// functions) that should not be reported as unresolved.
pub fn validate_program_internal(p: &Program, externals: &BTreeSet<String>) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    check_duplicates(p, &mut diags);
    check_aggregates(p, &mut diags);
    check_entry(p, &mut diags);
    for func in p.functions() {
        check_function(p, func, externals, &mut diags);
    }
    diags
}

fn check_duplicates(p: &Program, diags: &mut Vec<Diagnostic>) {
    let mut seen_fn = BTreeSet::new();
    for f in p.functions() {
        if !seen_fn.insert(f.path.clone()) {
            diags.push(Diagnostic::global(
                DiagCategory::Duplicate,
                format!("duplicate function definition `{}`", f.path),
            ));
        }
    }
    let mut seen_agg = BTreeSet::new();
    for a in p.aggregates() {
        if !seen_agg.insert(a.path.clone()) {
            diags.push(Diagnostic::global(
                DiagCategory::Duplicate,
                format!("duplicate aggregate definition `{}`", a.path),
            ));
        }
    }
    let mut seen_crate = BTreeSet::new();
    for c in &p.crates {
        if !seen_crate.insert(c.name.clone()) {
            diags.push(Diagnostic::global(
                DiagCategory::Duplicate,
                format!("duplicate crate `{}`", c.name),
            ));
        }
    }
}

fn check_aggregates(p: &Program, diags: &mut Vec<Diagnostic>) {
    for agg in p.aggregates() {
        let mut names = BTreeSet::new();
        for (name, ty) in &agg.fields {
            if !names.insert(name.clone()) {
                diags.push(Diagnostic::global(
                    DiagCategory::Duplicate,
                    format!("duplicate field `{name}` in `{}`", agg.path),
                ));
            }
            check_type_resolves(p, ty, &agg.path, diags);
        }
    }
    // Value-field recursion makes type nesting infinite; recursion through
    // vec/ref indirections is allowed.
    let mut states: BTreeMap<&str, u8> = BTreeMap::new(); // 1 = visiting, 2 = done
    for agg in p.aggregates() {
        visit_value_fields(p, &agg.path, &mut states, diags);
    }
}

fn check_type_resolves(p: &Program, ty: &TypeExpr, context: &str, diags: &mut Vec<Diagnostic>) {
    match ty {
        TypeExpr::Aggregate(path) => {
            if p.aggregate(path).is_none() {
                diags.push(Diagnostic::global(
                    DiagCategory::UnresolvedAggregate,
                    format!("unresolved aggregate `{path}` referenced from `{context}`"),
                ));
            }
        }
        TypeExpr::Vec(t) | TypeExpr::Ref(t) | TypeExpr::RefMut(t) => {
            check_type_resolves(p, t, context, diags)
        }
        _ => {}
    }
}

fn visit_value_fields<'p>(
    p: &'p Program,
    path: &'p str,
    states: &mut BTreeMap<&'p str, u8>,
    diags: &mut Vec<Diagnostic>,
) {
    match states.get(path) {
        Some(1) => {
            diags.push(Diagnostic::global(
                DiagCategory::RecursiveType,
                format!("aggregate `{path}` is recursive through value fields"),
            ));
            return;
        }
        Some(2) => return,
        _ => {}
    }
    states.insert(path, 1);
    if let Some(agg) = p.aggregate(path) {
        for (_, ty) in &agg.fields {
            // Only direct aggregate-typed fields extend the value chain.
            if let TypeExpr::Aggregate(inner) = ty {
                if let Some(inner_key) = p.aggregates().find(|a| &a.path == inner).map(|a| a.path.as_str()) {
                    visit_value_fields(p, inner_key, states, diags);
                }
            }
        }
    }
    states.insert(path, 2);
}

fn check_entry(p: &Program, diags: &mut Vec<Diagnostic>) {
    let mains: Vec<&FunctionDef> =
        p.functions().filter(|f| f.path.split("::").last() == Some("main")).collect();
    match mains.len() {
        0 => diags.push(Diagnostic::global(
            DiagCategory::Entry,
            "no entry function: expected exactly one `main`".to_string(),
        )),
        1 => {
            let main = mains[0];
            if main.visibility != Visibility::Public {
                diags.push(Diagnostic::global(
                    DiagCategory::Entry,
                    format!("entry function `{}` must be public", main.path),
                ));
            }
            if main.param_count != 0 {
                diags.push(Diagnostic::global(
                    DiagCategory::Entry,
                    format!("entry function `{}` must take no parameters", main.path),
                ));
            }
        }
        _ => diags.push(Diagnostic::global(
            DiagCategory::Entry,
            format!(
                "multiple entry candidates: {}",
                mains.iter().map(|f| f.path.as_str()).collect::<Vec<_>>().join(", ")
            ),
        )),
    }
}

fn check_function(
    p: &Program,
    func: &FunctionDef,
    externals: &BTreeSet<String>,
    diags: &mut Vec<Diagnostic>,
) {
    // Local table shape: dense indices, return slot present.
    let mut ids = BTreeSet::new();
    for l in &func.locals {
        if !ids.insert(l.id.0) {
            diags.push(Diagnostic::global(
                DiagCategory::Duplicate,
                format!("duplicate local {} in `{}`", l.id, func.path),
            ));
        }
    }
    if !ids.contains(&0) {
        diags.push(Diagnostic::global(
            DiagCategory::UnresolvedLocal,
            format!("function `{}` lacks a return slot v0", func.path),
        ));
        return;
    }
    if let Some(owner) = &func.owner_type {
        if p.aggregate(owner).is_none() {
            diags.push(Diagnostic::global(
                DiagCategory::UnresolvedAggregate,
                format!("owner type `{owner}` of `{}` is unresolved", func.path),
            ));
        }
    }
    for l in &func.locals {
        check_type_resolves(p, &l.ty, &func.path, diags);
    }

    let labels: BTreeSet<&str> = func.blocks.iter().map(|b| b.label.as_str()).collect();
    if labels.len() != func.blocks.len() {
        diags.push(Diagnostic::global(
            DiagCategory::Duplicate,
            format!("duplicate block label in `{}`", func.path),
        ));
    }

    for (idx, stmt) in func.statements() {
        check_statement(p, func, idx, stmt, &labels, externals, diags);
    }
}

fn place_ty(
    p: &Program,
    func: &FunctionDef,
    idx: usize,
    place: &Place,
    diags: &mut Vec<Diagnostic>,
) -> Option<TypeExpr> {
    if func.local(place.base).is_none() {
        diags.push(Diagnostic::at(
            DiagCategory::UnresolvedLocal,
            &func.path,
            idx,
            format!("undeclared local {}", place.base),
        ));
        return None;
    }
    match p.place_type(func, place) {
        Ok(ty) => Some(ty),
        Err(msg) => {
            diags.push(Diagnostic::at(DiagCategory::IllTypedProjection, &func.path, idx, msg));
            None
        }
    }
}

fn types_compatible(dst: &TypeExpr, src: &TypeExpr) -> bool {
    match (dst, src) {
        (TypeExpr::Ref(a), TypeExpr::Ref(b))
        | (TypeExpr::Ref(a), TypeExpr::RefMut(b))
        | (TypeExpr::RefMut(a), TypeExpr::Ref(b))
        | (TypeExpr::RefMut(a), TypeExpr::RefMut(b)) => types_compatible(a, b),
        (TypeExpr::Vec(a), TypeExpr::Vec(b)) => types_compatible(a, b),
        _ => dst == src,
    }
}

#[allow(clippy::too_many_arguments)]
fn check_statement(
    p: &Program,
    func: &FunctionDef,
    idx: usize,
    stmt: &Statement,
    labels: &BTreeSet<&str>,
    externals: &BTreeSet<String>,
    diags: &mut Vec<Diagnostic>,
) {
    match stmt {
        Statement::Assign { dst, src } => {
            let dty = place_ty(p, func, idx, dst, diags);
            match src {
                Rvalue::Use(sp) => {
                    let sty = place_ty(p, func, idx, sp, diags);
                    if let (Some(d), Some(s)) = (dty, sty) {
                        if !types_compatible(&d, &s) {
                            diags.push(Diagnostic::at(
                                DiagCategory::TypeMismatch,
                                &func.path,
                                idx,
                                format!("assignment of {s} to place of type {d}"),
                            ));
                        }
                    }
                }
                Rvalue::AddrOf(sp) => {
                    let sty = place_ty(p, func, idx, sp, diags);
                    if let (Some(d), Some(s)) = (dty, sty) {
                        let ok = matches!(&d, TypeExpr::Ref(t) | TypeExpr::RefMut(t)
                            if types_compatible(t, &s));
                        if !ok {
                            diags.push(Diagnostic::at(
                                DiagCategory::TypeMismatch,
                                &func.path,
                                idx,
                                format!("address-of {s} assigned to place of type {d}"),
                            ));
                        }
                    }
                }
                Rvalue::LitInt(_) => {
                    if let Some(d) = dty {
                        if d != TypeExpr::I32 {
                            diags.push(Diagnostic::at(
                                DiagCategory::TypeMismatch,
                                &func.path,
                                idx,
                                format!("integer literal assigned to place of type {d}"),
                            ));
                        }
                    }
                }
                Rvalue::LitBool(_) => {
                    if let Some(d) = dty {
                        if d != TypeExpr::Bool {
                            diags.push(Diagnostic::at(
                                DiagCategory::TypeMismatch,
                                &func.path,
                                idx,
                                format!("boolean literal assigned to place of type {d}"),
                            ));
                        }
                    }
                }
            }
        }
        Statement::Call { dst, callee, args } => {
            if !callee.contains("::") {
                diags.push(Diagnostic::at(
                    DiagCategory::UnresolvedFunction,
                    &func.path,
                    idx,
                    format!("callee `{callee}` is not fully qualified"),
                ));
                return;
            }
            if externals.contains(callee) {
                // Wrapper callee defined by the sidecar; argument typing is
                // checked against the wrapped entry at load time.
                return;
            }
            let target = match p.function(callee) {
                Some(t) => t,
                None => {
                    diags.push(Diagnostic::at(
                        DiagCategory::UnresolvedFunction,
                        &func.path,
                        idx,
                        format!("unresolved function path `{callee}`"),
                    ));
                    return;
                }
            };
            if target.visibility == Visibility::Private
                && target.crate_name() != func.crate_name()
            {
                diags.push(Diagnostic::at(
                    DiagCategory::Visibility,
                    &func.path,
                    idx,
                    format!("call to private function `{callee}` across crates"),
                ));
            }
            if args.len() as u32 != target.param_count {
                diags.push(Diagnostic::at(
                    DiagCategory::Arity,
                    &func.path,
                    idx,
                    format!(
                        "`{callee}` expects {} argument(s), got {}",
                        target.param_count,
                        args.len()
                    ),
                ));
            }
            for (i, arg) in args.iter().enumerate() {
                let aty = place_ty(p, func, idx, arg, diags);
                let pty = target.local(LocalId(i as u32 + 1)).map(|l| l.ty.clone());
                if let (Some(a), Some(pt)) = (aty, pty) {
                    if !types_compatible(&pt, &a) {
                        diags.push(Diagnostic::at(
                            DiagCategory::TypeMismatch,
                            &func.path,
                            idx,
                            format!("argument {} of `{callee}`: expected {pt}, got {a}", i + 1),
                        ));
                    }
                }
            }
            let dty = place_ty(p, func, idx, dst, diags);
            if let Some(d) = dty {
                if !types_compatible(&d, target.return_type()) {
                    diags.push(Diagnostic::at(
                        DiagCategory::TypeMismatch,
                        &func.path,
                        idx,
                        format!("`{callee}` returns {}, assigned to {d}", target.return_type()),
                    ));
                }
            }
        }
        Statement::Alloc { dst, elem, len, .. } => {
            check_type_resolves(p, elem, &func.path, diags);
            if let Some(d) = place_ty(p, func, idx, dst, diags) {
                let expected = TypeExpr::vec_of(elem.clone());
                if !types_compatible(&d, &expected) {
                    diags.push(Diagnostic::at(
                        DiagCategory::Alloc,
                        &func.path,
                        idx,
                        format!("alloc of {expected} into place of type {d}"),
                    ));
                }
            }
            if *len == 0 {
                diags.push(Diagnostic::at(
                    DiagCategory::Alloc,
                    &func.path,
                    idx,
                    "alloc length must be at least 1".to_string(),
                ));
            }
        }
        Statement::Syscall { dst, name, args, .. } => {
            if !KNOWN_SYSCALLS.contains(&name.as_str()) {
                diags.push(Diagnostic::at(
                    DiagCategory::Syscall,
                    &func.path,
                    idx,
                    format!("unknown syscall `{name}`"),
                ));
            }
            if let Some(d) = place_ty(p, func, idx, dst, diags) {
                if d != TypeExpr::I32 {
                    diags.push(Diagnostic::at(
                        DiagCategory::Syscall,
                        &func.path,
                        idx,
                        format!("syscall result must land in an i32 place, got {d}"),
                    ));
                }
            }
            for arg in args {
                place_ty(p, func, idx, arg, diags);
            }
        }
        Statement::Branch { left, right } => {
            for label in [left, right] {
                if !labels.contains(label.as_str()) {
                    diags.push(Diagnostic::at(
                        DiagCategory::Branch,
                        &func.path,
                        idx,
                        format!("branch target `{label}` is not a block of `{}`", func.path),
                    ));
                }
            }
        }
        Statement::Return => {}
        Statement::RawStore { base, src, .. } => {
            place_ty(p, func, idx, base, diags);
            if let Some(s) = place_ty(p, func, idx, src, diags) {
                if p.cells_of(&s) != 1 {
                    diags.push(Diagnostic::at(
                        DiagCategory::RawOp,
                        &func.path,
                        idx,
                        format!("rawstore source must be a single-cell value, got {s}"),
                    ));
                }
            }
        }
        Statement::RawLoad { dst, base, .. } => {
            place_ty(p, func, idx, base, diags);
            if let Some(d) = place_ty(p, func, idx, dst, diags) {
                if p.cells_of(&d) != 1 {
                    diags.push(Diagnostic::at(
                        DiagCategory::RawOp,
                        &func.path,
                        idx,
                        format!("rawload destination must be a single-cell place, got {d}"),
                    ));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parser::parse_program;

    #[test]
    fn field_projection_on_i32_is_flagged() {
        let text = "crate app;\npub fn app::main() -> i32 { locals { v1: i32; v2: i32; } entry { v2 = v1.s; return; } }";
        // Promoted to a parse error because it is a resolution-level defect.
        assert!(parse_program(text).is_err());
    }

    #[test]
    fn cross_crate_private_call_is_diagnosed() {
        let text = "crate lib;\nfn lib::helper() -> i32 { entry { return; } }\ncrate app;\npub fn app::main() -> i32 { locals { v1: i32; } entry { call v1 = lib::helper(); return; } }";
        let p = parse_program(text).unwrap();
        let diags = validate_program(&p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].category, DiagCategory::Visibility);
        assert_eq!(diags[0].function.as_deref(), Some("app::main"));
    }

    #[test]
    fn visibility_matrix_by_enumeration() {
        // Two crates, caller in `a`: every (callee crate, callee visibility)
        // combination; a diagnostic appears exactly when the callee is
        // private and lives in the other crate.
        for callee_crate in ["a", "b"] {
            for vis in ["pub ", ""] {
                let text = format!(
                    "crate b;\n{vis}fn b::f() -> i32 {{ entry {{ return; }} }}\ncrate a;\n{vis}fn a::f() -> i32 {{ entry {{ return; }} }}\npub fn a::main() -> i32 {{ locals {{ v1: i32; }} entry {{ call v1 = {callee_crate}::f(); return; }} }}"
                );
                let p = parse_program(&text).unwrap();
                let diags = validate_program(&p);
                let expect_diag = callee_crate == "b" && vis.is_empty();
                assert_eq!(
                    diags.iter().any(|d| d.category == DiagCategory::Visibility),
                    expect_diag,
                    "crate={callee_crate} vis={vis:?}"
                );
            }
        }
    }

    #[test]
    fn recursive_value_fields_are_rejected_but_indirect_recursion_is_fine() {
        let bad = "crate app;\nstruct app::A { x: app::A; }\npub fn app::main() -> i32 { entry { return; } }";
        let p = parse_program(bad).unwrap();
        assert!(validate_program(&p).iter().any(|d| d.category == DiagCategory::RecursiveType));

        let ok = "crate app;\nstruct app::A { x: ref<app::A>; n: i32; }\npub fn app::main() -> i32 { entry { return; } }";
        let p = parse_program(ok).unwrap();
        assert!(validate_program(&p).is_empty());
    }
}
