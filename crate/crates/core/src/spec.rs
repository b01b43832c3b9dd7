//! Sandbox specification: the policy file naming which functions, types,
//! and crates to isolate, and its resolution against a program.
//!
//! The file format is sectioned key-value text (see
//! `docs/sandbox-spec-format.md`):
//!
//! ```text
//! containers = ["vec"]          // optional, top-level
//! [functions]                   // or [types] / [crates]
//! foo = { transient = true }
//! bar = { transient = false, syscalls = ["write"] }
//! ```
//!
//! Resolution turns each declaration into a [`SandboxUnit`] with a concrete
//! entry-function set (the unit's public interface) and member set, plus the
//! private helpers that are logically cloned into the unit's domain because
//! they are reachable only from inside it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Program, Statement, Visibility};

/// Default container-kind list used when the spec file names none.
pub fn default_containers() -> Vec<String> {
    vec!["vec".to_string()]
}

/// What kind of program element a unit declaration names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Function,
    Type,
    Crate,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitKind::Function => write!(f, "function"),
            UnitKind::Type => write!(f, "type"),
            UnitKind::Crate => write!(f, "crate"),
        }
    }
}

/// One declared sandbox unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitDecl {
    pub kind: UnitKind,
    /// Path as written; may be a short name resolved against the program.
    pub path: String,
    /// When true, every boundary call enters a freshly created instance.
    pub transient: bool,
    /// Syscall names this unit's code may invoke.
    pub syscalls: Vec<String>,
}

/// Parsed sandbox specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxSpec {
    /// Units in declaration order.
    pub units: Vec<UnitDecl>,
    /// Container kinds treated as heap objects by the analysis.
    pub containers: Vec<String>,
}

impl SandboxSpec {
    pub fn empty() -> Self {
        SandboxSpec { units: Vec::new(), containers: default_containers() }
    }

    /// Syscall allow-list per unit name.
    pub fn syscall_allow(&self) -> BTreeMap<&str, &[String]> {
        self.units.iter().map(|u| (u.path.as_str(), u.syscalls.as_slice())).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("line {line}: {message}")]
    Malformed { line: u32, message: String },
    #[error("duplicate unit `{0}`")]
    DuplicateUnit(String),
    #[error("units `{inner}` and `{outer}` overlap: `{inner}` is a member of the declared {kind} unit")]
    Overlap { inner: String, outer: String, kind: UnitKind },
    #[error("unresolved {kind} path `{0}`", kind = .1)]
    Unresolved(String, UnitKind),
    #[error("ambiguous short name `{name}`: matches {matches}; refine with a qualified path")]
    Ambiguous { name: String, matches: String },
    #[error("unit `{0}` would sandbox the entry function; the root domain cannot be its own sandbox")]
    SandboxesEntry(String),
    #[error("resolved member sets of `{0}` and `{1}` overlap on `{2}`")]
    MemberOverlap(String, String, String),
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse a sandbox specification file.
///
/// Declaration order is preserved. Syntactic overlap between declared units
/// (a path living under a declared crate/type unit) is rejected here;
/// semantic overlap is re-checked after resolution.
pub fn parse_spec(text: &str) -> Result<SandboxSpec, SpecError> {
    let mut units: Vec<UnitDecl> = Vec::new();
    let mut containers: Option<Vec<String>> = None;
    let mut section: Option<UnitKind> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i as u32 + 1;
        let line = match raw.find("//") {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| SpecError::Malformed {
                line: lineno,
                message: "section header missing `]`".to_string(),
            })?;
            section = Some(match name.trim() {
                "functions" => UnitKind::Function,
                "types" => UnitKind::Type,
                "crates" => UnitKind::Crate,
                other => {
                    return Err(SpecError::Malformed {
                        line: lineno,
                        message: format!(
                            "unknown section `[{other}]`; expected [functions], [types] or [crates]"
                        ),
                    })
                }
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SpecError::Malformed {
            line: lineno,
            message: "expected `name = { ... }` or `containers = [ ... ]`".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key == "containers" && section.is_none() {
            containers = Some(parse_string_list(value, lineno)?);
            continue;
        }
        let kind = section.ok_or_else(|| SpecError::Malformed {
            line: lineno,
            message: format!("entry `{key}` appears before any section header"),
        })?;
        let body = value
            .strip_prefix('{')
            .and_then(|v| v.strip_suffix('}'))
            .ok_or_else(|| SpecError::Malformed {
                line: lineno,
                message: format!("entry `{key}` must be of the form `{key} = {{ ... }}`"),
            })?;
        let mut transient: Option<bool> = None;
        let mut syscalls: Vec<String> = Vec::new();
        for field in split_top_level(body) {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let (fk, fv) = field.split_once('=').ok_or_else(|| SpecError::Malformed {
                line: lineno,
                message: format!("malformed field `{field}` in `{key}`"),
            })?;
            match fk.trim() {
                "transient" => {
                    transient = Some(match fv.trim() {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(SpecError::Malformed {
                                line: lineno,
                                message: format!(
                                    "transient must be `true` or `false`, got `{other}`"
                                ),
                            })
                        }
                    })
                }
                "syscalls" => syscalls = parse_string_list(fv.trim(), lineno)?,
                other => {
                    return Err(SpecError::Malformed {
                        line: lineno,
                        message: format!("unknown field `{other}` in `{key}`"),
                    })
                }
            }
        }
        let transient = transient.ok_or_else(|| SpecError::Malformed {
            line: lineno,
            message: format!("unit `{key}` lacks the required `transient` field"),
        })?;
        if units.iter().any(|u| u.path == key) {
            return Err(SpecError::DuplicateUnit(key.to_string()));
        }
        units.push(UnitDecl { kind, path: key.to_string(), transient, syscalls });
    }

    // Syntactic non-overlap: no declared unit may live under a declared
    // crate/type unit.
    for inner in &units {
        for outer in &units {
            if std::ptr::eq(inner, outer) || outer.kind == UnitKind::Function {
                continue;
            }
            if inner.path.starts_with(&format!("{}::", outer.path)) {
                return Err(SpecError::Overlap {
                    inner: inner.path.clone(),
                    outer: outer.path.clone(),
                    kind: outer.kind,
                });
            }
        }
    }

    Ok(SandboxSpec { units, containers: containers.unwrap_or_else(default_containers) })
}

/// Split `a = b, c = [d, e]` on top-level commas only.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_string_list(value: &str, line: u32) -> Result<Vec<String>, SpecError> {
    let inner = value
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| SpecError::Malformed {
            line,
            message: format!("expected `[\"a\", \"b\"]`, got `{value}`"),
        })?;
    let mut out = Vec::new();
    for item in inner.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let s = item
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .ok_or_else(|| SpecError::Malformed {
                line,
                message: format!("list items must be quoted strings, got `{item}`"),
            })?;
        out.push(s.to_string());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Resolution
// ---------------------------------------------------------------------------

/// A resolved sandbox unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxUnit {
    /// Stable small id, assigned in declaration order.
    pub id: u32,
    pub decl: UnitDecl,
    /// The unit's public interface: functions callable from outside.
    pub entries: BTreeSet<String>,
    /// Declared (syntactic) member functions, entries included.
    pub members: BTreeSet<String>,
    /// Helpers outside the declared path that only this unit's code can
    /// reach; each such unit gets its own logical copy.
    pub cloned: BTreeSet<String>,
}

impl SandboxUnit {
    /// Everything that executes inside this unit's domain.
    pub fn owns(&self, path: &str) -> bool {
        self.members.contains(path) || self.cloned.contains(path)
    }
}

/// Resolve a parsed spec against a program.
pub fn resolve_units(spec: &SandboxSpec, program: &Program) -> Result<Vec<SandboxUnit>, SpecError> {
    let entry = program.entry_path().unwrap_or_default().to_string();
    let mut units = Vec::new();
    for (i, decl) in spec.units.iter().enumerate() {
        let (entries, members) = resolve_decl(decl, program)?;
        units.push(SandboxUnit {
            id: i as u32,
            decl: decl.clone(),
            entries,
            members,
            cloned: BTreeSet::new(),
        });
    }

    // Declared member sets of distinct units must be pairwise disjoint.
    for a in 0..units.len() {
        for b in a + 1..units.len() {
            if let Some(shared) = units[a].members.intersection(&units[b].members).next() {
                return Err(SpecError::MemberOverlap(
                    units[a].decl.path.clone(),
                    units[b].decl.path.clone(),
                    shared.clone(),
                ));
            }
        }
    }
    for u in &units {
        if u.members.contains(&entry) {
            return Err(SpecError::SandboxesEntry(u.decl.path.clone()));
        }
    }

    assign_cloned_helpers(program, &entry, &mut units);
    Ok(units)
}

fn resolve_decl(
    decl: &UnitDecl,
    program: &Program,
) -> Result<(BTreeSet<String>, BTreeSet<String>), SpecError> {
    match decl.kind {
        UnitKind::Function => {
            let path = resolve_path(
                &decl.path,
                program.functions().map(|f| f.path.as_str()),
                decl.kind,
            )?;
            let set: BTreeSet<String> = [path].into_iter().collect();
            Ok((set.clone(), set))
        }
        UnitKind::Type => {
            let path = resolve_path(
                &decl.path,
                program.aggregates().map(|a| a.path.as_str()),
                decl.kind,
            )?;
            let members: BTreeSet<String> = program
                .functions()
                .filter(|f| f.owner_type.as_deref() == Some(path.as_str()))
                .map(|f| f.path.clone())
                .collect();
            let entries: BTreeSet<String> = program
                .functions()
                .filter(|f| {
                    f.owner_type.as_deref() == Some(path.as_str())
                        && f.visibility == Visibility::Public
                })
                .map(|f| f.path.clone())
                .collect();
            if members.is_empty() {
                return Err(SpecError::Unresolved(decl.path.clone(), decl.kind));
            }
            Ok((entries, members))
        }
        UnitKind::Crate => {
            // Crate names or module prefixes are both accepted.
            let prefix = format!("{}::", decl.path);
            let members: BTreeSet<String> = program
                .functions()
                .filter(|f| f.path.starts_with(&prefix))
                .map(|f| f.path.clone())
                .collect();
            if members.is_empty() {
                return Err(SpecError::Unresolved(decl.path.clone(), decl.kind));
            }
            let entries: BTreeSet<String> = program
                .functions()
                .filter(|f| f.path.starts_with(&prefix) && f.visibility == Visibility::Public)
                .map(|f| f.path.clone())
                .collect();
            Ok((entries, members))
        }
    }
}

fn resolve_path<'a>(
    name: &str,
    candidates: impl Iterator<Item = &'a str>,
    kind: UnitKind,
) -> Result<String, SpecError> {
    let suffix = format!("::{name}");
    let matches: Vec<&str> =
        candidates.filter(|p| *p == name || p.ends_with(&suffix)).collect();
    match matches.len() {
        0 => Err(SpecError::Unresolved(name.to_string(), kind)),
        1 => Ok(matches[0].to_string()),
        _ => Err(SpecError::Ambiguous { name: name.to_string(), matches: matches.join(", ") }),
    }
}

/// Compute, per unit, the helpers reachable only from inside it.
///
/// A helper reachable from root-side code stays in the root domain; a helper
/// reachable from several units (but not from root) is cloned into each.
fn assign_cloned_helpers(program: &Program, entry: &str, units: &mut [SandboxUnit]) {
    let all_core: BTreeSet<String> =
        units.iter().flat_map(|u| u.members.iter().cloned()).collect();
    let callees = |path: &str| -> Vec<String> {
        program
            .function(path)
            .map(|f| {
                f.statements()
                    .filter_map(|(_, s)| match s {
                        Statement::Call { callee, .. } => Some(callee.clone()),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    };

    // Root-side reachability stops at unit boundaries.
    let mut root_reach: BTreeSet<String> = BTreeSet::new();
    let mut work = vec![entry.to_string()];
    while let Some(f) = work.pop() {
        if !root_reach.insert(f.clone()) {
            continue;
        }
        for g in callees(&f) {
            if !all_core.contains(&g) {
                work.push(g);
            }
        }
    }

    for u in units.iter_mut() {
        let mut seen: BTreeSet<String> = u.members.clone();
        let mut work: Vec<String> = u.members.iter().cloned().collect();
        while let Some(f) = work.pop() {
            for g in callees(&f) {
                if all_core.contains(&g) || !seen.insert(g.clone()) {
                    continue;
                }
                work.push(g);
            }
        }
        u.cloned = seen
            .difference(&u.members)
            .filter(|f| !root_reach.contains(*f))
            .cloned()
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    /// The canonical two-function spec: one transient unit, one persistent.
    const BASIC_SPEC: &str = "[functions] // can be [types] or [crates]\nfoo = { transient = true }\nbar = { transient = false }\n";

    #[test]
    fn basic_two_function_spec_parses() {
        let spec = parse_spec(BASIC_SPEC).unwrap();
        assert_eq!(spec.units.len(), 2);
        assert_eq!(spec.units[0].path, "foo");
        assert!(spec.units[0].transient);
        assert_eq!(spec.units[0].kind, UnitKind::Function);
        assert_eq!(spec.units[1].path, "bar");
        assert!(!spec.units[1].transient);
        assert_eq!(spec.containers, vec!["vec"]);
    }

    #[test]
    fn empty_file_gives_vacuous_spec_with_default_containers() {
        let spec = parse_spec("").unwrap();
        assert!(spec.units.is_empty());
        assert_eq!(spec.containers, vec!["vec"]);
    }

    #[test]
    fn function_under_declared_crate_is_an_overlap() {
        let text = "[crates]\nc = { transient = false }\n[functions]\nc::foo = { transient = true }\n";
        match parse_spec(text).unwrap_err() {
            SpecError::Overlap { inner, outer, .. } => {
                assert_eq!(inner, "c::foo");
                assert_eq!(outer, "c");
            }
            other => panic!("expected overlap, got {other}"),
        }
    }

    #[test]
    fn duplicate_names_and_bad_booleans_are_rejected() {
        let dup = "[functions]\nfoo = { transient = true }\nfoo = { transient = false }\n";
        assert!(matches!(parse_spec(dup).unwrap_err(), SpecError::DuplicateUnit(_)));
        let bad = "[functions]\nfoo = { transient = yes }\n";
        assert!(matches!(parse_spec(bad).unwrap_err(), SpecError::Malformed { .. }));
        let bad_header = "[modules]\nfoo = { transient = true }\n";
        assert!(matches!(parse_spec(bad_header).unwrap_err(), SpecError::Malformed { .. }));
    }

    #[test]
    fn syscalls_and_containers_fields_parse() {
        let text = "containers = [\"vec\", \"ring\"]\n[functions]\nfoo = { transient = false, syscalls = [\"write\", \"open\"] }\n";
        let spec = parse_spec(text).unwrap();
        assert_eq!(spec.containers, vec!["vec", "ring"]);
        assert_eq!(spec.units[0].syscalls, vec!["write", "open"]);
    }

    fn two_crate_program() -> Program {
        parse_program(
            "crate c;\npub fn c::foo() -> i32 { locals { v1: i32; } entry { call v1 = c::bar(); v0 = v1; return; } }\nfn c::bar() -> i32 { entry { return; } }\ncrate app;\npub fn app::main() -> i32 { locals { v1: i32; } entry { call v1 = c::foo(); return; } }",
        )
        .unwrap()
    }

    #[test]
    fn crate_unit_members_include_private_functions() {
        let program = two_crate_program();
        let spec = parse_spec("[crates]\nc = { transient = false }\n").unwrap();
        let units = resolve_units(&spec, &program).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].id, 0);
        let entries: Vec<&str> = units[0].entries.iter().map(|s| s.as_str()).collect();
        assert_eq!(entries, vec!["c::foo"]);
        let members: Vec<&str> = units[0].members.iter().map(|s| s.as_str()).collect();
        assert_eq!(members, vec!["c::bar", "c::foo"]);
    }

    #[test]
    fn sandboxing_the_entry_function_is_rejected() {
        let program = two_crate_program();
        let spec = parse_spec("[functions]\nmain = { transient = false }\n").unwrap();
        assert!(matches!(
            resolve_units(&spec, &program).unwrap_err(),
            SpecError::SandboxesEntry(_)
        ));
        let spec = parse_spec("[crates]\napp = { transient = false }\n").unwrap();
        assert!(matches!(
            resolve_units(&spec, &program).unwrap_err(),
            SpecError::SandboxesEntry(_)
        ));
    }

    #[test]
    fn type_unit_entries_are_its_public_methods() {
        let program = parse_program(
            "crate g;\nstruct g::Set { n: i32; }\npub fn g::Set::insert(v1: ref<g::Set>) -> bool on g::Set { entry { return; } }\npub fn g::Set::contains(v1: ref<g::Set>) -> bool on g::Set { entry { return; } }\npub fn g::Set::len(v1: ref<g::Set>) -> i32 on g::Set { entry { return; } }\nfn g::Set::grow(v1: ref<g::Set>) -> bool on g::Set { entry { return; } }\nfn g::Set::probe(v1: ref<g::Set>) -> bool on g::Set { entry { return; } }\ncrate app;\npub fn app::main() -> i32 { entry { return; } }",
        )
        .unwrap();
        let spec = parse_spec("[types]\nSet = { transient = false }\n").unwrap();
        let units = resolve_units(&spec, &program).unwrap();
        assert_eq!(units[0].entries.len(), 3);
        assert_eq!(units[0].members.len(), 5);
    }

    #[test]
    fn ambiguous_short_name_is_a_hard_error() {
        let program = parse_program(
            "crate a;\npub fn a::f() -> i32 { entry { return; } }\ncrate b;\npub fn b::f() -> i32 { entry { return; } }\ncrate app;\npub fn app::main() -> i32 { entry { return; } }",
        )
        .unwrap();
        let spec = parse_spec("[functions]\nf = { transient = false }\n").unwrap();
        assert!(matches!(resolve_units(&spec, &program).unwrap_err(), SpecError::Ambiguous { .. }));
    }

    #[test]
    fn helper_reachable_only_from_unit_is_cloned_into_it() {
        let program = parse_program(
            "crate util;\npub fn util::mix() -> i32 { entry { return; } }\ncrate a;\npub fn a::f() -> i32 { locals { v1: i32; } entry { call v1 = util::mix(); v0 = v1; return; } }\ncrate app;\npub fn app::main() -> i32 { locals { v1: i32; } entry { call v1 = a::f(); return; } }",
        )
        .unwrap();
        let spec = parse_spec("[functions]\na::f = { transient = false }\n").unwrap();
        let units = resolve_units(&spec, &program).unwrap();
        assert!(units[0].cloned.contains("util::mix"));

        // If root also calls the helper, it stays in the root domain.
        let program = parse_program(
            "crate util;\npub fn util::mix() -> i32 { entry { return; } }\ncrate a;\npub fn a::f() -> i32 { locals { v1: i32; } entry { call v1 = util::mix(); v0 = v1; return; } }\ncrate app;\npub fn app::main() -> i32 { locals { v1: i32; v2: i32; } entry { call v1 = a::f(); call v2 = util::mix(); return; } }",
        )
        .unwrap();
        let units = resolve_units(&spec, &program).unwrap();
        assert!(units[0].cloned.is_empty());
    }
}
