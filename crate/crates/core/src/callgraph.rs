//! Whole-program call graph and boundary classification.
//!
//! MiniMIR has only direct, fully qualified calls, so the call graph is
//! closed by construction: one edge per `call` statement. Against a set of
//! resolved sandbox units, each edge is classified as internal to the root
//! domain, internal to a unit, or a boundary crossing that needs a wrapper.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Program, Statement};
use crate::spec::SandboxUnit;

/// One call edge: caller function, statement index, callee function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CallEdge {
    pub caller: String,
    pub stmt: usize,
    pub callee: String,
}

/// The whole-program call graph.
#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    /// Function paths, sorted.
    pub nodes: Vec<String>,
    /// Edges in deterministic program order.
    pub edges: Vec<CallEdge>,
}

/// Build the call graph of a validated program.
pub fn build_call_graph(program: &Program) -> CallGraph {
    let mut nodes: Vec<String> = program.functions().map(|f| f.path.clone()).collect();
    nodes.sort();
    let mut edges = Vec::new();
    for func in program.functions() {
        for (idx, stmt) in func.statements() {
            if let Statement::Call { callee, .. } = stmt {
                edges.push(CallEdge { caller: func.path.clone(), stmt: idx, callee: callee.clone() });
            }
        }
    }
    CallGraph { nodes, edges }
}

impl CallGraph {
    pub fn callees_of<'a>(&'a self, path: &'a str) -> impl Iterator<Item = &'a CallEdge> + 'a {
        self.edges.iter().filter(move |e| e.caller == path)
    }

    /// Functions participating in recursion (self-loops or cycles).
    pub fn recursive_functions(&self) -> Vec<String> {
        // Tarjan would be overkill at this scale; iterate reachability.
        let mut out = Vec::new();
        for node in &self.nodes {
            let mut stack: Vec<&str> =
                self.callees_of(node).map(|e| e.callee.as_str()).collect();
            let mut seen = std::collections::BTreeSet::new();
            let mut hit = false;
            while let Some(f) = stack.pop() {
                if f == node {
                    hit = true;
                    break;
                }
                if seen.insert(f) {
                    stack.extend(self.callees_of(f).map(|e| e.callee.as_str()));
                }
            }
            if hit {
                out.push(node.clone());
            }
        }
        out
    }

    /// Plain-text edge list, one `caller -> callee` line per edge.
    pub fn render_edge_list(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(out, "{} -> {} [stmt {}]", e.caller, e.callee, e.stmt).unwrap();
        }
        out
    }

    /// DOT digraph rendering.
    pub fn render_dot(&self) -> String {
        let mut out = String::from("digraph callgraph {\n");
        for n in &self.nodes {
            writeln!(out, "  \"{n}\";").unwrap();
        }
        for e in &self.edges {
            writeln!(out, "  \"{}\" -> \"{}\";", e.caller, e.callee).unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Which side of a boundary an actor is on: the trusted root domain or a
/// specific sandbox unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Root,
    Unit(u32),
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Root => write!(f, "root"),
            Side::Unit(u) => write!(f, "u{u}"),
        }
    }
}

/// Domain ownership of a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Owner {
    Root,
    Unit(u32),
    /// Logically duplicated into each of these units.
    Cloned(Vec<u32>),
}

/// Map every function to the domain whose code it is.
pub fn compute_owners(program: &Program, units: &[SandboxUnit]) -> BTreeMap<String, Owner> {
    let mut owners = BTreeMap::new();
    for func in program.functions() {
        let mut clone_of: Vec<u32> = Vec::new();
        let mut core_of: Option<u32> = None;
        for unit in units {
            if unit.members.contains(&func.path) {
                core_of = Some(unit.id);
            } else if unit.cloned.contains(&func.path) {
                clone_of.push(unit.id);
            }
        }
        let owner = match (core_of, clone_of.is_empty()) {
            (Some(u), _) => Owner::Unit(u),
            (None, false) => Owner::Cloned(clone_of),
            (None, true) => Owner::Root,
        };
        owners.insert(func.path.clone(), owner);
    }
    owners
}

/// Crossing direction of a boundary site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    RootToUnit,
    UnitToUnit,
}

/// A call site that crosses a domain boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySite {
    pub edge: CallEdge,
    pub caller_side: Side,
    pub callee_unit: u32,
    pub direction: Direction,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundaryError {
    #[error("{caller}#{stmt}: call to `{callee}` from outside unit `{unit}` targets a non-entry member")]
    NonEntryTarget { caller: String, stmt: usize, callee: String, unit: String },
    #[error("{caller}#{stmt}: sandboxed code calls root-owned function `{callee}`; calls out of a sandbox into the root domain are not supported")]
    EscapesToRoot { caller: String, stmt: usize, callee: String },
}

/// Classify every call edge against the resolved units.
///
/// An edge is a boundary site exactly when the caller's side differs from
/// the callee's unit; intra-unit and root-internal edges are excluded. A
/// caller cloned into several units yields one site per owning unit.
pub fn boundary_call_sites(
    graph: &CallGraph,
    units: &[SandboxUnit],
    owners: &BTreeMap<String, Owner>,
) -> Result<Vec<BoundarySite>, BoundaryError> {
    let mut sites = Vec::new();
    for edge in &graph.edges {
        let caller_sides: Vec<Side> = match owners.get(&edge.caller) {
            Some(Owner::Root) | None => vec![Side::Root],
            Some(Owner::Unit(u)) => vec![Side::Unit(*u)],
            Some(Owner::Cloned(us)) => us.iter().map(|u| Side::Unit(*u)).collect(),
        };
        let callee_owner = owners.get(&edge.callee).cloned().unwrap_or(Owner::Root);
        for caller_side in caller_sides {
            match (&callee_owner, caller_side) {
                (Owner::Unit(v), side) if side != Side::Unit(*v) => {
                    let unit = &units[*v as usize];
                    if !unit.entries.contains(&edge.callee) {
                        return Err(BoundaryError::NonEntryTarget {
                            caller: edge.caller.clone(),
                            stmt: edge.stmt,
                            callee: edge.callee.clone(),
                            unit: unit.decl.path.clone(),
                        });
                    }
                    let direction = match side {
                        Side::Root => Direction::RootToUnit,
                        Side::Unit(_) => Direction::UnitToUnit,
                    };
                    sites.push(BoundarySite {
                        edge: edge.clone(),
                        caller_side: side,
                        callee_unit: *v,
                        direction,
                    });
                }
                (Owner::Unit(_), _) => {} // intra-unit call
                (Owner::Root, Side::Unit(_)) => {
                    return Err(BoundaryError::EscapesToRoot {
                        caller: edge.caller.clone(),
                        stmt: edge.stmt,
                        callee: edge.callee.clone(),
                    });
                }
                (Owner::Root, Side::Root) => {} // root-internal call
                (Owner::Cloned(us), Side::Unit(u)) if us.contains(&u) => {} // within the copy
                (Owner::Cloned(_), _) => {
                    // A cloned helper is never reachable from a side that
                    // does not own a copy; resolution guarantees this.
                    unreachable!("cloned helper called from non-owning side");
                }
            }
        }
    }
    Ok(sites)
}
