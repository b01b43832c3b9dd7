//! Abstract syntax for MiniMIR programs.
//!
//! The shape of the language is a small mid-level IR: a program is a set of
//! crates, each holding aggregate (struct) definitions and functions; a
//! function body is a list of labeled statement blocks over indexed, typed
//! locals. Places are a base local plus a chain of deref/field projections.
//!
//! Control flow is deliberately thin: `branch` nondeterministically executes
//! one of two arm blocks and then continues with the following statement,
//! and `return` leaves the function. There are no conditions and no loops in
//! the surface syntax; the analysis is flow-insensitive and the interpreter
//! resolves branches from a seeded decision stream.

use std::collections::BTreeSet;
use std::fmt;

/// Default element count for `alloc` statements that do not name one.
pub const DEFAULT_ALLOC_LEN: u64 = 8;

/// A type in the closed MiniMIR type system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeExpr {
    Bool,
    I32,
    /// Growable container handle; the single built-in heap container shape.
    Vec(Box<TypeExpr>),
    /// Shared reference.
    Ref(Box<TypeExpr>),
    /// Mutable reference. Mutability is carried but the dataflow analysis
    /// does not distinguish it from `Ref`.
    RefMut(Box<TypeExpr>),
    /// User-defined aggregate, by fully qualified path.
    Aggregate(String),
}

impl TypeExpr {
    pub fn vec_of(elem: TypeExpr) -> Self {
        TypeExpr::Vec(Box::new(elem))
    }

    pub fn ref_of(target: TypeExpr) -> Self {
        TypeExpr::Ref(Box::new(target))
    }

    pub fn refmut_of(target: TypeExpr) -> Self {
        TypeExpr::RefMut(Box::new(target))
    }

    /// True for types represented by a single memory cell.
    pub fn is_scalar(&self) -> bool {
        matches!(self, TypeExpr::Bool | TypeExpr::I32)
    }

    /// The referent type for `Ref`/`RefMut`, or `None`.
    pub fn ref_target(&self) -> Option<&TypeExpr> {
        match self {
            TypeExpr::Ref(t) | TypeExpr::RefMut(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Bool => write!(f, "bool"),
            TypeExpr::I32 => write!(f, "i32"),
            TypeExpr::Vec(e) => write!(f, "vec<{e}>"),
            TypeExpr::Ref(t) => write!(f, "ref<{t}>"),
            TypeExpr::RefMut(t) => write!(f, "refmut<{t}>"),
            TypeExpr::Aggregate(p) => write!(f, "{p}"),
        }
    }
}

/// A named product type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateDef {
    /// Fully qualified path, e.g. `app::S`.
    pub path: String,
    /// Ordered fields; names are unique within the aggregate.
    pub fields: Vec<(String, TypeExpr)>,
}

impl AggregateDef {
    pub fn field_type(&self, name: &str) -> Option<&TypeExpr> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Index of a local variable within one function.
///
/// Index 0 is the return slot, 1..=m are the parameters, and higher indices
/// are temporaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalId(pub u32);

impl fmt::Display for LocalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Role a local plays in its function, derived from its index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalRole {
    ReturnSlot,
    Parameter,
    Temporary,
}

/// A declared local: index plus type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalDecl {
    pub id: LocalId,
    pub ty: TypeExpr,
}

/// One projection step applied to a place.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    /// `*p` — follow a reference or step into a vec's element storage.
    Deref,
    /// `p.name` — select an aggregate field.
    Field(String),
}

/// An access path: a base local plus projections applied left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Place {
    pub base: LocalId,
    pub projections: Vec<Projection>,
}

impl Place {
    pub fn local(id: u32) -> Self {
        Place { base: LocalId(id), projections: Vec::new() }
    }

    pub fn field(id: u32, name: &str) -> Self {
        Place { base: LocalId(id), projections: vec![Projection::Field(name.to_string())] }
    }

    pub fn deref(id: u32) -> Self {
        Place { base: LocalId(id), projections: vec![Projection::Deref] }
    }

    /// A "local place" has no deref step and can only name stack storage.
    pub fn is_local_place(&self) -> bool {
        !self.projections.iter().any(|p| matches!(p, Projection::Deref))
    }
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = self.base.to_string();
        for proj in &self.projections {
            match proj {
                Projection::Deref => out = format!("*{out}"),
                Projection::Field(name) => {
                    if out.starts_with('*') {
                        out = format!("({out}).{name}");
                    } else {
                        out = format!("{out}.{name}");
                    }
                }
            }
        }
        f.write_str(&out)
    }
}

/// Right-hand side of an assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rvalue {
    /// Copy the value of a place.
    Use(Place),
    /// Take the address of a place.
    AddrOf(Place),
    /// Integer literal. Literals extend the minimal assignment grammar so
    /// programs can produce observable values.
    LitInt(i32),
    /// Boolean literal.
    LitBool(bool),
}

impl fmt::Display for Rvalue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rvalue::Use(p) => write!(f, "{p}"),
            Rvalue::AddrOf(p) => write!(f, "&{p}"),
            Rvalue::LitInt(n) => write!(f, "{n}"),
            Rvalue::LitBool(b) => write!(f, "{b}"),
        }
    }
}

/// A single MiniMIR statement.
///
/// `alloc`, `syscall`, `rawstore` and `rawload` are extensions over the
/// minimal assignment/call core: `alloc` makes heap-container creation
/// syntactically identifiable, `syscall` feeds the policy engine, and the
/// raw accesses model unchecked memory operations for vulnerability
/// emulation. They carry no type guarantees beyond what the validator can
/// see syntactically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Assign {
        dst: Place,
        src: Rvalue,
    },
    /// Direct call to a fully qualified function.
    Call {
        dst: Place,
        callee: String,
        args: Vec<Place>,
    },
    /// Create a heap container of `len` elements, zero-initialized.
    /// `kind` is the container brand the analysis matches against its
    /// container list ("vec" by default). `domain`, when present, pins the
    /// allocation to a shared data domain; only instrumentation emits it.
    Alloc {
        dst: Place,
        kind: String,
        elem: TypeExpr,
        len: u64,
        domain: Option<u64>,
    },
    /// Invoke a simulated system call. `path_arg` carries a literal path for
    /// the open family.
    Syscall {
        dst: Place,
        name: String,
        args: Vec<Place>,
        path_arg: Option<String>,
    },
    /// Nondeterministically execute one of two arm blocks, then continue
    /// with the next statement.
    Branch {
        left: String,
        right: String,
    },
    Return,
    /// Unchecked store: write `src` at the address held by `base`, displaced
    /// by `offset` cells.
    RawStore {
        base: Place,
        offset: i64,
        src: Place,
    },
    /// Unchecked load from the address held by `base`, displaced by
    /// `offset` cells.
    RawLoad {
        dst: Place,
        base: Place,
        offset: i64,
    },
}

/// A labeled block of statements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Public,
    Private,
}

/// A function definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    /// Fully qualified path; the first segment is the owning crate.
    pub path: String,
    pub visibility: Visibility,
    /// Set when the function is a method of an aggregate.
    pub owner_type: Option<String>,
    /// Number of parameters (locals 1..=param_count).
    pub param_count: u32,
    /// All locals including the return slot and parameters, ordered by index.
    pub locals: Vec<LocalDecl>,
    /// Body blocks; the first block is the entry.
    pub blocks: Vec<Block>,
}

impl FunctionDef {
    pub fn local(&self, id: LocalId) -> Option<&LocalDecl> {
        self.locals.iter().find(|l| l.id == id)
    }

    pub fn role_of(&self, id: LocalId) -> LocalRole {
        if id.0 == 0 {
            LocalRole::ReturnSlot
        } else if id.0 <= self.param_count {
            LocalRole::Parameter
        } else {
            LocalRole::Temporary
        }
    }

    pub fn return_type(&self) -> &TypeExpr {
        &self.local(LocalId(0)).expect("return slot declared").ty
    }

    pub fn block(&self, label: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.label == label)
    }

    /// Iterate statements with their function-wide linear index.
    pub fn statements(&self) -> impl Iterator<Item = (usize, &Statement)> {
        self.blocks.iter().flat_map(|b| b.statements.iter()).enumerate()
    }

    /// Resolve a linear index back to `(block label, in-block index)`.
    pub fn locate(&self, linear: usize) -> Option<(&str, usize)> {
        let mut n = linear;
        for b in &self.blocks {
            if n < b.statements.len() {
                return Some((b.label.as_str(), n));
            }
            n -= b.statements.len();
        }
        None
    }

    pub fn crate_name(&self) -> &str {
        self.path.split("::").next().unwrap_or(&self.path)
    }
}

/// A crate: a named group of aggregates and functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrateDef {
    pub name: String,
    pub aggregates: Vec<AggregateDef>,
    pub functions: Vec<FunctionDef>,
}

/// A whole MiniMIR program.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub crates: Vec<CrateDef>,
}

impl Program {
    pub fn functions(&self) -> impl Iterator<Item = &FunctionDef> {
        self.crates.iter().flat_map(|c| c.functions.iter())
    }

    pub fn aggregates(&self) -> impl Iterator<Item = &AggregateDef> {
        self.crates.iter().flat_map(|c| c.aggregates.iter())
    }

    pub fn function(&self, path: &str) -> Option<&FunctionDef> {
        self.functions().find(|f| f.path == path)
    }

    pub fn aggregate(&self, path: &str) -> Option<&AggregateDef> {
        self.aggregates().find(|a| a.path == path)
    }

    /// The entry point: the unique function whose final path segment is
    /// `main`. Validation enforces existence and uniqueness.
    pub fn entry_path(&self) -> Option<&str> {
        let mut found = None;
        for f in self.functions() {
            if f.path.split("::").last() == Some("main") {
                if found.is_some() {
                    return None;
                }
                found = Some(f.path.as_str());
            }
        }
        found
    }

    /// Module prefixes appearing in function paths of a crate, e.g. `a::m`
    /// for a function `a::m::f`.
    pub fn modules_of(&self, krate: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(c) = self.crates.iter().find(|c| c.name == krate) {
            for f in &c.functions {
                let segs: Vec<&str> = f.path.split("::").collect();
                for k in 2..segs.len() {
                    out.insert(segs[..k - 1].join("::"));
                }
            }
        }
        out.remove(krate);
        out
    }

    /// Cells occupied by a value of type `ty` (aggregates are flattened).
    pub fn cells_of(&self, ty: &TypeExpr) -> u64 {
        match ty {
            TypeExpr::Bool | TypeExpr::I32 | TypeExpr::Ref(_) | TypeExpr::RefMut(_) => 1,
            TypeExpr::Vec(_) => 1, // the handle itself
            TypeExpr::Aggregate(path) => self
                .aggregate(path)
                .map(|a| a.fields.iter().map(|(_, t)| self.cells_of(t)).sum())
                .unwrap_or(1),
        }
    }

    /// Cell offset of `field` inside aggregate `path`.
    pub fn field_offset(&self, path: &str, field: &str) -> Option<u64> {
        let agg = self.aggregate(path)?;
        let mut off = 0;
        for (name, ty) in &agg.fields {
            if name == field {
                return Some(off);
            }
            off += self.cells_of(ty);
        }
        None
    }

    /// Type of `place` in `func`, or a description of the first bad step.
    pub fn place_type(&self, func: &FunctionDef, place: &Place) -> Result<TypeExpr, String> {
        let mut ty = match func.local(place.base) {
            Some(l) => l.ty.clone(),
            None => return Err(format!("undeclared local {}", place.base)),
        };
        for proj in &place.projections {
            match proj {
                Projection::Deref => match ty {
                    TypeExpr::Ref(t) | TypeExpr::RefMut(t) => ty = *t,
                    TypeExpr::Vec(t) => ty = *t,
                    other => return Err(format!("cannot deref value of type {other}")),
                },
                Projection::Field(name) => match ty {
                    TypeExpr::Aggregate(ref path) => match self.aggregate(path) {
                        Some(agg) => match agg.field_type(name) {
                            Some(t) => ty = t.clone(),
                            None => {
                                return Err(format!("no field `{name}` on {path}"));
                            }
                        },
                        None => return Err(format!("unresolved aggregate {path}")),
                    },
                    other => {
                        return Err(format!("field access `.{name}` on non-aggregate {other}"));
                    }
                },
            }
        }
        Ok(ty)
    }
}

/// Statement location: function plus function-wide linear index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmtLoc {
    pub function: String,
    pub index: usize,
}

impl StmtLoc {
    pub fn new(function: &str, index: usize) -> Self {
        StmtLoc { function: function.to_string(), index }
    }
}

impl fmt::Display for StmtLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.function, self.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn place_rendering_parenthesizes_deref_before_field() {
        let p = Place { base: LocalId(3), projections: vec![Projection::Deref, Projection::Field("s".into())] };
        assert_eq!(p.to_string(), "(*v3).s");
        let q = Place { base: LocalId(3), projections: vec![Projection::Field("s".into()), Projection::Deref] };
        assert_eq!(q.to_string(), "*v3.s");
    }

    #[test]
    fn local_place_excludes_deref() {
        assert!(Place::field(1, "s").is_local_place());
        assert!(!Place::deref(1).is_local_place());
    }
}
