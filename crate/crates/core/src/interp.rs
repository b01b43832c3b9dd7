//! MiniMIR interpreter over the simulated isolation runtime.
//!
//! Plain programs execute entirely in the root domain. Instrumented
//! programs drive the domain lifecycle through their wrappers: resolve the
//! target instance, enter, move arguments by copy plan, run the entry
//! function on the sandbox stack, move the return value back, exit, and
//! destroy transient instances. Copy-plan execution runs with transition
//! privileges and is attributed to the monitor's transition layer, not to
//! either side of the crossing.
//!
//! Every nondeterministic branch takes bit `i` of the run's seed on its
//! `i`-th dynamic execution, so a run is a pure function of
//! `(program, sidecar, seed)`.
//!
//! The oracle mode executes a plain program while attributing every heap
//! object access to the logical domain of the executing function (its
//! owning unit, or root). Objects touched by two or more logical domains in
//! a run form the ground-truth cross-boundary set the static analysis must
//! over-approximate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::callgraph::{compute_owners, Owner, Side};
use crate::instrument::{CopyAction, InstrumentedProgram, WrapperDef};
use crate::ir::{
    Block, FunctionDef, LocalId, Place, Program, Projection, Rvalue, Statement, StmtLoc, TypeExpr,
};
use crate::runtime::{
    DomainId, DomainTable, MachineConfig, RuntimeError, SyscallPolicy, Violation,
};
use crate::spec::SandboxUnit;

// ---------------------------------------------------------------------------
// Values and outcomes
// ---------------------------------------------------------------------------

/// A single memory cell's content. Fresh memory reads as `Int(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Int(i32),
    Bool(bool),
    /// Address of a cell; tagged with the owning domain at creation time
    /// for audit. Checks always consult the table, not this tag.
    Addr { addr: u64, owner: u64 },
    /// Container handle: backing store base address and element count.
    VecHandle { addr: u64, len: u64, owner: u64 },
}

impl Default for Value {
    fn default() -> Self {
        Value::Int(0)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Addr { addr, .. } => write!(f, "&{addr}"),
            Value::VecHandle { addr, len, .. } => write!(f, "vec@{addr}x{len}"),
        }
    }
}

impl Value {
    fn as_target_addr(&self) -> Option<u64> {
        match self {
            Value::Addr { addr, .. } => Some(*addr),
            Value::VecHandle { addr, .. } => Some(*addr),
            _ => None,
        }
    }

    fn as_i64(&self) -> i64 {
        match self {
            Value::Int(n) => *n as i64,
            Value::Bool(b) => *b as i64,
            Value::Addr { addr, .. } => *addr as i64,
            Value::VecHandle { addr, .. } => *addr as i64,
        }
    }
}

/// Execution counters for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: u64,
    /// Object duplications performed by copy plans.
    pub copies: u64,
    /// Container (heap-object) duplications only.
    pub heap_object_copies: u64,
    pub cells_copied: u64,
    pub bytes_copied: u64,
    pub domain_switches: u64,
    pub allocs_per_domain: BTreeMap<u64, u64>,
}

/// One trace line. Field order is stable for golden-file tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Create { domain: DomainId, transient: bool },
    Enter { domain: DomainId },
    Exit { from: DomainId, to: DomainId },
    Destroy { domain: DomainId },
    Alloc { domain: DomainId, addr: u64, cells: u64, site: StmtLoc },
    Free { addr: u64 },
    Access { kind: &'static str, context: DomainId, addr: u64 },
    Syscall { context: DomainId, name: String, decision: &'static str, args: String },
    Copy { what: &'static str, cells: u64, to: DomainId },
    Branch { at: StmtLoc, take: u8 },
    Violation { violation: Violation },
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Create { domain, transient } => {
                write!(f, "create domain={domain} transient={transient}")
            }
            TraceEvent::Enter { domain } => write!(f, "enter domain={domain}"),
            TraceEvent::Exit { from, to } => write!(f, "exit from={from} to={to}"),
            TraceEvent::Destroy { domain } => write!(f, "destroy domain={domain}"),
            TraceEvent::Alloc { domain, addr, cells, site } => {
                write!(f, "alloc domain={domain} addr={addr} cells={cells} site={site}")
            }
            TraceEvent::Free { addr } => write!(f, "free addr={addr}"),
            TraceEvent::Access { kind, context, addr } => {
                write!(f, "access kind={kind} context={context} addr={addr}")
            }
            TraceEvent::Syscall { context, name, decision, args } => {
                write!(f, "syscall context={context} name={name} decision={decision} args=[{args}]")
            }
            TraceEvent::Copy { what, cells, to } => {
                write!(f, "copy what={what} cells={cells} to={to}")
            }
            TraceEvent::Branch { at, take } => write!(f, "branch at={at} take={take}"),
            TraceEvent::Violation { violation } => write!(f, "violation {violation}"),
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Completed(Vec<Value>),
    Violated(Violation),
}

/// Final placement of one region, for post-run audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionInfo {
    pub owner: DomainId,
    pub start: u64,
    pub len: u64,
    pub destroyed: bool,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: RunStatus,
    pub trace: Vec<TraceEvent>,
    pub stdout: Vec<String>,
    pub stats: Stats,
    /// Region map at the end of the run.
    pub regions: Vec<RegionInfo>,
}

impl Outcome {
    pub fn completed(&self) -> bool {
        matches!(self.status, RunStatus::Completed(_))
    }

    pub fn violation(&self) -> Option<&Violation> {
        match &self.status {
            RunStatus::Violated(v) => Some(v),
            _ => None,
        }
    }

    pub fn return_rendered(&self) -> String {
        match &self.status {
            RunStatus::Completed(cells) => {
                cells.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
            }
            RunStatus::Violated(v) => format!("violated: {v}"),
        }
    }

    pub fn render_trace(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            writeln!(out, "{e}").unwrap();
        }
        out
    }
}

/// Faults that are not policy violations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterpError {
    #[error("step budget of {0} statements exceeded")]
    StepBudget(u64),
    #[error("runtime fault: {0}")]
    Runtime(#[from] RuntimeError),
    #[error("bad value: {0}")]
    BadValue(String),
}

enum Stop {
    Violation(Violation),
    Error(InterpError),
}

impl From<RuntimeError> for Stop {
    fn from(e: RuntimeError) -> Self {
        Stop::Error(InterpError::Runtime(e))
    }
}

type XResult<T> = Result<T, Stop>;

/// Ground truth from non-enforcing runs: which allocation sites produced
/// objects touched by more than one logical domain.
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    /// Site -> union of sides that touched a crossing object allocated
    /// there (objects with >= 2 distinct sides in a single run).
    pub crossing: BTreeMap<(String, usize), BTreeSet<Side>>,
    /// First seed that observed each crossing site.
    pub first_seen: BTreeMap<(String, usize), u64>,
    /// Branch decisions consumed per seed.
    pub decisions: BTreeMap<u64, Vec<u8>>,
    /// Seeds where the step budget ran out.
    pub inconclusive: Vec<u64>,
}

impl OracleReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((func, stmt), sides) in &self.crossing {
            let s: Vec<String> = sides.iter().map(|x| x.to_string()).collect();
            writeln!(out, "crossing site={func}#{stmt} sides={}", s.join(",")).unwrap();
        }
        for seed in &self.inconclusive {
            writeln!(out, "inconclusive seed={seed}").unwrap();
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Layouts and machine state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct FnLayout {
    offsets: BTreeMap<u32, u64>,
    total: u64,
}

fn layout_of(program: &Program, func: &FunctionDef) -> FnLayout {
    let mut offsets = BTreeMap::new();
    let mut total = 0u64;
    for local in &func.locals {
        offsets.insert(local.id.0, total);
        total += program.cells_of(&local.ty);
    }
    FnLayout { offsets, total }
}

#[derive(Debug, Clone)]
struct HeapObject {
    start: u64,
    len: u64,
    site: (String, usize),
    touched: BTreeSet<Side>,
}

struct OracleState {
    owners: BTreeMap<String, Owner>,
    logical: Vec<Side>,
    objects: Vec<HeapObject>,
}

struct Frame<'p> {
    func: &'p FunctionDef,
    base: u64,
}

/// A referent duplication to mirror back onto the original on exit.
#[derive(Debug, Clone)]
struct CopyBack {
    original: u64,
    copy: u64,
    inner: CopyAction,
    /// Referent type (references) or element type (containers).
    ty: TypeExpr,
    /// Element count for container stores; `None` for plain referents.
    len: Option<u64>,
}

struct Machine<'p> {
    program: &'p Program,
    inst: Option<&'p InstrumentedProgram>,
    policy: SyscallPolicy,
    table: DomainTable,
    mem: Vec<Value>,
    layouts: BTreeMap<String, FnLayout>,
    trace: Vec<TraceEvent>,
    stdout: Vec<String>,
    stats: Stats,
    seed: u64,
    branches_taken: u64,
    decisions: Vec<u8>,
    budget: u64,
    /// Non-zero while executing wrapper copy plans; checks then run with
    /// monitor authority and accesses are excluded from oracle attribution.
    transition_depth: u32,
    oracle: Option<OracleState>,
}

impl<'p> Machine<'p> {
    fn new(
        program: &'p Program,
        inst: Option<&'p InstrumentedProgram>,
        units: &[SandboxUnit],
        seed: u64,
        config: MachineConfig,
        oracle: bool,
    ) -> Self {
        let shared: Vec<(u64, BTreeSet<Side>)> =
            inst.map(|i| i.plan.domains().into_iter().collect()).unwrap_or_default();
        let table = DomainTable::new(config, units.iter().map(|u| u.id), &shared);
        let layouts =
            program.functions().map(|f| (f.path.clone(), layout_of(program, f))).collect();
        let oracle_state = oracle.then(|| OracleState {
            owners: compute_owners(program, units),
            logical: vec![Side::Root],
            objects: Vec::new(),
        });
        Machine {
            program,
            inst,
            policy: SyscallPolicy::from_units(units),
            table,
            mem: Vec::new(),
            layouts,
            trace: Vec::new(),
            stdout: Vec::new(),
            stats: Stats::default(),
            seed,
            branches_taken: 0,
            decisions: Vec::new(),
            budget: config.step_budget,
            transition_depth: 0,
            oracle: oracle_state,
        }
    }

    fn checking_context(&self) -> DomainId {
        if self.transition_depth > 0 {
            DomainId::MONITOR
        } else {
            self.table.current_context()
        }
    }

    fn record_touch(&mut self, addr: u64) {
        if self.transition_depth > 0 {
            return;
        }
        if let Some(state) = &mut self.oracle {
            let side = *state.logical.last().expect("logical stack non-empty");
            for obj in &mut state.objects {
                if addr >= obj.start && addr < obj.start + obj.len {
                    obj.touched.insert(side);
                }
            }
        }
    }

    fn mem_get(&self, addr: u64) -> Value {
        self.mem.get(addr as usize).copied().unwrap_or_default()
    }

    fn mem_set(&mut self, addr: u64, value: Value) {
        let idx = addr as usize;
        if idx >= self.mem.len() {
            self.mem.resize(idx + 1, Value::default());
        }
        self.mem[idx] = value;
    }

    fn mem_zero(&mut self, addr: u64, n: u64) {
        for i in addr..addr + n {
            if (i as usize) < self.mem.len() {
                self.mem[i as usize] = Value::default();
            }
        }
    }

    fn read_cell(&mut self, addr: u64) -> XResult<Value> {
        if self.oracle.is_none() {
            if let Err(v) = self.table.check_access(self.checking_context(), addr, false) {
                return Err(Stop::Violation(v));
            }
        }
        self.record_touch(addr);
        Ok(self.mem_get(addr))
    }

    fn write_cell(&mut self, addr: u64, value: Value) -> XResult<()> {
        if self.oracle.is_none() {
            if let Err(v) = self.table.check_access(self.checking_context(), addr, true) {
                return Err(Stop::Violation(v));
            }
        }
        self.record_touch(addr);
        self.mem_set(addr, value);
        Ok(())
    }

    fn read_cells(&mut self, addr: u64, n: u64) -> XResult<Vec<Value>> {
        (0..n).map(|i| self.read_cell(addr + i)).collect()
    }

    fn write_cells(&mut self, addr: u64, cells: &[Value]) -> XResult<()> {
        for (i, v) in cells.iter().enumerate() {
            self.write_cell(addr + i as u64, *v)?;
        }
        Ok(())
    }

    fn owner_index_of(&self, addr: u64) -> u64 {
        self.table.region_of(addr).map(|r| r.owner.index).unwrap_or(u64::MAX)
    }

    // -----------------------------------------------------------------------
    // Places
    // -----------------------------------------------------------------------

    fn place_addr(&mut self, frame: &Frame<'p>, place: &Place) -> XResult<(u64, TypeExpr)> {
        let layout = &self.layouts[&frame.func.path];
        let local = frame.func.local(place.base).ok_or_else(|| {
            Stop::Error(InterpError::BadValue(format!("undeclared local {}", place.base)))
        })?;
        let mut addr = frame.base + layout.offsets[&place.base.0];
        let mut ty = local.ty.clone();
        for proj in &place.projections {
            match proj {
                Projection::Deref => {
                    let v = self.read_cell(addr)?;
                    let target = v.as_target_addr().ok_or_else(|| {
                        Stop::Error(InterpError::BadValue(format!(
                            "deref of non-address value `{v}` in {}",
                            frame.func.path
                        )))
                    })?;
                    addr = target;
                    ty = match ty {
                        TypeExpr::Ref(t) | TypeExpr::RefMut(t) => *t,
                        TypeExpr::Vec(t) => *t,
                        other => {
                            return Err(Stop::Error(InterpError::BadValue(format!(
                                "deref of value of type {other}"
                            ))))
                        }
                    };
                }
                Projection::Field(name) => {
                    while let TypeExpr::Ref(t) | TypeExpr::RefMut(t) = ty {
                        let v = self.read_cell(addr)?;
                        addr = v.as_target_addr().ok_or_else(|| {
                            Stop::Error(InterpError::BadValue(
                                "field access through non-address".to_string(),
                            ))
                        })?;
                        ty = *t;
                    }
                    let TypeExpr::Aggregate(agg_path) = &ty else {
                        return Err(Stop::Error(InterpError::BadValue(format!(
                            "field `.{name}` on non-aggregate {ty}"
                        ))));
                    };
                    let off = self.program.field_offset(agg_path, name).ok_or_else(|| {
                        Stop::Error(InterpError::BadValue(format!(
                            "no field `{name}` on {agg_path}"
                        )))
                    })?;
                    let fty = self
                        .program
                        .aggregate(agg_path)
                        .and_then(|a| a.field_type(name))
                        .cloned()
                        .expect("field exists");
                    addr += off;
                    ty = fty;
                }
            }
        }
        Ok((addr, ty))
    }

    fn read_place(&mut self, frame: &Frame<'p>, place: &Place) -> XResult<(Vec<Value>, TypeExpr)> {
        let (addr, ty) = self.place_addr(frame, place)?;
        let n = self.program.cells_of(&ty);
        Ok((self.read_cells(addr, n)?, ty))
    }

    // -----------------------------------------------------------------------
    // Execution
    // -----------------------------------------------------------------------

    fn budget_tick(&mut self) -> XResult<()> {
        self.stats.steps += 1;
        if self.stats.steps > self.budget {
            Err(Stop::Error(InterpError::StepBudget(self.budget)))
        } else {
            Ok(())
        }
    }

    fn exec_function(&mut self, path: &str, args: Vec<Vec<Value>>) -> XResult<Vec<Value>> {
        let func = self.program.function(path).ok_or_else(|| {
            Stop::Error(InterpError::BadValue(format!("unknown function `{path}`")))
        })?;
        let layout = self.layouts[path].clone();
        let base = self.table.push_frame(layout.total)?;
        let frame = Frame { func, base };
        for (i, cells) in args.into_iter().enumerate() {
            let off = layout.offsets[&(i as u32 + 1)];
            self.write_cells(base + off, &cells)?;
        }
        self.exec_body(&frame)?;
        let ret_cells = self.program.cells_of(func.return_type());
        let ret = self.read_cells(base + layout.offsets[&0], ret_cells)?;
        self.table.pop_frame(base);
        Ok(ret)
    }

    /// Run a function body. A branch executes one arm block and then
    /// continues after the branch statement; the continuation stack makes
    /// that explicit so deeply branching runs cannot exhaust the call stack.
    fn exec_body(&mut self, frame: &Frame<'p>) -> XResult<()> {
        let func = frame.func;
        let mut conts: Vec<(&'p Block, usize)> = vec![(&func.blocks[0], 0)];
        while let Some((block, idx)) = conts.pop() {
            let Some(stmt) = block.statements.get(idx) else { continue };
            self.budget_tick()?;
            let linear =
                func.statements().position(|(_, s)| std::ptr::eq(s, stmt)).unwrap_or(0);
            let loc = StmtLoc::new(&func.path, linear);
            match stmt {
                Statement::Return => return Ok(()),
                Statement::Branch { left, right } => {
                    let take = self.next_decision();
                    let label = if take == 0 { left } else { right };
                    self.trace.push(TraceEvent::Branch { at: loc.clone(), take });
                    let target = func.block(label).ok_or_else(|| {
                        Stop::Error(InterpError::BadValue(format!("missing block `{label}`")))
                    })?;
                    conts.push((block, idx + 1));
                    conts.push((target, 0));
                }
                other => {
                    if let Err(stop) = self.exec_statement(frame, other, &loc) {
                        return Err(attach_location(stop, &loc));
                    }
                    conts.push((block, idx + 1));
                }
            }
        }
        Ok(())
    }

    fn next_decision(&mut self) -> u8 {
        let i = self.branches_taken;
        self.branches_taken += 1;
        let take = if i < 64 { ((self.seed >> i) & 1) as u8 } else { 0 };
        self.decisions.push(take);
        take
    }

    fn exec_statement(
        &mut self,
        frame: &Frame<'p>,
        stmt: &'p Statement,
        loc: &StmtLoc,
    ) -> XResult<()> {
        match stmt {
            Statement::Assign { dst, src } => {
                let (daddr, dty) = self.place_addr(frame, dst)?;
                match src {
                    Rvalue::Use(p) => {
                        let (cells, _) = self.read_place(frame, p)?;
                        let n = (self.program.cells_of(&dty) as usize).min(cells.len());
                        self.write_cells(daddr, &cells[..n])?;
                    }
                    Rvalue::AddrOf(p) => {
                        let (addr, _) = self.place_addr(frame, p)?;
                        let owner = self.owner_index_of(addr);
                        self.write_cell(daddr, Value::Addr { addr, owner })?;
                    }
                    Rvalue::LitInt(n) => self.write_cell(daddr, Value::Int(*n))?,
                    Rvalue::LitBool(b) => self.write_cell(daddr, Value::Bool(*b))?,
                }
            }
            Statement::Alloc { dst, elem, len, domain, .. } => {
                let target = match domain {
                    Some(id) => self.table.domain(*id).ok_or_else(|| {
                        Stop::Error(InterpError::BadValue(format!(
                            "alloc names unknown shared domain {id}"
                        )))
                    })?,
                    None => self.table.current_context(),
                };
                let elem_cells = self.program.cells_of(elem);
                let size = len * elem_cells;
                // The allocator runs in the monitor and zeroes fresh storage.
                let addr = self.table.domain_alloc(target, size)?;
                self.mem_zero(addr, size);
                *self.stats.allocs_per_domain.entry(target.index).or_default() += 1;
                self.trace.push(TraceEvent::Alloc {
                    domain: target,
                    addr,
                    cells: size,
                    site: loc.clone(),
                });
                if let Some(state) = &mut self.oracle {
                    let side = *state.logical.last().expect("logical stack");
                    state.objects.push(HeapObject {
                        start: addr,
                        len: size,
                        site: (loc.function.clone(), loc.index),
                        touched: [side].into_iter().collect(),
                    });
                }
                let (daddr, _) = self.place_addr(frame, dst)?;
                self.write_cell(daddr, Value::VecHandle { addr, len: *len, owner: target.index })?;
            }
            Statement::Call { dst, callee, args } => {
                let wrapper = self.inst.and_then(|i| i.wrapper(callee)).cloned();
                match wrapper {
                    Some(w) => self.exec_wrapper(frame, &w, args, dst)?,
                    None => {
                        let mut arg_cells = Vec::new();
                        for arg in args {
                            arg_cells.push(self.read_place(frame, arg)?.0);
                        }
                        if let Some(state) = &mut self.oracle {
                            let side = next_logical_side(state, callee);
                            state.logical.push(side);
                        }
                        let ret = self.exec_function(callee, arg_cells);
                        if let Some(state) = &mut self.oracle {
                            state.logical.pop();
                        }
                        let ret = ret?;
                        let (daddr, _) = self.place_addr(frame, dst)?;
                        self.write_cells(daddr, &ret)?;
                    }
                }
            }
            Statement::Syscall { dst, name, args, path_arg } => {
                let mut rendered = Vec::new();
                let mut arg_vals = Vec::new();
                for arg in args {
                    let (cells, _) = self.read_place(frame, arg)?;
                    for c in &cells {
                        rendered.push(c.to_string());
                        arg_vals.push(c.as_i64());
                    }
                }
                if let Some(p) = path_arg {
                    rendered.push(format!("\"{p}\""));
                }
                let context = self.table.current_context();
                let decision: Result<(), Violation> = if self.oracle.is_some() {
                    Ok(())
                } else {
                    self.policy
                        .filter_syscall(context, name, &arg_vals, path_arg.as_deref())
                        .map_err(|e| Stop::Error(InterpError::Runtime(e)))?
                };
                match decision {
                    Ok(()) => {
                        self.trace.push(TraceEvent::Syscall {
                            context,
                            name: name.clone(),
                            decision: "allow",
                            args: rendered.join(", "),
                        });
                        if name == "write" {
                            self.stdout.push(rendered.join(" "));
                        }
                        let (daddr, _) = self.place_addr(frame, dst)?;
                        self.write_cell(daddr, Value::Int(0))?;
                    }
                    Err(mut v) => {
                        self.trace.push(TraceEvent::Syscall {
                            context,
                            name: name.clone(),
                            decision: "deny",
                            args: rendered.join(", "),
                        });
                        v.location = Some(loc.clone());
                        return Err(Stop::Violation(v));
                    }
                }
            }
            Statement::RawStore { base, offset, src } => {
                let (bcells, _) = self.read_place(frame, base)?;
                let target = raw_target(&bcells[0], *offset)?;
                let (scells, _) = self.read_place(frame, src)?;
                self.trace.push(TraceEvent::Access {
                    kind: "rawstore",
                    context: self.table.current_context(),
                    addr: target,
                });
                self.write_cell(target, scells[0])?;
            }
            Statement::RawLoad { dst, base, offset } => {
                let (bcells, _) = self.read_place(frame, base)?;
                let target = raw_target(&bcells[0], *offset)?;
                self.trace.push(TraceEvent::Access {
                    kind: "rawload",
                    context: self.table.current_context(),
                    addr: target,
                });
                let v = self.read_cell(target)?;
                let (daddr, _) = self.place_addr(frame, dst)?;
                self.write_cell(daddr, v)?;
            }
            Statement::Return | Statement::Branch { .. } => unreachable!("handled in exec_block"),
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Wrappers
    // -----------------------------------------------------------------------

    fn exec_wrapper(
        &mut self,
        frame: &Frame<'p>,
        wrapper: &WrapperDef,
        args: &[Place],
        dst: &Place,
    ) -> XResult<()> {
        // Argument values are read in the caller's own context.
        let mut arg_cells = Vec::new();
        for arg in args {
            arg_cells.push(self.read_place(frame, arg)?.0);
        }
        let caller_domain = self.table.current_context();

        // Domain resolution runs with monitor authority: sandboxed callers
        // request creation rather than performing it themselves.
        let before = self.table.address_space_end();
        let target = self
            .table
            .create_sandbox_domain(DomainId::MONITOR, wrapper.unit, wrapper.transient)?
            .map_err(Stop::Violation)?;
        if self.table.address_space_end() != before {
            self.trace.push(TraceEvent::Create { domain: target, transient: wrapper.transient });
        }

        self.stats.domain_switches += 1;
        self.table.enter_domain(target)?.map_err(Stop::Violation)?;
        self.trace.push(TraceEvent::Enter { domain: target });

        let entry_fn = self.program.function(&wrapper.entry).ok_or_else(|| {
            Stop::Error(InterpError::BadValue(format!("missing entry `{}`", wrapper.entry)))
        })?;
        let param_tys: Vec<TypeExpr> = (1..=entry_fn.param_count)
            .map(|i| entry_fn.local(LocalId(i)).expect("param").ty.clone())
            .collect();
        let ret_ty = entry_fn.return_type().clone();

        // Move arguments per plan, with transition privileges.
        self.transition_depth += 1;
        let mut moved_args = Vec::new();
        let mut copybacks: Vec<CopyBack> = Vec::new();
        let moved = (|| -> XResult<()> {
            for (i, cells) in arg_cells.iter().enumerate() {
                let moved = self.copy_value(
                    &wrapper.param_plans[i],
                    &param_tys[i],
                    cells,
                    target,
                    &mut copybacks,
                    true,
                    &mut Vec::new(),
                )?;
                moved_args.push(moved);
            }
            Ok(())
        })();
        self.transition_depth -= 1;
        moved?;

        // The entry function runs on the sandbox's own stack.
        let ret = self.exec_function(&wrapper.entry, moved_args)?;

        // Return value and referent write-backs move before leaving the
        // domain, again with transition privileges. Argument copies are
        // temporaries; they are released once written back.
        self.transition_depth += 1;
        let out = (|| -> XResult<Vec<Value>> {
            let mut sink = Vec::new();
            let moved = self.copy_value(
                &wrapper.ret_plan,
                &ret_ty,
                &ret,
                caller_domain,
                &mut sink,
                false,
                &mut Vec::new(),
            )?;
            for cb in copybacks.iter().rev() {
                self.copy_back(cb)?;
            }
            for cb in copybacks.iter().rev() {
                self.table.domain_free(cb.copy)?;
                self.trace.push(TraceEvent::Free { addr: cb.copy });
            }
            Ok(moved)
        })();
        self.transition_depth -= 1;
        let moved_ret = out?;

        let restored = self.table.exit_domain()?;
        self.trace.push(TraceEvent::Exit { from: target, to: restored });
        if wrapper.transient {
            self.table.destroy_transient(target)?;
            self.trace.push(TraceEvent::Destroy { domain: target });
        }

        let (daddr, _) = self.place_addr(frame, dst)?;
        self.write_cells(daddr, &moved_ret)?;
        Ok(())
    }

    /// Move one value into `target` per its plan, duplicating referents.
    /// With `collect` set, each duplication is recorded for write-back.
    #[allow(clippy::too_many_arguments)]
    fn copy_value(
        &mut self,
        plan: &CopyAction,
        ty: &TypeExpr,
        cells: &[Value],
        target: DomainId,
        copybacks: &mut Vec<CopyBack>,
        collect: bool,
        visiting: &mut Vec<u64>,
    ) -> XResult<Vec<Value>> {
        match plan {
            CopyAction::Bitwise | CopyAction::PassShared => Ok(cells.to_vec()),
            CopyAction::Aggregate { fields } => {
                let TypeExpr::Aggregate(agg_path) = ty else {
                    return Err(Stop::Error(InterpError::BadValue(
                        "aggregate plan on non-aggregate value".to_string(),
                    )));
                };
                let agg = self.program.aggregate(agg_path).expect("aggregate exists").clone();
                let mut out = Vec::new();
                let mut off = 0usize;
                for ((_, fty), (_, fplan)) in agg.fields.iter().zip(fields) {
                    let n = self.program.cells_of(fty) as usize;
                    let moved = self.copy_value(
                        fplan,
                        fty,
                        &cells[off..off + n],
                        target,
                        copybacks,
                        collect,
                        visiting,
                    )?;
                    out.extend(moved);
                    off += n;
                }
                Ok(out)
            }
            CopyAction::Referent { inner } => {
                let v = cells[0];
                let base = v.as_target_addr().ok_or_else(|| {
                    Stop::Error(InterpError::BadValue(format!(
                        "copy plan expected an indirection, found `{v}`"
                    )))
                })?;
                if visiting.contains(&base) {
                    return Err(Stop::Error(InterpError::BadValue(
                        "cyclic reference structure in boundary copy".to_string(),
                    )));
                }
                visiting.push(base);
                let result = match v {
                    Value::Addr { addr, .. } => {
                        let tty = referent_type(ty)?;
                        let n = self.program.cells_of(&tty);
                        let src = self.read_cells(addr, n)?;
                        let moved =
                            self.copy_value(inner, &tty, &src, target, copybacks, collect, visiting)?;
                        let new_addr = self.alloc_copy(target, n)?;
                        self.write_cells(new_addr, &moved)?;
                        self.stats.copies += 1;
                        self.stats.cells_copied += n;
                        self.trace.push(TraceEvent::Copy {
                            what: "referent",
                            cells: n,
                            to: target,
                        });
                        if collect {
                            copybacks.push(CopyBack {
                                original: addr,
                                copy: new_addr,
                                inner: (**inner).clone(),
                                ty: tty,
                                len: None,
                            });
                        }
                        Ok(vec![Value::Addr { addr: new_addr, owner: target.index }])
                    }
                    Value::VecHandle { addr, len, .. } => {
                        let ety = element_type(ty)?;
                        let ecells = self.program.cells_of(&ety);
                        let total = len * ecells;
                        let new_addr = self.alloc_copy(target, total.max(1))?;
                        for i in 0..len {
                            let src = self.read_cells(addr + i * ecells, ecells)?;
                            let moved = self
                                .copy_value(inner, &ety, &src, target, copybacks, collect, visiting)?;
                            self.write_cells(new_addr + i * ecells, &moved)?;
                        }
                        self.stats.copies += 1;
                        self.stats.heap_object_copies += 1;
                        self.stats.cells_copied += total;
                        self.trace.push(TraceEvent::Copy { what: "vec", cells: total, to: target });
                        if collect {
                            copybacks.push(CopyBack {
                                original: addr,
                                copy: new_addr,
                                inner: (**inner).clone(),
                                ty: ety,
                                len: Some(len),
                            });
                        }
                        Ok(vec![Value::VecHandle { addr: new_addr, len, owner: target.index }])
                    }
                    _ => unreachable!("as_target_addr filtered scalars"),
                };
                visiting.pop();
                result
            }
        }
    }

    fn alloc_copy(&mut self, target: DomainId, cells: u64) -> XResult<u64> {
        let addr = self.table.domain_alloc(target, cells)?;
        self.mem_zero(addr, cells);
        Ok(addr)
    }

    /// Mirror a referent duplication back onto the original object.
    fn copy_back(&mut self, cb: &CopyBack) -> XResult<()> {
        match cb.len {
            Some(len) => {
                let ecells = self.program.cells_of(&cb.ty);
                for i in 0..len {
                    self.copy_back_cells(
                        cb.original + i * ecells,
                        cb.copy + i * ecells,
                        &cb.inner,
                        &cb.ty,
                    )?;
                }
                Ok(())
            }
            None => {
                let (inner, ty) = (cb.inner.clone(), cb.ty.clone());
                self.copy_back_cells(cb.original, cb.copy, &inner, &ty)
            }
        }
    }

    fn copy_back_cells(
        &mut self,
        orig: u64,
        copy: u64,
        plan: &CopyAction,
        ty: &TypeExpr,
    ) -> XResult<()> {
        match plan {
            CopyAction::Bitwise => {
                let v = self.read_cell(copy)?;
                self.write_cell(orig, v)?;
                Ok(())
            }
            CopyAction::PassShared => Ok(()),
            CopyAction::Aggregate { fields } => {
                let TypeExpr::Aggregate(agg_path) = ty else {
                    return Ok(());
                };
                let agg = self.program.aggregate(agg_path).expect("aggregate").clone();
                let mut off = 0u64;
                for ((_, fty), (_, fplan)) in agg.fields.iter().zip(fields) {
                    self.copy_back_cells(orig + off, copy + off, fplan, fty)?;
                    off += self.program.cells_of(fty);
                }
                Ok(())
            }
            CopyAction::Referent { inner } => {
                let ov = self.read_cell(orig)?;
                let cv = self.read_cell(copy)?;
                match (ov, cv) {
                    (Value::Addr { addr: oa, .. }, Value::Addr { addr: ca, .. }) => {
                        let tty = referent_type(ty)?;
                        self.copy_back_cells(oa, ca, inner, &tty)
                    }
                    (Value::VecHandle { addr: oa, len, .. }, Value::VecHandle { addr: ca, .. }) => {
                        let ety = element_type(ty)?;
                        let ecells = self.program.cells_of(&ety);
                        for i in 0..len {
                            self.copy_back_cells(oa + i * ecells, ca + i * ecells, inner, &ety)?;
                        }
                        Ok(())
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

fn attach_location(stop: Stop, loc: &StmtLoc) -> Stop {
    match stop {
        Stop::Violation(mut v) => {
            if v.location.is_none() {
                v.location = Some(loc.clone());
            }
            Stop::Violation(v)
        }
        other => other,
    }
}

fn raw_target(base: &Value, offset: i64) -> XResult<u64> {
    let addr = base.as_target_addr().ok_or_else(|| {
        Stop::Error(InterpError::BadValue(format!("raw access base holds `{base}`, not an address")))
    })?;
    let target = addr as i128 + offset as i128;
    // Anything below zero is certainly unmapped; fold it onto address 0,
    // which the access check rejects as wild.
    Ok(target.max(0) as u64)
}

fn referent_type(ty: &TypeExpr) -> XResult<TypeExpr> {
    match ty {
        TypeExpr::Ref(t) | TypeExpr::RefMut(t) => Ok((**t).clone()),
        other => Err(Stop::Error(InterpError::BadValue(format!(
            "expected a reference type, got {other}"
        )))),
    }
}

fn element_type(ty: &TypeExpr) -> XResult<TypeExpr> {
    match ty {
        TypeExpr::Vec(t) => Ok((**t).clone()),
        other => Err(Stop::Error(InterpError::BadValue(format!(
            "expected a container type, got {other}"
        )))),
    }
}

fn next_logical_side(state: &OracleState, callee: &str) -> Side {
    let current = *state.logical.last().expect("logical stack");
    match state.owners.get(callee) {
        Some(Owner::Unit(u)) => Side::Unit(*u),
        Some(Owner::Cloned(_)) | None => current,
        Some(Owner::Root) => Side::Root,
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

fn finish(machine: Machine<'_>, status: RunStatus) -> Outcome {
    let mut stats = machine.stats;
    stats.bytes_copied = stats.cells_copied * 8;
    let regions = machine
        .table
        .regions()
        .iter()
        .map(|r| RegionInfo { owner: r.owner, start: r.start, len: r.len, destroyed: r.destroyed })
        .collect();
    Outcome { status, trace: machine.trace, stdout: machine.stdout, stats, regions }
}

fn drive(mut machine: Machine<'_>, entry: &str) -> Result<Outcome, InterpError> {
    let result = machine.exec_function(entry, Vec::new());
    match result {
        Ok(ret) => Ok(finish(machine, RunStatus::Completed(ret))),
        Err(Stop::Violation(v)) => {
            machine.trace.push(TraceEvent::Violation { violation: v.clone() });
            Ok(finish(machine, RunStatus::Violated(v)))
        }
        Err(Stop::Error(e)) => Err(e),
    }
}

/// Execute an instrumented program.
pub fn run(
    inst: &InstrumentedProgram,
    seed: u64,
    config: MachineConfig,
) -> Result<Outcome, InterpError> {
    let entry = inst
        .program
        .entry_path()
        .ok_or_else(|| InterpError::BadValue("no entry function".to_string()))?
        .to_string();
    let machine = Machine::new(&inst.program, Some(inst), &inst.units, seed, config, false);
    drive(machine, &entry)
}

/// Execute a plain (uninstrumented) program. Everything runs in the root
/// domain and no wrappers exist, but memory checks and the syscall policy
/// still apply to the root context.
pub fn run_plain(
    program: &Program,
    seed: u64,
    config: MachineConfig,
) -> Result<Outcome, InterpError> {
    let entry = program
        .entry_path()
        .ok_or_else(|| InterpError::BadValue("no entry function".to_string()))?
        .to_string();
    let machine = Machine::new(program, None, &[], seed, config, false);
    drive(machine, &entry)
}

/// Number of branch statements in a program.
pub fn branch_count(program: &Program) -> usize {
    program
        .functions()
        .flat_map(|f| f.statements())
        .filter(|(_, s)| matches!(s, Statement::Branch { .. }))
        .count()
}

/// Exhaustive seed list when the branch count is at most 6, else the first
/// `fallback` seeds.
pub fn seeds_for(program: &Program, fallback: u64) -> Vec<u64> {
    let k = branch_count(program);
    if k <= 6 {
        (0..(1u64 << k)).collect()
    } else {
        (0..fallback).collect()
    }
}

/// Run the dynamic oracle over `seeds`: non-enforcing execution recording
/// which logical domains touch each heap object.
pub fn run_oracle(
    program: &Program,
    units: &[SandboxUnit],
    seeds: &[u64],
    config: MachineConfig,
) -> Result<OracleReport, InterpError> {
    let entry = program
        .entry_path()
        .ok_or_else(|| InterpError::BadValue("no entry function".to_string()))?
        .to_string();
    let mut report = OracleReport::default();
    for &seed in seeds {
        let mut machine = Machine::new(program, None, units, seed, config, true);
        let result = machine.exec_function(&entry, Vec::new());
        match result {
            Err(Stop::Error(InterpError::StepBudget(_))) => {
                report.inconclusive.push(seed);
                continue;
            }
            Err(Stop::Error(e)) => return Err(e),
            Err(Stop::Violation(_)) | Ok(_) => {}
        }
        report.decisions.insert(seed, machine.decisions.clone());
        if let Some(state) = machine.oracle {
            for obj in state.objects {
                if obj.touched.len() >= 2 {
                    report.first_seen.entry(obj.site.clone()).or_insert(seed);
                    report
                        .crossing
                        .entry(obj.site)
                        .or_default()
                        .extend(obj.touched.iter().copied());
                }
            }
        }
    }
    Ok(report)
}
