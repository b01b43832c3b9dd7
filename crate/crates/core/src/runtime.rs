//! Simulated in-process isolation substrate.
//!
//! Isolation is enforced by software checks over a simulated address space:
//! every domain owns disjoint integer cell ranges for its stack and heap,
//! and every access is checked against the domain access matrix. Destroyed
//! regions keep their address ranges forever, so a retained stale address is
//! always detected.
//!
//! Domain index 0 is the root domain, index 1 the monitor. Shared data
//! domains are created at table construction from the static plan; sandbox
//! instances are created at run time, transient units getting a fresh
//! instance per boundary call.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::Side;
use crate::ir::StmtLoc;

/// Cells reserved at the bottom of the address space for the syscall
/// interposer's trampoline area. No domain may touch it, and syscalls that
/// try to remap it are denied.
pub const INTERPOSER_CELLS: u64 = 64;

pub const ROOT_INDEX: u64 = 0;
pub const MONITOR_INDEX: u64 = 1;

/// What a domain is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainKind {
    Root,
    Monitor,
    Sandbox { unit: u32, instance: u32 },
    Shared,
}

/// Identity of a domain: unique integer plus kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId {
    pub index: u64,
    pub kind: DomainKind,
}

impl DomainId {
    pub const ROOT: DomainId = DomainId { index: ROOT_INDEX, kind: DomainKind::Root };
    pub const MONITOR: DomainId = DomainId { index: MONITOR_INDEX, kind: DomainKind::Monitor };

    pub fn is_sandbox(&self) -> bool {
        matches!(self.kind, DomainKind::Sandbox { .. })
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DomainKind::Root => write!(f, "root"),
            DomainKind::Monitor => write!(f, "monitor"),
            DomainKind::Sandbox { unit, instance } => {
                write!(f, "sandbox(u{unit},i{instance})#{}", self.index)
            }
            DomainKind::Shared => write!(f, "shared#{}", self.index),
        }
    }
}

/// Why an action was blocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    MemoryAccess,
    SyscallDenied,
    StaleDomain,
    Visibility,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::MemoryAccess => write!(f, "memory-access"),
            ViolationKind::SyscallDenied => write!(f, "syscall-denied"),
            ViolationKind::StaleDomain => write!(f, "stale-domain"),
            ViolationKind::Visibility => write!(f, "visibility"),
        }
    }
}

/// A blocked action: what, who, where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub context: DomainId,
    /// Offending address (memory violations) or syscall name.
    pub detail: String,
    pub location: Option<StmtLoc>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation in {}: {}", self.kind, self.context, self.detail)?;
        if let Some(loc) = &self.location {
            write!(f, " at {loc}")?;
        }
        Ok(())
    }
}

/// Hard runtime faults that are not policy violations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("domain {0} exhausted its {1} region")]
    RegionExhausted(DomainId, &'static str),
    #[error("allocation size must be positive")]
    ZeroAlloc,
    #[error("free of unknown address {0}")]
    FreeUnknown(u64),
    #[error("unit {0} was never declared")]
    UnknownUnit(u32),
    #[error("cannot enter {0}: only sandbox domains are enterable")]
    NotEnterable(DomainId),
    #[error("exit with empty context stack")]
    ExitUnderflow,
    #[error("cannot destroy {0}: not a transient sandbox instance")]
    NotTransient(DomainId),
    #[error("cannot destroy {0}: it is still on the context stack")]
    DestroyWhileEntered(DomainId),
    #[error("operation on destroyed domain {0}")]
    DomainDestroyed(DomainId),
    #[error("unknown syscall `{0}`")]
    UnknownSyscall(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    Stack,
    Heap,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub start: u64,
    pub len: u64,
    pub owner: DomainId,
    pub kind: RegionKind,
    pub destroyed: bool,
}

impl Region {
    fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.start + self.len
    }
}

/// Sizing knobs for the simulated address space.
#[derive(Debug, Clone, Copy)]
pub struct MachineConfig {
    pub stack_cells: u64,
    pub heap_cells: u64,
    pub shared_cells: u64,
    pub step_budget: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            stack_cells: 1024,
            heap_cells: 1 << 14,
            shared_cells: 1 << 14,
            step_budget: 1_000_000,
        }
    }
}

impl MachineConfig {
    /// A deliberately tiny address space, small enough for exhaustive
    /// offset sweeps.
    pub fn tiny() -> Self {
        MachineConfig { stack_cells: 32, heap_cells: 32, shared_cells: 32, step_budget: 100_000 }
    }
}

#[derive(Debug, Clone)]
struct DomainSlot {
    id: DomainId,
    destroyed: bool,
    stack_region: Option<usize>,
    heap_region: Option<usize>,
    /// Next free stack cell (grows upward).
    stack_top: u64,
    /// Next free heap cell.
    heap_top: u64,
    /// Units allowed to touch a shared domain (root listed explicitly).
    participants: BTreeSet<Side>,
}

#[derive(Debug, Clone, Copy)]
struct HeapBlock {
    domain: u64,
    size: u64,
    freed: bool,
}

/// The live domain table: regions, access matrix, allocator bookkeeping and
/// the enter/exit context stack. Allocator and domain metadata live in this
/// structure, outside every simulated region, which is the monitor-held
/// state of the model: no guest store can reach it.
#[derive(Debug, Clone)]
pub struct DomainTable {
    config: MachineConfig,
    domains: Vec<DomainSlot>,
    regions: Vec<Region>,
    blocks: BTreeMap<u64, HeapBlock>,
    next_addr: u64,
    /// Per-unit persistent instance, once created.
    persistent: BTreeMap<u32, u64>,
    /// Per-unit instance counter; transient instances never repeat.
    instances: BTreeMap<u32, u32>,
    /// Context stack; starts and ends at root.
    context: Vec<u64>,
    declared_units: BTreeSet<u32>,
}

impl DomainTable {
    /// Build a table with root, monitor, and one shared domain per plan
    /// entry (participant sets with their static ids).
    pub fn new(
        config: MachineConfig,
        declared_units: impl IntoIterator<Item = u32>,
        shared: &[(u64, BTreeSet<Side>)],
    ) -> Self {
        let mut table = DomainTable {
            config,
            domains: Vec::new(),
            regions: Vec::new(),
            blocks: BTreeMap::new(),
            next_addr: INTERPOSER_CELLS,
            persistent: BTreeMap::new(),
            instances: BTreeMap::new(),
            context: vec![ROOT_INDEX],
            declared_units: declared_units.into_iter().collect(),
        };
        let root = DomainId::ROOT;
        table.push_domain(root, true, true, BTreeSet::new());
        let monitor = DomainId::MONITOR;
        table.push_domain(monitor, true, true, BTreeSet::new());
        for (id, participants) in shared {
            let did = DomainId { index: *id, kind: DomainKind::Shared };
            table.push_domain(did, false, true, participants.clone());
        }
        table
    }

    fn push_domain(
        &mut self,
        id: DomainId,
        with_stack: bool,
        with_heap: bool,
        participants: BTreeSet<Side>,
    ) {
        let heap_cells = match id.kind {
            DomainKind::Shared => self.config.shared_cells,
            DomainKind::Monitor => 64,
            _ => self.config.heap_cells,
        };
        let stack_cells = match id.kind {
            DomainKind::Monitor => 64,
            _ => self.config.stack_cells,
        };
        let stack_region = with_stack.then(|| {
            let r = Region {
                start: self.next_addr,
                len: stack_cells,
                owner: id,
                kind: RegionKind::Stack,
                destroyed: false,
            };
            self.next_addr += stack_cells;
            self.regions.push(r);
            self.regions.len() - 1
        });
        let heap_region = with_heap.then(|| {
            let r = Region {
                start: self.next_addr,
                len: heap_cells,
                owner: id,
                kind: RegionKind::Heap,
                destroyed: false,
            };
            self.next_addr += heap_cells;
            self.regions.push(r);
            self.regions.len() - 1
        });
        let stack_top = stack_region.map(|i| self.regions[i].start).unwrap_or(0);
        let heap_top = heap_region.map(|i| self.regions[i].start).unwrap_or(0);
        self.domains.push(DomainSlot {
            id,
            destroyed: false,
            stack_region,
            heap_region,
            stack_top,
            heap_top,
            participants,
        });
    }

    fn slot(&self, index: u64) -> Option<&DomainSlot> {
        self.domains.iter().find(|d| d.id.index == index)
    }

    fn slot_mut(&mut self, index: u64) -> Option<&mut DomainSlot> {
        self.domains.iter_mut().find(|d| d.id.index == index)
    }

    pub fn domain(&self, index: u64) -> Option<DomainId> {
        self.slot(index).map(|d| d.id)
    }

    pub fn current_context(&self) -> DomainId {
        let index = *self.context.last().expect("context stack never empty");
        self.slot(index).expect("context domain exists").id
    }

    pub fn context_depth(&self) -> usize {
        self.context.len()
    }

    /// Total extent of the simulated address space so far.
    pub fn address_space_end(&self) -> u64 {
        self.next_addr
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region_of(&self, addr: u64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(addr))
    }

    /// Per-domain live region ranges, for audits.
    pub fn ranges_of(&self, index: u64) -> Vec<(u64, u64)> {
        self.regions
            .iter()
            .filter(|r| r.owner.index == index && !r.destroyed)
            .map(|r| (r.start, r.start + r.len))
            .collect()
    }

    // -----------------------------------------------------------------------
    // Domain lifecycle
    // -----------------------------------------------------------------------

    /// Create (or fetch) a sandbox instance for a unit.
    ///
    /// Creation authority rests with the root and monitor domains; a sandbox
    /// context asking for a new domain is a visibility violation. Transient
    /// units get a fresh instance per call; persistent units reuse instance 1.
    pub fn create_sandbox_domain(
        &mut self,
        requester: DomainId,
        unit: u32,
        transient: bool,
    ) -> Result<Result<DomainId, Violation>, RuntimeError> {
        if requester.is_sandbox() || matches!(requester.kind, DomainKind::Shared) {
            return Ok(Err(Violation {
                kind: ViolationKind::Visibility,
                context: requester,
                detail: format!("sandbox context may not create domains (unit {unit})"),
                location: None,
            }));
        }
        if !self.declared_units.contains(&unit) {
            return Err(RuntimeError::UnknownUnit(unit));
        }
        if !transient {
            if let Some(&index) = self.persistent.get(&unit) {
                return Ok(Ok(self.slot(index).expect("persistent instance").id));
            }
        }
        let instance = {
            let n = self.instances.entry(unit).or_insert(0);
            *n += 1;
            *n
        };
        let index = self.next_index();
        let id = DomainId { index, kind: DomainKind::Sandbox { unit, instance } };
        self.push_domain(id, true, true, BTreeSet::new());
        if !transient {
            self.persistent.insert(unit, index);
        }
        Ok(Ok(id))
    }

    fn next_index(&self) -> u64 {
        self.domains.iter().map(|d| d.id.index).max().unwrap_or(1) + 1
    }

    /// Switch the execution context into a sandbox domain.
    pub fn enter_domain(&mut self, id: DomainId) -> Result<Result<(), Violation>, RuntimeError> {
        if !id.is_sandbox() {
            return Err(RuntimeError::NotEnterable(id));
        }
        let slot = self.slot(id.index).ok_or(RuntimeError::UnknownUnit(0))?;
        if slot.destroyed {
            return Ok(Err(Violation {
                kind: ViolationKind::StaleDomain,
                context: self.current_context(),
                detail: format!("enter of destroyed domain {id}"),
                location: None,
            }));
        }
        self.context.push(id.index);
        Ok(Ok(()))
    }

    /// Restore the previous context.
    pub fn exit_domain(&mut self) -> Result<DomainId, RuntimeError> {
        if self.context.len() <= 1 {
            return Err(RuntimeError::ExitUnderflow);
        }
        self.context.pop();
        Ok(self.current_context())
    }

    /// Tear down a transient instance. Its address ranges are never reused,
    /// so stale pointers into it keep trapping for the rest of the run.
    pub fn destroy_transient(&mut self, id: DomainId) -> Result<(), RuntimeError> {
        let DomainKind::Sandbox { unit, .. } = id.kind else {
            return Err(RuntimeError::NotTransient(id));
        };
        if self.persistent.get(&unit) == Some(&id.index) {
            return Err(RuntimeError::NotTransient(id));
        }
        if self.context.contains(&id.index) {
            return Err(RuntimeError::DestroyWhileEntered(id));
        }
        let slot = self.slot_mut(id.index).ok_or(RuntimeError::NotTransient(id))?;
        if slot.destroyed {
            return Err(RuntimeError::DomainDestroyed(id));
        }
        slot.destroyed = true;
        let (sr, hr) = (slot.stack_region, slot.heap_region);
        for idx in [sr, hr].into_iter().flatten() {
            self.regions[idx].destroyed = true;
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Memory
    // -----------------------------------------------------------------------

    /// Allocate `size` cells on a domain's heap.
    pub fn domain_alloc(&mut self, id: DomainId, size: u64) -> Result<u64, RuntimeError> {
        if size == 0 {
            return Err(RuntimeError::ZeroAlloc);
        }
        let slot = self.slot(id.index).ok_or(RuntimeError::UnknownUnit(0))?;
        if slot.destroyed {
            return Err(RuntimeError::DomainDestroyed(id));
        }
        let region_idx = slot.heap_region.ok_or(RuntimeError::RegionExhausted(id, "heap"))?;
        let region_end = self.regions[region_idx].start + self.regions[region_idx].len;
        let addr = slot.heap_top;
        if addr + size > region_end {
            return Err(RuntimeError::RegionExhausted(id, "heap"));
        }
        self.slot_mut(id.index).unwrap().heap_top = addr + size;
        self.blocks.insert(addr, HeapBlock { domain: id.index, size, freed: false });
        Ok(addr)
    }

    /// Release a heap block. Freed blocks at the top of the bump pointer
    /// are reclaimed (including chains that become topmost later), so
    /// temporary allocations roll back fully.
    pub fn domain_free(&mut self, addr: u64) -> Result<(), RuntimeError> {
        let block = *self.blocks.get(&addr).ok_or(RuntimeError::FreeUnknown(addr))?;
        if block.freed {
            return Err(RuntimeError::FreeUnknown(addr));
        }
        self.blocks.get_mut(&addr).unwrap().freed = true;
        loop {
            let top = self.slot(block.domain).expect("block owner exists").heap_top;
            let reclaim = self
                .blocks
                .iter()
                .find(|(a, b)| b.domain == block.domain && b.freed && **a + b.size == top)
                .map(|(a, _)| *a);
            match reclaim {
                Some(a) => {
                    self.slot_mut(block.domain).unwrap().heap_top = a;
                    self.blocks.remove(&a);
                }
                None => break,
            }
        }
        Ok(())
    }

    /// Push a stack frame of `cells` cells in the current context's domain.
    pub fn push_frame(&mut self, cells: u64) -> Result<u64, RuntimeError> {
        let ctx = self.current_context();
        let slot = self.slot(ctx.index).expect("context exists");
        let region_idx = slot.stack_region.ok_or(RuntimeError::RegionExhausted(ctx, "stack"))?;
        let region_end = self.regions[region_idx].start + self.regions[region_idx].len;
        let base = slot.stack_top;
        if base + cells > region_end {
            return Err(RuntimeError::RegionExhausted(ctx, "stack"));
        }
        self.slot_mut(ctx.index).unwrap().stack_top = base + cells;
        Ok(base)
    }

    /// Pop a frame previously pushed at `base`. Stack memory is not zeroed,
    /// so persistent domains keep their dirty frames across calls.
    pub fn pop_frame(&mut self, base: u64) {
        let ctx = self.current_context();
        self.slot_mut(ctx.index).unwrap().stack_top = base;
    }

    // -----------------------------------------------------------------------
    // Access control
    // -----------------------------------------------------------------------

    /// The domain access matrix:
    /// - the monitor reaches everything;
    /// - root reaches every domain except the monitor;
    /// - a sandbox reaches itself plus shared domains its unit participates
    ///   in;
    /// - a shared domain (as a hypothetical context) reaches only itself.
    pub fn allows(&self, context: DomainId, owner: DomainId) -> bool {
        match context.kind {
            DomainKind::Monitor => true,
            DomainKind::Root => owner.kind != DomainKind::Monitor,
            DomainKind::Sandbox { unit, .. } => {
                if owner == context {
                    return true;
                }
                if owner.kind == DomainKind::Shared {
                    return self
                        .slot(owner.index)
                        .map(|s| s.participants.contains(&Side::Unit(unit)))
                        .unwrap_or(false);
                }
                false
            }
            DomainKind::Shared => owner == context,
        }
    }

    /// Check one memory access. Wild addresses (outside every region, or in
    /// the interposer area) and destroyed regions are violations.
    pub fn check_access(
        &self,
        context: DomainId,
        addr: u64,
        is_write: bool,
    ) -> Result<(), Violation> {
        let what = if is_write { "write" } else { "read" };
        let region = match self.region_of(addr) {
            Some(r) => r,
            None => {
                return Err(Violation {
                    kind: ViolationKind::MemoryAccess,
                    context,
                    detail: format!("{what} of unmapped address {addr}"),
                    location: None,
                })
            }
        };
        if region.destroyed {
            return Err(Violation {
                kind: ViolationKind::StaleDomain,
                context,
                detail: format!("{what} of address {addr} in destroyed domain {}", region.owner),
                location: None,
            });
        }
        if let Some(block) = self.blocks.range(..=addr).next_back() {
            if block.1.freed && addr < block.0 + block.1.size {
                return Err(Violation {
                    kind: ViolationKind::MemoryAccess,
                    context,
                    detail: format!("{what} of freed address {addr}"),
                    location: None,
                });
            }
        }
        if self.allows(context, region.owner) {
            Ok(())
        } else {
            Err(Violation {
                kind: ViolationKind::MemoryAccess,
                context,
                detail: format!("{what} of address {addr} owned by {}", region.owner),
                location: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Syscall policy
// ---------------------------------------------------------------------------

/// Built-in deny rules; these can never be overridden by allow-lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenyRule {
    /// Protection-key manipulation (pkey_alloc / pkey_free / pkey_mprotect).
    ProtectionKey,
    /// Open of the process's own memory image.
    SelfMemOpen,
    /// Mapping pages writable and executable at once.
    WritableExecutableMap,
    /// Remapping or reprotecting the interposer's reserved low region.
    InterposerWrite,
}

impl fmt::Display for DenyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyRule::ProtectionKey => write!(f, "protection-key manipulation"),
            DenyRule::SelfMemOpen => write!(f, "open of self-memory path"),
            DenyRule::WritableExecutableMap => write!(f, "writable+executable mapping"),
            DenyRule::InterposerWrite => write!(f, "write into interposer region"),
        }
    }
}

/// The syscall filter: built-in deny rules plus per-unit allow-lists.
#[derive(Debug, Clone, Default)]
pub struct SyscallPolicy {
    /// Unit id -> allowed syscall names.
    pub allow: BTreeMap<u32, BTreeSet<String>>,
}

impl SyscallPolicy {
    pub fn from_units(units: &[crate::spec::SandboxUnit]) -> Self {
        let mut allow = BTreeMap::new();
        for u in units {
            allow.insert(u.id, u.decl.syscalls.iter().cloned().collect());
        }
        SyscallPolicy { allow }
    }

    fn matching_deny(name: &str, args: &[i64], path: Option<&str>) -> Option<DenyRule> {
        match name {
            "pkey_alloc" | "pkey_free" | "pkey_mprotect" => Some(DenyRule::ProtectionKey),
            "open" => {
                let p = path.unwrap_or("");
                if p == "/proc/self/mem" || (p.starts_with("/proc/") && p.ends_with("/mem")) {
                    Some(DenyRule::SelfMemOpen)
                } else {
                    None
                }
            }
            "mmap_wx" => Some(DenyRule::WritableExecutableMap),
            "mprotect" | "mremap" => {
                let target = args.first().copied().unwrap_or(i64::MAX);
                if target >= 0 && (target as u64) < INTERPOSER_CELLS {
                    Some(DenyRule::InterposerWrite)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Decide one syscall.
    ///
    /// The monitor is exempt from all filtering. Root is subject to the
    /// deny rules but needs no allow-list. A sandbox needs a clean deny
    /// check plus its unit's allow-list.
    pub fn filter_syscall(
        &self,
        context: DomainId,
        name: &str,
        args: &[i64],
        path: Option<&str>,
    ) -> Result<Result<(), Violation>, RuntimeError> {
        if !crate::ir::check::KNOWN_SYSCALLS.contains(&name) {
            return Err(RuntimeError::UnknownSyscall(name.to_string()));
        }
        if context.kind == DomainKind::Monitor {
            return Ok(Ok(()));
        }
        if let Some(rule) = Self::matching_deny(name, args, path) {
            return Ok(Err(Violation {
                kind: ViolationKind::SyscallDenied,
                context,
                detail: format!("`{name}` denied: {rule}"),
                location: None,
            }));
        }
        match context.kind {
            DomainKind::Root => Ok(Ok(())),
            DomainKind::Sandbox { unit, .. } => {
                let allowed =
                    self.allow.get(&unit).map(|s| s.contains(name)).unwrap_or(false);
                if allowed {
                    Ok(Ok(()))
                } else {
                    Ok(Err(Violation {
                        kind: ViolationKind::SyscallDenied,
                        context,
                        detail: format!("`{name}` is not in the unit's allow-list"),
                        location: None,
                    }))
                }
            }
            _ => Ok(Ok(())),
        }
    }
}
