//! Deterministic random-program generator for differential testing.
//!
//! Generated programs are small (at most 4 functions, 12 statements per
//! function, 6 branches overall), always valid, and structurally
//! terminating: calls follow a strict rank order and branch arms never loop
//! back, so every block executes at most once and exhaustive enumeration of
//! the branch decision vectors is sound.
//!
//! The corpus is benign by construction — no raw accesses and only
//! allow-listed `write` syscalls on scalar values — so generated cases can
//! drive both the oracle-inclusion soundness suite and the behavioral
//! equivalence suite.

use crate::ir::{
    Block, CrateDef, FunctionDef, LocalDecl, LocalId, Place, Program, Projection, Rvalue,
    Statement, TypeExpr, Visibility,
};
use crate::spec::{SandboxSpec, UnitDecl, UnitKind};

/// xorshift64* — deterministic and platform-independent.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed.wrapping_mul(2685821657736338717).max(1) }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n.max(1)
    }

    pub fn chance(&mut self, percent: u64) -> bool {
        self.below(100) < percent
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

/// One generated test case: a program plus a matching sandbox spec.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub program: Program,
    pub spec: SandboxSpec,
}

const MAX_STMTS_PER_FN: usize = 12;
const MAX_BRANCHES: usize = 6;

#[derive(Clone, Copy, PartialEq)]
enum GTy {
    Int,
    Vec,
    Ref,
}

impl GTy {
    fn ty(self) -> TypeExpr {
        match self {
            GTy::Int => TypeExpr::I32,
            GTy::Vec => TypeExpr::vec_of(TypeExpr::I32),
            GTy::Ref => TypeExpr::ref_of(TypeExpr::vec_of(TypeExpr::I32)),
        }
    }
}

struct FnPlan {
    path: String,
    visibility: Visibility,
    params: Vec<GTy>,
    ret: GTy,
    /// Call rank: a function may only call strictly higher ranks.
    rank: usize,
}

struct FnBuilder {
    locals: Vec<LocalDecl>,
    /// Locals known to hold a defined value of their type.
    initialized: Vec<bool>,
    entry: Vec<Statement>,
    arms: Vec<Block>,
    stmts: usize,
}

impl FnBuilder {
    fn new(plan: &FnPlan) -> Self {
        let mut locals = vec![LocalDecl { id: LocalId(0), ty: plan.ret.ty() }];
        let mut initialized = vec![false];
        for (i, p) in plan.params.iter().enumerate() {
            locals.push(LocalDecl { id: LocalId(i as u32 + 1), ty: p.ty() });
            initialized.push(true);
        }
        FnBuilder { locals, initialized, entry: Vec::new(), arms: Vec::new(), stmts: 0 }
    }

    fn add_local(&mut self, ty: GTy) -> LocalId {
        let id = LocalId(self.locals.len() as u32);
        self.locals.push(LocalDecl { id, ty: ty.ty() });
        self.initialized.push(false);
        id
    }

    fn locals_of(&self, ty: GTy, only_init: bool) -> Vec<LocalId> {
        self.locals
            .iter()
            .enumerate()
            .filter(|(i, l)| l.ty == ty.ty() && (!only_init || self.initialized[*i]))
            .map(|(_, l)| l.id)
            .collect()
    }

    fn push(&mut self, stmt: Statement) {
        self.entry.push(stmt);
        self.stmts += 1;
    }

    fn mark_init(&mut self, id: LocalId) {
        self.initialized[id.0 as usize] = true;
    }
}

/// Generate one case from a seed.
pub fn generate(seed: u64) -> GeneratedCase {
    let mut rng = Rng::new(seed ^ 0x9E37_79B9_7F4A_7C15);
    let unit_count = 1 + rng.below(2) as usize;
    let unit_names = ["ua", "ub"];

    // Plan the function set: main, optionally a root helper, one public
    // entry per unit, optionally one private helper inside the first unit.
    let mut plans: Vec<FnPlan> = Vec::new();
    plans.push(FnPlan {
        path: "app::main".into(),
        visibility: Visibility::Public,
        params: Vec::new(),
        ret: GTy::Int,
        rank: 0,
    });
    let budget = 4usize;
    let mut rank = 1;
    let root_helper = rng.chance(30) && 1 + unit_count < budget;
    if root_helper {
        plans.push(FnPlan {
            path: "app::prep".into(),
            visibility: Visibility::Private,
            params: vec![GTy::Int],
            ret: GTy::Int,
            rank,
        });
        rank += 1;
    }
    for name in unit_names.iter().take(unit_count) {
        let params = match rng.below(4) {
            0 => vec![GTy::Int],
            1 => vec![GTy::Vec],
            2 => vec![GTy::Vec, GTy::Int],
            _ => vec![GTy::Ref],
        };
        let ret = if rng.chance(35) { GTy::Vec } else { GTy::Int };
        plans.push(FnPlan {
            path: format!("{name}::entry"),
            visibility: Visibility::Public,
            params,
            ret,
            rank,
        });
        rank += 1;
    }
    if plans.len() < budget && rng.chance(40) {
        plans.push(FnPlan {
            path: format!("{}::inner", unit_names[0]),
            visibility: Visibility::Private,
            params: vec![GTy::Int],
            ret: GTy::Int,
            rank,
        });
    }

    let mut branch_budget = MAX_BRANCHES;
    let mut functions: Vec<FunctionDef> = Vec::new();
    for (idx, plan) in plans.iter().enumerate() {
        functions.push(build_function(plan, &plans, idx, &mut rng, &mut branch_budget));
    }

    // Assemble crates in a stable order: app first, then units.
    let mut crates = vec![CrateDef {
        name: "app".into(),
        aggregates: Vec::new(),
        functions: Vec::new(),
    }];
    for name in unit_names.iter().take(unit_count) {
        crates.push(CrateDef {
            name: (*name).to_string(),
            aggregates: Vec::new(),
            functions: Vec::new(),
        });
    }
    for func in functions {
        let krate = func.crate_name().to_string();
        crates
            .iter_mut()
            .find(|c| c.name == krate)
            .expect("crate planned")
            .functions
            .push(func);
    }
    let program = Program { crates };

    let units = unit_names
        .iter()
        .take(unit_count)
        .map(|name| UnitDecl {
            kind: UnitKind::Crate,
            path: (*name).to_string(),
            transient: rng.chance(40),
            syscalls: vec!["write".to_string()],
        })
        .collect();
    let spec = SandboxSpec { units, containers: vec!["vec".to_string()] };

    GeneratedCase { program, spec }
}

fn build_function(
    plan: &FnPlan,
    all: &[FnPlan],
    my_index: usize,
    rng: &mut Rng,
    branch_budget: &mut usize,
) -> FunctionDef {
    let mut b = FnBuilder::new(plan);

    // A small pool of temporaries.
    let ints = [b.add_local(GTy::Int), b.add_local(GTy::Int)];
    let vec_temp = b.add_local(GTy::Vec);
    let ref_temp = if rng.chance(50) { Some(b.add_local(GTy::Ref)) } else { None };

    // Initialization prologue.
    for id in ints {
        b.push(Statement::Assign {
            dst: Place { base: id, projections: vec![] },
            src: Rvalue::LitInt(rng.below(90) as i32 + 1),
        });
        b.mark_init(id);
    }
    b.push(Statement::Alloc {
        dst: Place { base: vec_temp, projections: vec![] },
        kind: "vec".into(),
        elem: TypeExpr::I32,
        len: 1 + rng.below(4),
        domain: None,
    });
    b.mark_init(vec_temp);
    if let Some(r) = ref_temp {
        let vecs = b.locals_of(GTy::Vec, true);
        let target = *rng.pick(&vecs);
        b.push(Statement::Assign {
            dst: Place { base: r, projections: vec![] },
            src: Rvalue::AddrOf(Place { base: target, projections: vec![] }),
        });
        b.mark_init(r);
    }

    // Mandatory boundary exercise: main calls every unit entry once.
    if plan.path == "app::main" {
        let targets: Vec<usize> = all
            .iter()
            .enumerate()
            .filter(|(_, p)| p.path.ends_with("::entry"))
            .map(|(i, _)| i)
            .collect();
        for t in targets {
            emit_call(&mut b, &all[t], rng);
        }
    }

    // Random middle section. Two slots stay reserved for the epilogue.
    let work_cap = MAX_STMTS_PER_FN - 2;
    let extra_ops = rng.below(4) as usize;
    for _ in 0..extra_ops {
        if b.stmts + 1 > work_cap {
            break;
        }
        emit_random_op(&mut b, all, my_index, rng);
    }

    // Optional branch with two arms of scalar noise.
    if *branch_budget > 0 && rng.chance(55) && b.stmts + 3 <= work_cap {
        *branch_budget -= 1;
        let make_arm = |b: &mut FnBuilder, label: &str, rng: &mut Rng| {
            let src = *rng.pick(&b.locals_of(GTy::Int, true));
            let dst = *rng.pick(&b.locals_of(GTy::Int, true));
            let stmt = if rng.chance(50) {
                Statement::Assign {
                    dst: Place { base: dst, projections: vec![] },
                    src: Rvalue::LitInt(rng.below(90) as i32),
                }
            } else {
                Statement::Assign {
                    dst: Place { base: dst, projections: vec![] },
                    src: Rvalue::Use(Place { base: src, projections: vec![] }),
                }
            };
            b.stmts += 1;
            Block { label: label.to_string(), statements: vec![stmt] }
        };
        let left = make_arm(&mut b, "lo", rng);
        let right = make_arm(&mut b, "hi", rng);
        b.arms.push(left);
        b.arms.push(right);
        b.push(Statement::Branch { left: "lo".into(), right: "hi".into() });
    }

    // Observable output, then the epilogue assigning the return slot.
    if rng.chance(60) && b.stmts + 1 <= work_cap {
        let src = *rng.pick(&b.locals_of(GTy::Int, true));
        let dst = ints[0];
        b.push(Statement::Syscall {
            dst: Place { base: dst, projections: vec![] },
            name: "write".into(),
            args: vec![Place { base: src, projections: vec![] }],
            path_arg: None,
        });
    }
    let ret_src = *rng.pick(&b.locals_of(plan.ret, true));
    b.push(Statement::Assign {
        dst: Place { base: LocalId(0), projections: vec![] },
        src: Rvalue::Use(Place { base: ret_src, projections: vec![] }),
    });
    b.push(Statement::Return);

    let mut blocks = vec![Block { label: "entry".into(), statements: b.entry }];
    blocks.append(&mut b.arms);
    FunctionDef {
        path: plan.path.clone(),
        visibility: plan.visibility,
        owner_type: None,
        param_count: plan.params.len() as u32,
        locals: b.locals,
        blocks,
    }
}

fn emit_call(b: &mut FnBuilder, callee: &FnPlan, rng: &mut Rng) {
    let mut args = Vec::new();
    for p in &callee.params {
        let candidates = b.locals_of(*p, true);
        if candidates.is_empty() {
            return; // no suitable argument available; skip the call
        }
        args.push(Place { base: *rng.pick(&candidates), projections: vec![] });
    }
    let dst_candidates = b.locals_of(callee.ret, false);
    let dst = *rng.pick(&dst_candidates);
    b.push(Statement::Call {
        dst: Place { base: dst, projections: vec![] },
        callee: callee.path.clone(),
        args,
    });
    b.mark_init(dst);
}

fn emit_random_op(b: &mut FnBuilder, all: &[FnPlan], my_index: usize, rng: &mut Rng) {
    match rng.below(6) {
        // Write a scalar into the vec store.
        0 => {
            let vecs = b.locals_of(GTy::Vec, true);
            let ints = b.locals_of(GTy::Int, true);
            let v = *rng.pick(&vecs);
            let s = *rng.pick(&ints);
            b.push(Statement::Assign {
                dst: Place { base: v, projections: vec![Projection::Deref] },
                src: Rvalue::Use(Place { base: s, projections: vec![] }),
            });
        }
        // Read a scalar out of the vec store.
        1 => {
            let vecs = b.locals_of(GTy::Vec, true);
            let ints = b.locals_of(GTy::Int, true);
            let v = *rng.pick(&vecs);
            let d = *rng.pick(&ints);
            b.push(Statement::Assign {
                dst: Place { base: d, projections: vec![] },
                src: Rvalue::Use(Place { base: v, projections: vec![Projection::Deref] }),
            });
        }
        // Read through a reference, two levels down.
        2 => {
            let refs = b.locals_of(GTy::Ref, true);
            if refs.is_empty() {
                return;
            }
            let ints = b.locals_of(GTy::Int, true);
            let r = *rng.pick(&refs);
            let d = *rng.pick(&ints);
            b.push(Statement::Assign {
                dst: Place { base: d, projections: vec![] },
                src: Rvalue::Use(Place {
                    base: r,
                    projections: vec![Projection::Deref, Projection::Deref],
                }),
            });
        }
        // Alias a vec handle.
        3 => {
            let vecs = b.locals_of(GTy::Vec, true);
            let all_vecs = b.locals_of(GTy::Vec, false);
            let s = *rng.pick(&vecs);
            let d = *rng.pick(&all_vecs);
            if s != d {
                b.push(Statement::Assign {
                    dst: Place { base: d, projections: vec![] },
                    src: Rvalue::Use(Place { base: s, projections: vec![] }),
                });
                b.mark_init(d);
            }
        }
        // Scalar shuffle.
        4 => {
            let ints = b.locals_of(GTy::Int, true);
            let s = *rng.pick(&ints);
            let d = *rng.pick(&ints);
            b.push(Statement::Assign {
                dst: Place { base: d, projections: vec![] },
                src: Rvalue::Use(Place { base: s, projections: vec![] }),
            });
        }
        // Call something of a strictly higher rank.
        _ => {
            let my_rank = all[my_index].rank;
            let targets: Vec<&FnPlan> = all
                .iter()
                .filter(|p| {
                    p.rank > my_rank
                        && (p.visibility == Visibility::Public
                            || p.path.split("::").next() == all[my_index].path.split("::").next())
                })
                .collect();
            if targets.is_empty() {
                return;
            }
            let callee = *rng.pick(&targets);
            emit_call(b, callee, rng);
        }
    }
}

/// Insert one fresh assignment between two same-typed locals of a random
/// function; the result is still valid. Used to probe fixed-point
/// monotonicity.
pub fn insert_random_assign(program: &Program, seed: u64) -> Option<Program> {
    let mut rng = Rng::new(seed ^ 0xA076_1D64_78BD_642F);
    let mut out = program.clone();
    let fn_count = out.functions().count();
    if fn_count == 0 {
        return None;
    }
    let pick = rng.below(fn_count as u64) as usize;
    let func = out
        .crates
        .iter_mut()
        .flat_map(|c| c.functions.iter_mut())
        .nth(pick)
        .expect("function index in range");
    let mut by_type: std::collections::BTreeMap<String, Vec<LocalId>> = Default::default();
    for l in &func.locals {
        by_type.entry(l.ty.to_string()).or_default().push(l.id);
    }
    let groups: Vec<&Vec<LocalId>> = by_type.values().filter(|v| v.len() >= 2).collect();
    if groups.is_empty() {
        return None;
    }
    let group = *rng.pick(&groups);
    let a = *rng.pick(group);
    let c = *rng.pick(group);
    let stmt = Statement::Assign {
        dst: Place { base: a, projections: vec![] },
        src: Rvalue::Use(Place { base: c, projections: vec![] }),
    };
    func.blocks[0].statements.insert(0, stmt);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{format_program, parse_program, validate_program};

    #[test]
    fn generated_programs_are_valid_and_round_trip() {
        for seed in 0..100 {
            let case = generate(seed);
            let diags = validate_program(&case.program);
            assert!(
                diags.is_empty(),
                "seed {seed}: {:?}\n{}",
                diags,
                format_program(&case.program)
            );
            let text = format_program(&case.program);
            let reparsed = parse_program(&text).unwrap();
            assert_eq!(reparsed, case.program, "seed {seed}");
        }
    }

    #[test]
    fn generated_programs_stay_within_bounds() {
        for seed in 0..100 {
            let case = generate(seed);
            assert!(case.program.functions().count() <= 4);
            for f in case.program.functions() {
                assert!(f.statements().count() <= super::MAX_STMTS_PER_FN, "{}", f.path);
            }
            let branches = crate::interp::branch_count(&case.program);
            assert!(branches <= super::MAX_BRANCHES);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7);
        let b = generate(7);
        assert_eq!(a.program, b.program);
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn inserted_assignments_keep_programs_valid() {
        for seed in 0..40 {
            let case = generate(seed);
            if let Some(mutated) = insert_random_assign(&case.program, seed) {
                assert!(validate_program(&mutated).is_empty(), "seed {seed}");
            }
        }
    }
}
