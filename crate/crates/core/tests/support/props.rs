//! Randomised algebra suites: expression generators plus one checker per
//! law, shared between the property tests and the acceptance run.
//!
//! Random ∧/∨/∃ expressions over switch tests and order constraints are
//! built twice — once through the lifted answer-set algebra, once through
//! the ground decision-diagram engine — and compared world by world via
//! canonical node identity.  The constraint suite compares the store
//! operations against plain enumeration of the domain box.

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};

use pxlift::constraints::{AtomicConstraint, ConstraintFormula, Term, VarId};
use pxlift::ground::{self, GroundEngine, NodeId};
use pxlift::lifted::{LiftedBuilder, LiftedGraph};
use pxlift::program::{parse_program, prepare, Prepared};

/// Domain of every generated variable.
pub const DOMAIN: (i64, i64) = (1, 4);
/// The variable alphabet: the first two may be quantified, the last two
/// stay free.
const VAR_NAMES: [&str; 4] = ["X", "Y", "U", "V"];
const SWITCH_NAMES: [&str; 2] = ["a", "b"];

/// The fixed program context every algebra trial runs in: two switches over
/// one four-element population.
pub fn context() -> Prepared {
    let program = parse_program(
        ":- population(p, 4).\n\
         :- set_sw(a, categorical([u:0.5, v:0.5])).\n\
         :- set_sw(b, categorical([x:0.3, y:0.3, z:0.4])).\n\
         seed :- W in p, msw(a, W, u), msw(b, W, x).\n",
    )
    .expect("context parses");
    prepare(&program).expect("context prepares")
}

/// A random expression over switch tests, order constraints, conjunction,
/// disjunction, and existential quantification.
#[derive(Debug, Clone)]
pub enum Expr {
    /// `switch[var] = outcome` (outcome index taken modulo the arity).
    Rv {
        switch: usize,
        var: usize,
        outcome: usize,
    },
    /// `var_a < var_b` when `strict`, else `var_a = var_b`.
    Cmp { strict: bool, a: usize, b: usize },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    /// Quantify one of the first two variables inside the subexpression.
    Exists(usize, Box<Expr>),
}

/// Strategy for random expressions: at most a handful of leaves, all four
/// variables in play, quantifiers over the first two only.
pub fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..2, 0usize..4, 0usize..6).prop_map(|(switch, var, outcome)| Expr::Rv {
            switch,
            var,
            outcome,
        }),
        (any::<bool>(), 0usize..4, 0usize..4)
            .prop_filter("compare distinct variables", |(_, a, b)| a != b)
            .prop_map(|(strict, a, b)| Expr::Cmp { strict, a, b }),
    ];
    leaf.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(l, r)| Expr::And(Box::new(l), Box::new(r))),
            (inner.clone(), inner.clone())
                .prop_map(|(l, r)| Expr::Or(Box::new(l), Box::new(r))),
            (0usize..2, inner).prop_map(|(v, e)| Expr::Exists(v, Box::new(e))),
        ]
    })
}

/// Strategy for quantifier-free expressions: conjunctions and disjunctions
/// of leaves only, where the exclusivity invariant is directly checkable.
pub fn flat_expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..2, 0usize..4, 0usize..6).prop_map(|(switch, var, outcome)| Expr::Rv {
            switch,
            var,
            outcome,
        }),
        (any::<bool>(), 0usize..4, 0usize..4)
            .prop_filter("compare distinct variables", |(_, a, b)| a != b)
            .prop_map(|(strict, a, b)| Expr::Cmp { strict, a, b }),
    ];
    leaf.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(l, r)| Expr::And(Box::new(l), Box::new(r))),
            (inner.clone(), inner).prop_map(|(l, r)| Expr::Or(Box::new(l), Box::new(r))),
        ]
    })
}

/// Variables with a free occurrence in `e` (not under an `Exists` binder).
pub fn free_vars(e: &Expr) -> BTreeSet<usize> {
    match e {
        Expr::Rv { var, .. } => BTreeSet::from([*var]),
        Expr::Cmp { a, b, .. } => BTreeSet::from([*a, *b]),
        Expr::And(l, r) | Expr::Or(l, r) => {
            let mut s = free_vars(l);
            s.extend(free_vars(r));
            s
        }
        Expr::Exists(v, sub) => {
            let mut s = free_vars(sub);
            s.remove(v);
            s
        }
    }
}

/// Build the answer set of `e` through the lifted algebra.
pub fn build_answer_set(b: &mut LiftedBuilder, e: &Expr) -> Vec<LiftedGraph> {
    match e {
        Expr::Rv {
            switch,
            var,
            outcome,
        } => {
            let x = b.pool.intern(VAR_NAMES[*var]);
            let eta = ConstraintFormula::unconstrained(&[(x, DOMAIN)]);
            let sw = &b.prepared().program.switches[*switch];
            let value = sw.outcomes[*outcome % sw.outcomes.len()].clone();
            let g = b
                .lifted_rv(SWITCH_NAMES[*switch], Term::Var(x), &value, eta)
                .expect("switch test builds");
            vec![g]
        }
        Expr::Cmp { strict, a, b: b2 } => {
            let xa = b.pool.intern(VAR_NAMES[*a]);
            let xb = b.pool.intern(VAR_NAMES[*b2]);
            let eta = ConstraintFormula::unconstrained(&[(xa, DOMAIN), (xb, DOMAIN)]);
            let c = if *strict {
                AtomicConstraint::lt(Term::Var(xa), Term::Var(xb))
            } else {
                AtomicConstraint::eq(Term::Var(xa), Term::Var(xb))
            };
            vec![b.constraint_graph(eta.add(&c))]
        }
        Expr::And(l, r) => {
            let xs = build_answer_set(b, l);
            let ys = build_answer_set(b, r);
            b.answer_set_and(&xs, &ys)
        }
        Expr::Or(l, r) => {
            let xs = build_answer_set(b, l);
            let ys = build_answer_set(b, r);
            b.answer_set_or(&xs, &ys)
        }
        Expr::Exists(v, sub) => {
            let members = build_answer_set(b, sub);
            let x = b.pool.intern(VAR_NAMES[*v]);
            members
                .into_iter()
                .map(|g| {
                    if g.eta.has_var(x) && !g.omega.contains(&x) {
                        b.quantify(&g, x).expect("variable present")
                    } else {
                        g
                    }
                })
                .collect()
        }
    }
}

/// Quantify every free occurrence of the quantifiable variables, leaving
/// each member closed over everything except `U`/`V`.  The members are not
/// re-folded, so several may be live at one point of the remaining free
/// space; jointly they still cover the expression.
pub fn close_over_xy(b: &LiftedBuilder, members: Vec<LiftedGraph>) -> Vec<LiftedGraph> {
    members
        .into_iter()
        .map(|mut g| {
            for name in &VAR_NAMES[..2] {
                if let Some(x) = b.pool.lookup(name) {
                    if g.eta.has_var(x) && !g.omega.contains(&x) {
                        g = b.quantify(&g, x).expect("variable present");
                    }
                }
            }
            g
        })
        .collect()
}

/// Evaluate `e` through the ground engine under a full assignment of the
/// free variables; `Exists` expands to a disjunction over the domain.
pub fn ground_expr(
    eng: &mut GroundEngine,
    e: &Expr,
    assign: &HashMap<usize, i64>,
) -> NodeId {
    match e {
        Expr::Rv {
            switch,
            var,
            outcome,
        } => {
            let inst = assign[var];
            let sw = &eng.program().switches[*switch];
            let value = sw.outcomes[*outcome % sw.outcomes.len()].clone();
            eng.rv_graph(SWITCH_NAMES[*switch], inst, &value)
                .expect("switch test builds")
        }
        Expr::Cmp { strict, a, b } => {
            let ok = if *strict {
                assign[a] < assign[b]
            } else {
                assign[a] == assign[b]
            };
            if ok {
                ground::ONE
            } else {
                ground::ZERO
            }
        }
        Expr::And(l, r) => {
            let x = ground_expr(eng, l, assign);
            let y = ground_expr(eng, r, assign);
            eng.g_and(x, y)
        }
        Expr::Or(l, r) => {
            let x = ground_expr(eng, l, assign);
            let y = ground_expr(eng, r, assign);
            eng.g_or(x, y)
        }
        Expr::Exists(v, sub) => {
            let mut acc = ground::ZERO;
            for k in DOMAIN.0..=DOMAIN.1 {
                let mut inner = assign.clone();
                inner.insert(*v, k);
                let g = ground_expr(eng, sub, &inner);
                acc = eng.g_or(acc, g);
            }
            acc
        }
    }
}

/// All assignments of `vars` over the domain.
fn assignments(vars: &[usize]) -> Vec<HashMap<usize, i64>> {
    let mut out = vec![HashMap::new()];
    for &v in vars {
        let mut next = Vec::new();
        for a in &out {
            for k in DOMAIN.0..=DOMAIN.1 {
                let mut a2 = a.clone();
                a2.insert(v, k);
                next.push(a2);
            }
        }
        out = next;
    }
    out
}

/// Substitute an assignment of the expression-free variables into a member.
fn substitute_assign(
    b: &mut LiftedBuilder,
    g: &LiftedGraph,
    assign: &HashMap<usize, i64>,
) -> LiftedGraph {
    let mut out = g.clone();
    for (&v, &k) in assign {
        if let Some(x) = b.pool.lookup(VAR_NAMES[v]) {
            if out.eta.has_var(x) && !out.omega.contains(&x) {
                out = b.substitute(&out, k, x);
            }
        }
    }
    out
}

/// The ∧/∨ correctness law: at every point of the remaining free space, the
/// disjunction of the live members' groundings equals the ground-engine
/// evaluation of the whole (existentially closed) expression.
pub fn check_and_or_law(e: &Expr) -> Result<(), TestCaseError> {
    let prepared = context();
    let mut b = LiftedBuilder::new(prepared.clone());
    let mut eng = GroundEngine::new(prepared.program.clone(), prepared.map.clone());

    let raw = build_answer_set(&mut b, e);
    let members = close_over_xy(&b, raw);
    let free: Vec<usize> = free_vars(e).into_iter().filter(|&v| v >= 2).collect();
    let bound_top: Vec<usize> = free_vars(e).into_iter().filter(|&v| v < 2).collect();

    for sigma in assignments(&free) {
        let mut lhs = ground::ZERO;
        for m in &members {
            let m_sigma = substitute_assign(&mut b, m, &sigma);
            if !m_sigma.is_false() {
                let g = b.ground(&m_sigma, &mut eng).expect("closed member grounds");
                lhs = eng.g_or(lhs, g);
            }
        }
        let mut rhs = ground::ZERO;
        for beta in assignments(&bound_top) {
            let mut full = sigma.clone();
            full.extend(beta);
            let g = ground_expr(&mut eng, e, &full);
            rhs = eng.g_or(rhs, g);
        }
        prop_assert_eq!(lhs, rhs, "grounding mismatch at {:?}", sigma);
    }
    Ok(())
}

/// Does the expression contain an existential quantifier?
pub fn has_exists(e: &Expr) -> bool {
    match e {
        Expr::Rv { .. } | Expr::Cmp { .. } => false,
        Expr::And(l, r) | Expr::Or(l, r) => has_exists(l) || has_exists(r),
        Expr::Exists(..) => true,
    }
}

/// The exclusivity invariant: for a quantifier-free expression, the members
/// of its answer set are pairwise exclusive over the free space — at every
/// full assignment at most one member's store survives.
pub fn check_exclusivity_law(e: &Expr) -> Result<(), TestCaseError> {
    let prepared = context();
    let mut b = LiftedBuilder::new(prepared);

    let members = build_answer_set(&mut b, e);
    let free: Vec<usize> = free_vars(e).into_iter().collect();
    for sigma in assignments(&free) {
        let live = members
            .iter()
            .filter(|m| !substitute_assign(&mut b, m, &sigma).is_false())
            .count();
        prop_assert!(
            live <= 1,
            "answer-set members overlap at {sigma:?}: {live} live"
        );
    }
    Ok(())
}

/// The quantification law: grounding a graph with a bound variable equals
/// the disjunction of the groundings of its substitution instances.
pub fn check_quantify_law(e: &Expr) -> Result<(), TestCaseError> {
    let prepared = context();
    let mut b = LiftedBuilder::new(prepared.clone());
    let mut eng = GroundEngine::new(prepared.program.clone(), prepared.map.clone());

    let raw = build_answer_set(&mut b, e);
    let members = close_over_xy(&b, raw);
    let free: Vec<usize> = free_vars(e).into_iter().filter(|&v| v >= 2).collect();

    for m in &members {
        if m.omega.is_empty() {
            continue;
        }
        for sigma in assignments(&free) {
            let m_sigma = substitute_assign(&mut b, m, &sigma);
            if m_sigma.is_false() {
                continue;
            }
            for &x in m_sigma.omega.clone().iter() {
                let lhs = b.ground(&m_sigma, &mut eng).expect("closed member grounds");
                let (lo, hi) = m_sigma.eta.range(x).expect("bound variable has a range");
                let mut rhs = ground::ZERO;
                for k in lo..=hi {
                    let inst = b.substitute(&m_sigma, k, x);
                    if !inst.is_false() {
                        let g = b.ground(&inst, &mut eng).expect("instance grounds");
                        rhs = eng.g_or(rhs, g);
                    }
                }
                prop_assert_eq!(lhs, rhs, "quantification mismatch on {:?}", x);
            }
        }
    }
    Ok(())
}

/// The substitution law: pinning a variable removes it everywhere and keeps
/// exactly the solutions that agreed with the pinned value.
pub fn check_substitution_law(e: &Expr, pick: usize, k: i64) -> Result<(), TestCaseError> {
    let prepared = context();
    let mut b = LiftedBuilder::new(prepared);

    let members = build_answer_set(&mut b, e);
    for g in &members {
        let vars: Vec<VarId> = g.eta.vars().iter().map(|&(v, _)| v).collect();
        if vars.is_empty() {
            continue;
        }
        let x = vars[pick % vars.len()];
        let sub = b.substitute(g, k, x);

        prop_assert!(!sub.omega.contains(&x));
        if sub.is_false() {
            let pinned = g.eta.add(&AtomicConstraint::eq(Term::Var(x), Term::Const(k)));
            prop_assert!(
                pinned.is_false(),
                "substitution collapsed a satisfiable pin"
            );
            continue;
        }
        prop_assert!(!sub.eta.has_var(x), "pinned variable still in the store");
        prop_assert!(
            !b.tree_vars(sub.root).contains(&x),
            "pinned variable still labels the tree"
        );

        // Solution sets: the substituted store holds exactly the projections
        // of the original solutions that set x = k.
        let got: BTreeSet<Vec<(VarId, i64)>> = sub.eta.enumerate_solutions().into_iter().collect();
        let want: BTreeSet<Vec<(VarId, i64)>> = g
            .eta
            .enumerate_solutions()
            .into_iter()
            .filter(|s| s.iter().any(|&(v, val)| v == x && val == k))
            .map(|s| s.into_iter().filter(|&(v, _)| v != x).collect())
            .collect();
        prop_assert_eq!(got, want, "solution sets diverge after substitution");
    }
    Ok(())
}

/// One random constraint store over up to four variables, described by the
/// atomic constraints to add on top of the domain box.
#[derive(Debug, Clone)]
pub struct StoreSpec {
    /// Number of variables in play (1..=4).
    pub nvars: usize,
    /// `(strict, lhs, rhs, offset)` per constraint; variables are indices.
    pub atoms: Vec<(bool, usize, usize, i64)>,
    /// Variables to project away, as indices into the in-play set.
    pub drop: Vec<usize>,
}

/// Strategy for random constraint stores.
pub fn store_strategy() -> impl Strategy<Value = StoreSpec> {
    (
        1usize..=4,
        proptest::collection::vec(
            (any::<bool>(), 0usize..4, 0usize..4, -3i64..=3),
            0..=4,
        ),
        proptest::collection::vec(0usize..4, 0..=2),
    )
        .prop_map(|(nvars, atoms, drop)| StoreSpec { nvars, atoms, drop })
}

/// The constraint-store laws, checked against enumeration of the box.
pub fn check_store_laws(spec: &StoreSpec) -> Result<(), TestCaseError> {
    let mut pool = pxlift::constraints::VarPool::default();
    let vars: Vec<VarId> = VAR_NAMES[..spec.nvars]
        .iter()
        .map(|n| pool.intern(n))
        .collect();
    let doms: Vec<(VarId, (i64, i64))> = vars.iter().map(|&v| (v, DOMAIN)).collect();
    let mut f = ConstraintFormula::unconstrained(&doms);
    for &(strict, a, b, off) in &spec.atoms {
        let (a, b) = (a % spec.nvars, b % spec.nvars);
        if a == b {
            continue;
        }
        let c = if strict {
            AtomicConstraint::lt_off(Term::Var(vars[a]), Term::Var(vars[b]), off)
        } else {
            AtomicConstraint::eq_off(Term::Var(vars[a]), Term::Var(vars[b]), off)
        };
        f = f.add(&c);
    }

    // Enumerate the box.
    let mut points: Vec<Vec<(VarId, i64)>> = vec![vec![]];
    for &v in &vars {
        let mut next = Vec::new();
        for p in &points {
            for k in DOMAIN.0..=DOMAIN.1 {
                let mut p2 = p.clone();
                p2.push((v, k));
                next.push(p2);
            }
        }
        points = next;
    }
    let sols: Vec<&Vec<(VarId, i64)>> =
        points.iter().filter(|p| f.satisfied_by(p)).collect();

    prop_assert_eq!(f.is_false(), sols.is_empty(), "emptiness disagrees");
    if !f.is_false() {
        prop_assert_eq!(f.count_solutions(), sols.len(), "solution count");
        let got: BTreeSet<Vec<(VarId, i64)>> = f.enumerate_solutions().into_iter().collect();
        let want: BTreeSet<Vec<(VarId, i64)>> = sols.iter().map(|p| (*p).clone()).collect();
        prop_assert_eq!(got, want, "solution enumeration");

        for &v in &vars {
            let (lo, hi) = f.range(v).expect("satisfiable store has ranges");
            let vals: Vec<i64> = sols
                .iter()
                .map(|p| p.iter().find(|&&(w, _)| w == v).unwrap().1)
                .collect();
            prop_assert_eq!(lo, *vals.iter().min().unwrap(), "tight lower bound");
            prop_assert_eq!(hi, *vals.iter().max().unwrap(), "tight upper bound");
        }
    }

    // Exact projection: solutions of the projection are exactly the
    // projected solutions.
    let drop: Vec<VarId> = spec
        .drop
        .iter()
        .filter(|&&d| d < spec.nvars)
        .map(|&d| vars[d])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !drop.is_empty() && drop.len() < spec.nvars {
        let proj = f.project_out_many(&drop);
        let got: BTreeSet<Vec<(VarId, i64)>> = if proj.is_false() {
            BTreeSet::new()
        } else {
            proj.enumerate_solutions().into_iter().collect()
        };
        let want: BTreeSet<Vec<(VarId, i64)>> = sols
            .iter()
            .map(|p| {
                p.iter()
                    .copied()
                    .filter(|(v, _)| !drop.contains(v))
                    .collect()
            })
            .collect();
        prop_assert_eq!(got, want, "projection is not exact");
    }

    // Negation partitions the complement of the solution set within the box.
    let pieces = f.negate();
    for p in &points {
        let inside = f.satisfied_by(p);
        let hits = pieces.iter().filter(|q| q.satisfied_by(p)).count();
        if inside {
            prop_assert_eq!(hits, 0, "negation overlaps the store at {:?}", p);
        } else {
            prop_assert_eq!(hits, 1, "complement not partitioned at {:?}", p);
        }
    }
    Ok(())
}

/// Run `cases` random trials of a checker through the proptest runner with a
/// deterministic seed; returns the failure rendering, if any.
pub fn run_suite<S, F>(strategy: S, cases: u32, check: F) -> Result<(), String>
where
    S: Strategy,
    F: Fn(&S::Value) -> Result<(), TestCaseError>,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(
        config,
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    runner
        .run(&strategy, |v| check(&v))
        .map_err(|e| match e {
            TestError::Fail(reason, value) => {
                format!("failed: {reason} on {value:?}")
            }
            TestError::Abort(reason) => format!("aborted: {reason}"),
        })
}
