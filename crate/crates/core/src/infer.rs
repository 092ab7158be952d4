//! Lifted probability evaluation over explanation graphs.
//!
//! A closed lifted explanation graph `(Ω : η, ψ)` denotes the disjunction of
//! its groundings over every valuation of Ω admitted by η.  This module
//! computes the probability of that disjunction *without* grounding, by
//! dynamic programming over the graph structure:
//!
//!  * `f(σ, ψ)` — probability of subtree ψ once the instance variables fixed
//!    by the partial valuation σ are substituted in;
//!  * `g(j, σ, ψ)` — the weighted child sum of a node `(s, X)[...]` at the
//!    fixed instance `X = j`;
//!  * `h(j, σ, ψ)` — probability of the disjunction of ψ's groundings over
//!    `X ∈ [j, max(X)]`, computed by the backward scan
//!    `h(j) = g(j) + (1 − P(ψ̂_X)) · h(j+1)`, where ψ̂_X is ψ with every
//!    frontier subtree replaced by the 1-leaf.
//!
//! The scan is only sound when a grounding at a larger instance never
//! contributes an explanation that the run over smaller instances has not
//! already accounted for — the *frontier subsumption* property.
//! [`check_frontier_subsumption`] decides it per bound variable;
//! [`lifted_prob`] refuses graphs that fail it with a typed error so that
//! callers can fall back to ground evaluation, and [`emit_recurrences`]
//! renders the equation system the evaluator solves, both for inspection and
//! for independent re-evaluation.
//!
//! Memoisation is keyed by *relevance*: a subtree's cache key contains only
//! the assigned variables that can actually move the value — those linked to
//! a subtree variable by a constraint tighter than the domain box.  Scan
//! cells `h(j)` are additionally keyed without the scanned variable's lower
//! neighbours (the entry point does not change the cell values above it), so
//! repeated scans from different entry points share one column of cells and
//! the total cell count stays linear in the population size for chains of
//! order constraints.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::constraints::{ConstraintFormula, Term, VarId};
use crate::lifted::{LiftedBuilder, LiftedGraph, TreeId, ONE_TREE, ZERO_TREE};

/// Why lifted evaluation refused a graph.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    /// The constraint store mentions a variable outside Ω; closed graphs only.
    #[error("graph has a free variable '{0}'; probability is only defined for closed graphs")]
    OpenGraph(String),
    /// Some bound variable has more than one topmost occurrence.
    #[error("a bound variable has more than one topmost occurrence; the scan recurrence does not apply")]
    IllStructured,
    /// Frontier subsumption fails for the named bound variables.
    #[error("frontier subsumption fails for: {}", .0.join(", "))]
    SubsumptionFailed(Vec<String>),
}

/// Per-variable outcome of the frontier subsumption check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsumptionReport {
    /// `(variable, holds)` for every bound variable of the graph.
    pub per_var: Vec<(VarId, bool)>,
}

impl SubsumptionReport {
    /// True when every bound variable satisfies the property.
    pub fn passes(&self) -> bool {
        self.per_var.iter().all(|&(_, ok)| ok)
    }

    /// The variables for which the property fails.
    pub fn failing(&self) -> Vec<VarId> {
        self.per_var
            .iter()
            .filter(|&&(_, ok)| !ok)
            .map(|&(v, _)| v)
            .collect()
    }
}

/// Size of the memo tables after one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Distinct `(subtree, relevant valuation)` cells.
    pub f_cells: usize,
    /// Distinct `(subtree, instance, relevant valuation)` scan cells.
    pub h_cells: usize,
}

impl EvalStats {
    /// Total number of memo cells.
    pub fn total(&self) -> usize {
        self.f_cells + self.h_cells
    }
}

/// The non-zero maximal subtrees of `t` that do not mention `x`.
///
/// Walks top-down and cuts at the first `x`-free subtree; the 0-leaf is
/// dropped, the 1-leaf kept.  Order is first-encounter, duplicates (shared
/// subtrees) appear once.
pub fn frontier(b: &LiftedBuilder, t: TreeId, x: VarId) -> Vec<TreeId> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    frontier_rec(b, t, x, &mut seen, &mut out);
    out
}

fn frontier_rec(
    b: &LiftedBuilder,
    t: TreeId,
    x: VarId,
    seen: &mut BTreeSet<TreeId>,
    out: &mut Vec<TreeId>,
) {
    if t == ZERO_TREE || !seen.insert(t) {
        return;
    }
    if t == ONE_TREE || !b.tree_vars(t).contains(&x) {
        out.push(t);
        return;
    }
    let children = b.tree(t).expect("interned tree").children.clone();
    for c in children {
        frontier_rec(b, c, x, seen, out);
    }
}

/// `P(ψ̂_X)`: the probability of `t` with every frontier subtree for `x`
/// replaced by the 1-leaf.
///
/// This is the chance that the decision process reaches *some* frontier
/// subtree — "no instance at this level decided the query yet" — and weights
/// the carry term of the scan recurrence.
pub fn hat_prob(b: &LiftedBuilder, t: TreeId, x: VarId) -> f64 {
    let mut memo = HashMap::new();
    hat_rec(b, t, x, &mut memo)
}

fn hat_rec(b: &LiftedBuilder, t: TreeId, x: VarId, memo: &mut HashMap<TreeId, f64>) -> f64 {
    if t == ZERO_TREE {
        return 0.0;
    }
    if t == ONE_TREE || !b.tree_vars(t).contains(&x) {
        return 1.0;
    }
    if let Some(&v) = memo.get(&t) {
        return v;
    }
    let node = b.tree(t).expect("interned tree");
    let (switch, children) = (node.switch, node.children.clone());
    let probs = &b.prepared().program.switches[switch].probs.clone();
    let mut sum = 0.0;
    for (i, &c) in children.iter().enumerate() {
        sum += probs[i] * hat_rec(b, c, x, memo);
    }
    memo.insert(t, sum);
    sum
}

/// A switch literal with its instance term normalised for subset tests:
/// either a base variable plus offset or a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum NormTerm {
    Base(VarId, i64),
    Num(i64),
}

type NormLit = (usize, NormTerm, usize);

/// Decide, for every bound variable of `g`, whether the scan recurrence is
/// sound.
///
/// For a variable X the check compares explanation sets syntactically: every
/// explanation of the whole tree, with X advanced by one (`σ₂ = {X+1/X}`),
/// must contain some explanation of each frontier subtree with the store's
/// order constraints substituted in (`σ₁` maps Y to `X + k` whenever the
/// store proves `Y ≥ X + k` more tightly than the domain box does).
pub fn check_frontier_subsumption(b: &LiftedBuilder, g: &LiftedGraph) -> SubsumptionReport {
    let whole = b.lifted_explanations(g);
    let mut per_var = Vec::new();
    for &x in &g.omega {
        per_var.push((x, var_subsumed(b, g, x, &whole)));
    }
    SubsumptionReport { per_var }
}

fn var_subsumed(
    b: &LiftedBuilder,
    g: &LiftedGraph,
    x: VarId,
    whole: &[crate::lifted::LiftedExplanation],
) -> bool {
    // σ₁: y ↦ x + k for every bound `x − y ≤ −k` that is tighter than the box.
    let mut sigma1: HashMap<VarId, i64> = HashMap::new();
    for &(y, _) in g.eta.vars() {
        if y != x {
            if let Some(bound) = g.eta.tight_upper_diff(x, y) {
                sigma1.insert(y, -bound);
            }
        }
    }

    // Explanations of the whole tree under σ₂ = {x+1/x}.
    let e2s: Vec<BTreeSet<NormLit>> = whole
        .iter()
        .map(|e| {
            e.literals
                .iter()
                .map(|&(s, t, o)| {
                    let nt = match t {
                        Term::Const(c) => NormTerm::Num(c),
                        Term::Var(v) if v == x => NormTerm::Base(x, 1),
                        Term::Var(v) => NormTerm::Base(v, 0),
                    };
                    (s, nt, o)
                })
                .collect()
        })
        .collect();

    for sub in frontier(b, g.root, x) {
        let phi = LiftedGraph {
            omega: g.omega.clone(),
            eta: g.eta.clone(),
            root: sub,
        };
        let e1s: Vec<BTreeSet<NormLit>> = b
            .lifted_explanations(&phi)
            .iter()
            .map(|e| {
                e.literals
                    .iter()
                    .map(|&(s, t, o)| {
                        let nt = match t {
                            Term::Const(c) => NormTerm::Num(c),
                            Term::Var(v) => match sigma1.get(&v) {
                                Some(&k) => NormTerm::Base(x, k),
                                None => NormTerm::Base(v, 0),
                            },
                        };
                        (s, nt, o)
                    })
                    .collect()
            })
            .collect();
        for e2 in &e2s {
            if !e1s.iter().any(|e1| e1.is_subset(e2)) {
                return false;
            }
        }
    }
    true
}

/// Evaluate the probability of a closed, well-structured graph by the scan
/// recurrences, or explain why that is not possible.
///
/// Returns the probability together with the memo-table sizes; the latter
/// grow linearly in the population size for order-constraint chains.
pub fn lifted_prob(b: &LiftedBuilder, g: &LiftedGraph) -> Result<(f64, EvalStats), InferError> {
    if g.is_false() || g.root == ZERO_TREE {
        return Ok((0.0, EvalStats::default()));
    }
    for &(v, _) in g.eta.vars() {
        if !g.omega.contains(&v) {
            return Err(InferError::OpenGraph(b.pool.name(v).to_string()));
        }
    }
    if !b.check_well_structured(g) {
        return Err(InferError::IllStructured);
    }
    let report = check_frontier_subsumption(b, g);
    if !report.passes() {
        let names = report
            .failing()
            .into_iter()
            .map(|v| b.pool.name(v).to_string())
            .collect();
        return Err(InferError::SubsumptionFailed(names));
    }
    let mut ev = Eval::new(b, g.eta.clone());
    let p = ev.f(g.root, &g.eta, &BTreeMap::new());
    let stats = EvalStats {
        f_cells: ev.f_memo.len(),
        h_cells: ev.h_memo.len(),
    };
    Ok((p, stats))
}

/// The dynamic-programming state of one evaluation run.
struct Eval<'a> {
    b: &'a LiftedBuilder,
    /// The full store of the graph being evaluated; relevance sets are
    /// computed against it so that they do not depend on the valuation.
    root_eta: ConstraintFormula,
    f_memo: HashMap<(TreeId, Vec<(VarId, i64)>), f64>,
    h_memo: HashMap<(TreeId, i64, Vec<(VarId, i64)>), f64>,
    /// Lowest instance filled per scan column, with its value, so a later
    /// entry below it extends the column instead of rescanning.
    h_low: HashMap<(TreeId, Vec<(VarId, i64)>), (i64, f64)>,
    hat_memo: HashMap<TreeId, f64>,
    rel_memo: HashMap<TreeId, Vec<VarId>>,
    hrel_memo: HashMap<TreeId, Vec<VarId>>,
}

impl<'a> Eval<'a> {
    fn new(b: &'a LiftedBuilder, root_eta: ConstraintFormula) -> Self {
        Eval {
            b,
            root_eta,
            f_memo: HashMap::new(),
            h_memo: HashMap::new(),
            h_low: HashMap::new(),
            hat_memo: HashMap::new(),
            rel_memo: HashMap::new(),
            hrel_memo: HashMap::new(),
        }
    }

    /// Variables whose assigned value can change the value of subtree `t`:
    /// the subtree's own variables plus every variable linked to one of them
    /// by a difference bound tighter than the domain box.
    fn rel_f(&mut self, t: TreeId) -> Vec<VarId> {
        if let Some(r) = self.rel_memo.get(&t) {
            return r.clone();
        }
        let tv = self.b.tree_vars(t);
        let mut rel = BTreeSet::new();
        for &(v, _) in self.root_eta.vars() {
            let linked = tv.contains(&v)
                || tv.iter().any(|&w| {
                    w != v
                        && (self.root_eta.tight_upper_diff(v, w).is_some()
                            || self.root_eta.tight_upper_diff(w, v).is_some())
                });
            if linked {
                rel.insert(v);
            }
        }
        let rel: Vec<VarId> = rel.into_iter().collect();
        self.rel_memo.insert(t, rel.clone());
        rel
    }

    /// Key variables for the scan column of node `t` over `x`: the variables
    /// that determine the scan's upper end or any cell value — but not the
    /// entry point, which is deliberately excluded so columns are shared.
    fn h_rel(&mut self, t: TreeId, x: VarId) -> Vec<VarId> {
        if let Some(r) = self.hrel_memo.get(&t) {
            return r.clone();
        }
        let mut set: BTreeSet<VarId> = self.root_eta.upper_neighbors(x).into_iter().collect();
        let children = self.b.tree(t).expect("interned tree").children.clone();
        for c in children {
            for v in self.rel_f(c) {
                set.insert(v);
            }
        }
        set.remove(&x);
        let rel: Vec<VarId> = set.into_iter().collect();
        self.hrel_memo.insert(t, rel.clone());
        rel
    }

    fn project(sigma: &BTreeMap<VarId, i64>, rel: &[VarId]) -> Vec<(VarId, i64)> {
        rel.iter()
            .filter_map(|v| sigma.get(v).map(|&k| (*v, k)))
            .collect()
    }

    fn hat(&mut self, t: TreeId, x: VarId) -> f64 {
        if let Some(&v) = self.hat_memo.get(&t) {
            return v;
        }
        let v = hat_prob(self.b, t, x);
        self.hat_memo.insert(t, v);
        v
    }

    /// `f(σ, ψ)` with `phi` = the store after substituting σ.
    fn f(&mut self, t: TreeId, phi: &ConstraintFormula, sigma: &BTreeMap<VarId, i64>) -> f64 {
        if t == ZERO_TREE {
            return 0.0;
        }
        if t == ONE_TREE {
            // The store is kept satisfiable along the way, so the leaf holds.
            return 1.0;
        }
        let rel = self.rel_f(t);
        let key = (t, Self::project(sigma, &rel));
        if let Some(&v) = self.f_memo.get(&key) {
            return v;
        }
        let node = self.b.tree(t).expect("interned tree");
        let (switch, term, children) = (node.switch, node.term, node.children.clone());
        let val = match term {
            // A fixed instance: the node is a plain weighted sum.
            Term::Const(_) => self.weighted(switch, &children, phi, sigma),
            // An instance pinned higher up (same variable under a second
            // switch): also a plain weighted sum.
            Term::Var(x) if sigma.contains_key(&x) => self.weighted(switch, &children, phi, sigma),
            // A fresh bound variable: scan its admissible range.
            Term::Var(x) => match phi.range(x) {
                Err(_) => 0.0,
                Ok((l, u)) if l > u => 0.0,
                Ok((l, u)) => self.scan(t, x, l, u, phi, sigma),
            },
        };
        self.f_memo.insert(key, val);
        val
    }

    fn weighted(
        &mut self,
        switch: usize,
        children: &[TreeId],
        phi: &ConstraintFormula,
        sigma: &BTreeMap<VarId, i64>,
    ) -> f64 {
        let probs = self.b.prepared().program.switches[switch].probs.clone();
        let mut sum = 0.0;
        for (i, &c) in children.iter().enumerate() {
            if probs[i] != 0.0 {
                sum += probs[i] * self.f(c, phi, sigma);
            }
        }
        sum
    }

    /// Backward scan `h(u) = g(u)`, `h(c) = g(c) + (1 − P(ψ̂)) · h(c+1)`,
    /// returning `h(l)`.  Cells are cached per column; a column already
    /// filled down to `l` is answered from the cache, one filled part-way is
    /// extended downward only.
    fn scan(
        &mut self,
        t: TreeId,
        x: VarId,
        l: i64,
        u: i64,
        phi: &ConstraintFormula,
        sigma: &BTreeMap<VarId, i64>,
    ) -> f64 {
        let hat = self.hat(t, x);
        let hrel = self.h_rel(t, x);
        let proj = Self::project(sigma, &hrel);
        let column = (t, proj.clone());
        let (mut next, start) = match self.h_low.get(&column) {
            Some(&(low_c, low_v)) => {
                if low_c <= l {
                    return *self
                        .h_memo
                        .get(&(t, l, proj))
                        .expect("scan cell filled down to the entry point");
                }
                (low_v, low_c - 1)
            }
            None => (0.0, u),
        };
        for c in (l..=start).rev() {
            let g = self.g_at(t, x, c, phi, sigma);
            let v = if c == u { g } else { g + (1.0 - hat) * next };
            self.h_memo.insert((t, c, proj.clone()), v);
            next = v;
        }
        self.h_low.insert(column, (l, next));
        next
    }

    /// `g(c, σ, ψ)`: the weighted child sum at instance `x = c`.
    fn g_at(
        &mut self,
        t: TreeId,
        x: VarId,
        c: i64,
        phi: &ConstraintFormula,
        sigma: &BTreeMap<VarId, i64>,
    ) -> f64 {
        let phi_c = match phi.substitute_value(c, x) {
            Ok(f) if !f.is_false() => f,
            _ => return 0.0,
        };
        let mut sigma_c = sigma.clone();
        sigma_c.insert(x, c);
        let node = self.b.tree(t).expect("interned tree");
        let (switch, children) = (node.switch, node.children.clone());
        self.weighted(switch, &children, &phi_c, &sigma_c)
    }
}

// ---------------------------------------------------------------------------
// Recurrence emission
// ---------------------------------------------------------------------------

/// Reference to the value a child position contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildRef {
    /// The 0-leaf.
    Zero,
    /// The 1-leaf.
    One,
    /// Another equation family.
    Family(usize),
}

/// A bound expression: `max(konst, v₁+k₁, …)` for lower bounds and
/// `min(konst, v₁+k₁, …)` for upper bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bound {
    /// The constant piece (the closed numeric bound).
    pub konst: i64,
    /// Symbolic pieces `v + k` over enclosing scan variables.
    pub terms: Vec<(VarId, i64)>,
}

impl Bound {
    fn eval_lower(&self, env: &BTreeMap<VarId, i64>) -> i64 {
        let mut b = self.konst;
        for &(v, k) in &self.terms {
            let val = env.get(&v).expect("bound variable assigned") + k;
            b = b.max(val);
        }
        b
    }

    fn eval_upper(&self, env: &BTreeMap<VarId, i64>) -> i64 {
        let mut b = self.konst;
        for &(v, k) in &self.terms {
            let val = env.get(&v).expect("bound variable assigned") + k;
            b = b.min(val);
        }
        b
    }
}

/// How one equation family computes its value.
#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// A fixed-instance node: `f = Σᵢ πᵢ·childᵢ`.
    Weighted {
        /// `(probability, child)` per declared outcome.
        terms: Vec<(f64, ChildRef)>,
    },
    /// A scanned node: `f = h(lower)` with
    /// `h(j) = g(j) + (1 − hat)·h(j+1)` up to `upper`, `h(upper) = g(upper)`,
    /// and `g(j) = Σᵢ πᵢ·childᵢ[x := j]`.
    Scan {
        /// The scanned instance variable.
        var: VarId,
        /// Lower end of the scan (max of its pieces).
        lower: Bound,
        /// Upper end of the scan (min of its pieces).
        upper: Bound,
        /// `P(ψ̂)` for this node: the carry factor is `1 − hat`.
        hat: f64,
        /// `(probability, child)` per declared outcome.
        terms: Vec<(f64, ChildRef)>,
    },
}

/// One equation family — the `f`/`g`/`h` equations of one graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    /// Outer scan variables this family's value depends on.
    pub params: Vec<VarId>,
    /// The equation shape.
    pub kind: FamilyKind,
}

/// The emitted equation system of a graph: one family per internal node, the
/// root family first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceSystem {
    /// Families in first-visit order; index 0 is the root when the root is
    /// an internal node.
    pub families: Vec<Family>,
    /// The root value: a leaf constant or the root family.
    pub root: ChildRef,
    var_names: BTreeMap<VarId, String>,
}

/// Emit the equation system for a closed, well-structured graph that passes
/// the frontier subsumption check.
///
/// The system is self-contained: it can be displayed and re-evaluated
/// without the builder, and [`RecurrenceSystem::eval`] must agree with
/// [`lifted_prob`].
pub fn emit_recurrences(b: &LiftedBuilder, g: &LiftedGraph) -> Result<RecurrenceSystem, InferError> {
    if g.is_false() || g.root == ZERO_TREE {
        return Ok(RecurrenceSystem {
            families: Vec::new(),
            root: ChildRef::Zero,
            var_names: BTreeMap::new(),
        });
    }
    for &(v, _) in g.eta.vars() {
        if !g.omega.contains(&v) {
            return Err(InferError::OpenGraph(b.pool.name(v).to_string()));
        }
    }
    if !b.check_well_structured(g) {
        return Err(InferError::IllStructured);
    }
    let report = check_frontier_subsumption(b, g);
    if !report.passes() {
        let names = report
            .failing()
            .into_iter()
            .map(|v| b.pool.name(v).to_string())
            .collect();
        return Err(InferError::SubsumptionFailed(names));
    }

    let mut families = Vec::new();
    let mut map = HashMap::new();
    let root = build_family(b, &g.eta, g.root, &[], &mut map, &mut families);
    let mut var_names = BTreeMap::new();
    for &(v, _) in g.eta.vars() {
        var_names.insert(v, b.pool.name(v).to_string());
    }
    Ok(RecurrenceSystem {
        families,
        root,
        var_names,
    })
}

fn build_family(
    b: &LiftedBuilder,
    eta: &ConstraintFormula,
    t: TreeId,
    ancestors: &[VarId],
    map: &mut HashMap<TreeId, usize>,
    families: &mut Vec<Family>,
) -> ChildRef {
    if t == ZERO_TREE {
        return ChildRef::Zero;
    }
    if t == ONE_TREE {
        return ChildRef::One;
    }
    if let Some(&i) = map.get(&t) {
        return ChildRef::Family(i);
    }
    let index = families.len();
    families.push(Family {
        params: Vec::new(),
        kind: FamilyKind::Weighted { terms: Vec::new() },
    });
    map.insert(t, index);

    let node = b.tree(t).expect("interned tree");
    let (switch, term, children) = (node.switch, node.term, node.children.clone());
    let probs = b.prepared().program.switches[switch].probs.clone();

    let scan_var = match term {
        Term::Var(x) if !ancestors.contains(&x) => Some(x),
        _ => None,
    };
    let child_ancestors: Vec<VarId> = match scan_var {
        Some(x) => {
            let mut v = ancestors.to_vec();
            v.push(x);
            v
        }
        None => ancestors.to_vec(),
    };
    let terms: Vec<(f64, ChildRef)> = children
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            (
                probs[i],
                build_family(b, eta, c, &child_ancestors, map, families),
            )
        })
        .collect();

    let mut params: BTreeSet<VarId> = BTreeSet::new();
    for &(_, r) in &terms {
        if let ChildRef::Family(j) = r {
            for &p in &families[j].params {
                params.insert(p);
            }
        }
    }
    let kind = match scan_var {
        Some(x) => {
            let (lk, lt) = eta.lower_terms(x, ancestors);
            let (uk, ut) = eta.upper_terms(x, ancestors);
            for &(v, _) in lt.iter().chain(ut.iter()) {
                params.insert(v);
            }
            params.remove(&x);
            FamilyKind::Scan {
                var: x,
                lower: Bound {
                    konst: lk,
                    terms: lt,
                },
                upper: Bound {
                    konst: uk,
                    terms: ut,
                },
                hat: hat_prob(b, t, x),
                terms,
            }
        }
        None => FamilyKind::Weighted { terms },
    };
    families[index] = Family {
        params: params.into_iter().collect(),
        kind,
    };
    ChildRef::Family(index)
}

impl RecurrenceSystem {
    /// Evaluate the whole system under `env` (assignments for any free
    /// parameters of the root; empty for a closed graph).
    pub fn eval(&self, env: &BTreeMap<VarId, i64>) -> f64 {
        self.eval_ref(self.root, env)
    }

    /// Evaluate one reference.
    pub fn eval_ref(&self, r: ChildRef, env: &BTreeMap<VarId, i64>) -> f64 {
        match r {
            ChildRef::Zero => 0.0,
            ChildRef::One => 1.0,
            ChildRef::Family(i) => self.eval_family(i, env),
        }
    }

    /// Evaluate family `i`'s `f` equation under `env`.
    pub fn eval_family(&self, i: usize, env: &BTreeMap<VarId, i64>) -> f64 {
        match &self.families[i].kind {
            FamilyKind::Weighted { terms } => terms
                .iter()
                .map(|&(p, r)| if p != 0.0 { p * self.eval_ref(r, env) } else { 0.0 })
                .sum(),
            FamilyKind::Scan { lower, upper, .. } => {
                let l = lower.eval_lower(env);
                let u = upper.eval_upper(env);
                if l > u {
                    0.0
                } else {
                    self.eval_h(i, l, env)
                }
            }
        }
    }

    /// Evaluate family `i`'s `h` equation at instance `j` under `env`.
    ///
    /// Only meaningful for scan families; `j` past the upper end gives 0.
    pub fn eval_h(&self, i: usize, j: i64, env: &BTreeMap<VarId, i64>) -> f64 {
        let FamilyKind::Scan {
            var,
            upper,
            hat,
            terms,
            ..
        } = &self.families[i].kind
        else {
            panic!("eval_h on a family without a scan");
        };
        let u = upper.eval_upper(env);
        if j > u {
            return 0.0;
        }
        let mut next = 0.0;
        for c in (j..=u).rev() {
            let mut env_c = env.clone();
            env_c.insert(*var, c);
            let g: f64 = terms
                .iter()
                .map(|&(p, r)| if p != 0.0 { p * self.eval_ref(r, &env_c) } else { 0.0 })
                .sum();
            next = if c == u { g } else { g + (1.0 - hat) * next };
        }
        next
    }

    fn name(&self, v: VarId) -> String {
        self.var_names
            .get(&v)
            .cloned()
            .unwrap_or_else(|| format!("v{}", v.0))
    }

    fn piece(&self, v: VarId, k: i64) -> String {
        match k {
            0 => self.name(v),
            k if k > 0 => format!("{}+{}", self.name(v), k),
            k => format!("{}-{}", self.name(v), -k),
        }
    }

    fn bound_expr(&self, b: &Bound, is_lower: bool) -> String {
        if b.terms.is_empty() {
            return b.konst.to_string();
        }
        let mut pieces = vec![b.konst.to_string()];
        for &(v, k) in &b.terms {
            pieces.push(self.piece(v, k));
        }
        let op = if is_lower { "max" } else { "min" };
        format!("{}({})", op, pieces.join(", "))
    }

    fn args(&self, params: &[VarId]) -> String {
        params
            .iter()
            .map(|&v| self.name(v))
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn call(&self, r: ChildRef, env_args: &str) -> String {
        match r {
            ChildRef::Zero => "0".to_string(),
            ChildRef::One => "1".to_string(),
            ChildRef::Family(j) => format!("f{}({})", j + 1, env_args_of(self, j, env_args)),
        }
    }
}

/// Argument list for a call to family `j`: its own parameters, except that a
/// caller's scan variable shows up by name via the shared namespace.
fn env_args_of(sys: &RecurrenceSystem, j: usize, _caller: &str) -> String {
    sys.args(&sys.families[j].params)
}

impl fmt::Display for RecurrenceSystem {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.root {
            ChildRef::Zero => return writeln!(out, "f = 0"),
            ChildRef::One => return writeln!(out, "f = 1"),
            ChildRef::Family(_) => {}
        }
        for (i, fam) in self.families.iter().enumerate() {
            let n = i + 1;
            let ps = self.args(&fam.params);
            match &fam.kind {
                FamilyKind::Weighted { terms } => {
                    let sum = terms
                        .iter()
                        .map(|&(p, r)| format!("{}·{}", p, self.call(r, &ps)))
                        .collect::<Vec<_>>()
                        .join(" + ");
                    writeln!(out, "f{}({}) = {}", n, ps, sum)?;
                }
                FamilyKind::Scan {
                    var,
                    lower,
                    upper,
                    hat,
                    terms,
                } => {
                    let x = self.name(*var);
                    let lo = self.bound_expr(lower, true);
                    let hi = self.bound_expr(upper, false);
                    writeln!(
                        out,
                        "f{}({}) = h{}({})   [0 if {} > {}]",
                        n, ps, n, lo, lo, hi
                    )?;
                    writeln!(
                        out,
                        "h{n}({x}) = g{n}({x}) + (1 - {hat})·h{n}({x}+1)   if {x} < {hi}",
                    )?;
                    writeln!(out, "h{n}({x}) = g{n}({x})   if {x} = {hi}")?;
                    let sum = terms
                        .iter()
                        .map(|&(p, r)| format!("{}·{}", p, self.call(r, &ps)))
                        .collect::<Vec<_>>()
                        .join(" + ");
                    writeln!(out, "g{n}({x}) = {sum}")?;
                    writeln!(out, "f̂{n} = {hat}")?;
                }
            }
        }
        Ok(())
    }
}
