//! Lifted explanation graphs: population-size-independent explanation
//! structures for queries over typed random processes.
//!
//! A *lifted explanation graph* is a pair (Ω : η, ψ) where
//!
//! * Ω is a set of existentially quantified (bound) instance variables,
//! * η is a conjunction of instance constraints over bound and free
//!   variables (see [`crate::constraints`]), and
//! * ψ is an ordered decision tree whose internal nodes are labeled with
//!   `(switch, instance-term)` pairs and whose outgoing edges correspond to
//!   the outcomes of the switch.  Leaves are the boolean constants 0 and 1.
//!
//! The graph denotes, for every assignment σ of the free variables that
//! satisfies η's projection, the disjunction over all assignments ν of Ω
//! satisfying η of the conjunctions of switch outcomes along 1-paths of ψ.
//! Trees are hash-consed, so shared substructure is represented once and
//! node identity is structural.
//!
//! Node labels are ordered instance-first: `(s, t) < (s′, t′)` iff η entails
//! `t < t′`, or `t = t′` and the switch name of `s` precedes that of `s′`.
//! Along every path of a well-formed tree the labels strictly increase,
//! which is what makes the scan-based probability computation in
//! [`crate::infer`] possible.
//!
//! The central operations are the set-valued conjunction [`LiftedBuilder::l_and`]
//! and disjunction [`LiftedBuilder::l_or`].  Their results are *answer sets*:
//! lists of graphs whose free-variable regions are mutually exclusive, such
//! that for every assignment of the free variables exactly the graphs whose
//! η is satisfied contribute, and their disjunction equals the combined
//! denotation.  Conjunction refines the region cross-product; disjunction
//! additionally keeps each operand on the region where the other is
//! unsatisfiable.  When two incomparable bound labels over the same switch
//! range over the same interval, the two variables are merged into a fresh
//! one, which is how a disjunction of `n` structurally similar branches
//! stays a single graph instead of an `n`-way union.
//!
//! [`LiftedBuilder::ground`] instantiates a closed graph over the concrete
//! population, yielding an ordered decision diagram in a [`GroundEngine`];
//! it is the bridge used to cross-check lifted results against ground
//! inference.

use std::collections::{BTreeSet, HashMap};

use crate::constraints::{AtomicConstraint, ConstraintFormula, Term, VarId, VarPool};
use crate::ground::{self, GroundEngine, NodeId};
use crate::program::{Atom, ClauseTerm, Goal, Prepared, Value};

/// Identifier of a hash-consed decision tree node.
///
/// Ids `0` and `1` are reserved for the constant leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeId(pub u32);

/// The constant-false leaf.
pub const ZERO_TREE: TreeId = TreeId(0);
/// The constant-true leaf.
pub const ONE_TREE: TreeId = TreeId(1);

impl TreeId {
    /// True for the two constant leaves.
    pub fn is_leaf(self) -> bool {
        self.0 < 2
    }
}

/// An internal decision-tree node `(switch, t)[v_1: child_1, ..., v_k: child_k]`.
///
/// `children` is indexed by outcome position in the switch declaration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LiftedNode {
    /// Index of the switch in the program's declaration list.
    pub switch: usize,
    /// The instance term: a variable or an integer constant.
    pub term: Term,
    /// One subtree per declared outcome of the switch.
    pub children: Vec<TreeId>,
}

/// A lifted explanation graph `(Ω : η, ψ)`.
///
/// `omega` lists the bound variables; all other variables of `eta` are free.
/// The tree `root` lives in the [`LiftedBuilder`] that created the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedGraph {
    /// Bound (existentially quantified) variables.
    pub omega: BTreeSet<VarId>,
    /// The instance-constraint store, including variable domains.
    pub eta: ConstraintFormula,
    /// Root of the decision tree.
    pub root: TreeId,
}

impl LiftedGraph {
    /// True if this graph is the canonical unsatisfiable graph.
    pub fn is_false(&self) -> bool {
        self.root == ZERO_TREE && self.eta.is_false()
    }
}

/// Result of comparing two node labels under a constraint store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeComparison {
    /// The left label precedes the right on every satisfying assignment.
    Lt,
    /// The right label precedes the left on every satisfying assignment.
    Gt,
    /// Both labels coincide on every satisfying assignment.
    Eq,
    /// None of the above is entailed.
    Incomparable,
}

/// Errors raised while building, transforming, or grounding lifted graphs.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LiftedError {
    /// A switch name that the program does not declare.
    #[error("unknown switch '{0}'")]
    UnknownSwitch(String),
    /// A value that is not an outcome of the given switch.
    #[error("'{value}' is not an outcome of switch '{switch}'")]
    UnknownOutcome {
        /// The switch whose outcome list was consulted.
        switch: String,
        /// The offending value.
        value: String,
    },
    /// A constant that is not a declared population element.
    #[error("unknown element '{0}'")]
    UnknownElement(String),
    /// A query argument was a variable; queries must be ground.
    #[error("query argument '{0}' is not ground")]
    NonGroundQuery(String),
    /// A call to a predicate with no defining clauses.
    #[error("undefined predicate '{0}'")]
    UndefinedPredicate(String),
    /// A recursive call chain, which this engine does not support.
    #[error("recursive call to '{0}' is not supported")]
    Recursion(String),
    /// An instance variable appeared without an associated population.
    #[error("variable '{0}' has no population; a membership goal is missing")]
    MissingDomain(String),
    /// Quantification over a variable that the constraint store does not mention.
    #[error("cannot quantify over '{0}': the constraint store does not mention it")]
    MissingVariable(String),
    /// Grounding reached a tree variable that is neither bound nor constant.
    #[error("grounding reached free variable '{0}'")]
    FreeVariable(String),
    /// Quantification left the answers for a predicate overlapping on their
    /// remaining free space, so their weights cannot be summed.
    #[error("the answers for '{0}' overlap after quantification")]
    OverlappingAnswers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    And,
    Or,
}

/// One conjunctive explanation read off a graph: a satisfiable constraint
/// region together with the switch-outcome literals along one 1-path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedExplanation {
    /// Bound variables of the originating graph.
    pub omega: BTreeSet<VarId>,
    /// Constraints under which the path is taken.
    pub eta: ConstraintFormula,
    /// `(switch index, instance term, outcome index)` literals in path order.
    pub literals: Vec<(usize, Term, usize)>,
}

/// Builder and arena for lifted explanation graphs over one prepared program.
///
/// Owns the hash-consed tree nodes, the variable pool shared by all graphs,
/// and the program metadata (switch declarations and the population map).
pub struct LiftedBuilder {
    prepared: Prepared,
    /// Rank of each switch in name order; used for label comparison.
    switch_rank: Vec<usize>,
    /// Pool of instance variables; shared by every graph built here.
    pub pool: VarPool,
    nodes: Vec<LiftedNode>,
    dedup: HashMap<LiftedNode, TreeId>,
}

impl LiftedBuilder {
    /// Create a builder for `prepared`.
    pub fn new(prepared: Prepared) -> Self {
        let mut names: Vec<(String, usize)> = prepared
            .program
            .switches
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        names.sort();
        let mut switch_rank = vec![0usize; prepared.program.switches.len()];
        for (rank, (_, idx)) in names.iter().enumerate() {
            switch_rank[*idx] = rank;
        }
        LiftedBuilder {
            prepared,
            switch_rank,
            pool: VarPool::new(),
            nodes: Vec::new(),
            dedup: HashMap::new(),
        }
    }

    /// The prepared program this builder works over.
    pub fn prepared(&self) -> &Prepared {
        &self.prepared
    }

    /// Look up an internal node; `None` for the constant leaves.
    pub fn tree(&self, id: TreeId) -> Option<&LiftedNode> {
        if id.is_leaf() {
            None
        } else {
            self.nodes.get(id.0 as usize - 2)
        }
    }

    /// Number of distinct internal tree nodes allocated so far.
    pub fn tree_count(&self) -> usize {
        self.nodes.len()
    }

    /// Intern a node, applying the standard reduction: a node whose children
    /// are all equal is replaced by that child.
    pub fn mk_tree(&mut self, switch: usize, term: Term, children: Vec<TreeId>) -> TreeId {
        debug_assert_eq!(
            children.len(),
            self.prepared.program.switches[switch].outcomes.len(),
            "child count must match the switch's outcome count"
        );
        if children.iter().all(|&c| c == children[0]) {
            return children[0];
        }
        let node = LiftedNode {
            switch,
            term,
            children,
        };
        if let Some(&id) = self.dedup.get(&node) {
            return id;
        }
        let id = TreeId(self.nodes.len() as u32 + 2);
        self.nodes.push(node.clone());
        self.dedup.insert(node, id);
        id
    }

    fn switch_index(&self, name: &str) -> Result<usize, LiftedError> {
        self.prepared
            .program
            .switches
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| LiftedError::UnknownSwitch(name.to_string()))
    }

    fn outcome_index(&self, switch: usize, value: &Value) -> Result<usize, LiftedError> {
        let sw = &self.prepared.program.switches[switch];
        sw.outcome_index(value)
            .ok_or_else(|| LiftedError::UnknownOutcome {
                switch: sw.name.clone(),
                value: value.to_string(),
            })
    }

    /// The graph `(∅ : false, 0)`: unsatisfiable everywhere.
    pub fn false_graph(&self) -> LiftedGraph {
        LiftedGraph {
            omega: BTreeSet::new(),
            eta: ConstraintFormula::FALSE,
            root: ZERO_TREE,
        }
    }

    /// The graph `(∅ : true, 1)`: true everywhere.
    pub fn true_graph(&self) -> LiftedGraph {
        LiftedGraph {
            omega: BTreeSet::new(),
            eta: ConstraintFormula::unconstrained(&[]),
            root: ONE_TREE,
        }
    }

    /// The single-node graph for one random-variable test `switch[t] = value`.
    ///
    /// `eta` must already constrain `t`'s domain when `t` is a variable.  The
    /// resulting tree has the 1-leaf under `value` and the 0-leaf elsewhere.
    pub fn lifted_rv(
        &mut self,
        switch: &str,
        t: Term,
        value: &Value,
        eta: ConstraintFormula,
    ) -> Result<LiftedGraph, LiftedError> {
        let s = self.switch_index(switch)?;
        let v = self.outcome_index(s, value)?;
        if let Term::Var(x) = t {
            if !eta.has_var(x) {
                return Err(LiftedError::MissingDomain(self.pool.name(x).to_string()));
            }
        }
        let width = self.prepared.program.switches[s].outcomes.len();
        let children = (0..width)
            .map(|i| if i == v { ONE_TREE } else { ZERO_TREE })
            .collect();
        let root = self.mk_tree(s, t, children);
        Ok(LiftedGraph {
            omega: BTreeSet::new(),
            eta,
            root,
        })
    }

    /// The graph `(∅ : η, 1)` for a pure constraint, or the false graph when
    /// `eta` is unsatisfiable.
    pub fn constraint_graph(&self, eta: ConstraintFormula) -> LiftedGraph {
        if eta.is_false() {
            self.false_graph()
        } else {
            LiftedGraph {
                omega: BTreeSet::new(),
                eta,
                root: ONE_TREE,
            }
        }
    }

    // ------------------------------------------------------------------
    // Tree traversal helpers
    // ------------------------------------------------------------------

    /// All variables occurring in labels of the tree under `t`.
    pub fn tree_vars(&self, t: TreeId) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![t];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id.is_leaf() || !seen.insert(id) {
                continue;
            }
            let node = self.tree(id).expect("internal node");
            if let Term::Var(x) = node.term {
                out.insert(x);
            }
            stack.extend(node.children.iter().copied());
        }
        out
    }

    fn map_labels(
        &mut self,
        t: TreeId,
        f: &dyn Fn(Term) -> Term,
        memo: &mut HashMap<TreeId, TreeId>,
    ) -> TreeId {
        if t.is_leaf() {
            return t;
        }
        if let Some(&r) = memo.get(&t) {
            return r;
        }
        let node = self.tree(t).expect("internal node").clone();
        let children = node
            .children
            .iter()
            .map(|&c| self.map_labels(c, f, memo))
            .collect();
        let r = self.mk_tree(node.switch, f(node.term), children);
        memo.insert(t, r);
        r
    }

    /// Replace every occurrence of variable `x` in tree labels by constant `k`.
    pub fn subst_tree(&mut self, t: TreeId, x: VarId, k: i64) -> TreeId {
        let mut memo = HashMap::new();
        self.map_labels(
            t,
            &move |term| {
                if term == Term::Var(x) {
                    Term::Const(k)
                } else {
                    term
                }
            },
            &mut memo,
        )
    }

    /// Replace every occurrence of variable `x` in tree labels by variable `y`.
    pub fn rename_tree(&mut self, t: TreeId, x: VarId, y: VarId) -> TreeId {
        let mut memo = HashMap::new();
        self.map_labels(
            t,
            &move |term| {
                if term == Term::Var(x) {
                    Term::Var(y)
                } else {
                    term
                }
            },
            &mut memo,
        )
    }

    fn rename_graph_var(&mut self, g: &LiftedGraph, old: VarId, new: VarId) -> LiftedGraph {
        let eta = g.eta.rename_var(old, new);
        let mut omega = g.omega.clone();
        if omega.remove(&old) {
            omega.insert(new);
        }
        let root = self.rename_tree(g.root, old, new);
        LiftedGraph { omega, eta, root }
    }

    // ------------------------------------------------------------------
    // Node-label comparison
    // ------------------------------------------------------------------

    /// Compare two node labels under the constraint store `eta`.
    ///
    /// Labels are ordered instance-first: `(s, t) < (s′, t′)` iff η entails
    /// `t < t′`, or η entails `t = t′` and `s` precedes `s′` in switch-name
    /// order.  Labels are equal iff η entails `t = t′` and the switches
    /// coincide.  If η entails none of `t < t′`, `t = t′`, `t′ < t`, the
    /// labels are incomparable.
    pub fn compare_nodes(
        &self,
        eta: &ConstraintFormula,
        a: (usize, Term),
        b: (usize, Term),
    ) -> NodeComparison {
        let (sa, ta) = a;
        let (sb, tb) = b;
        if eta.proves_eq(ta, tb).unwrap_or(false) {
            if sa == sb {
                return NodeComparison::Eq;
            }
            return if self.switch_rank[sa] < self.switch_rank[sb] {
                NodeComparison::Lt
            } else {
                NodeComparison::Gt
            };
        }
        if eta.proves_lt(ta, tb).unwrap_or(false) {
            return NodeComparison::Lt;
        }
        if eta.proves_lt(tb, ta).unwrap_or(false) {
            return NodeComparison::Gt;
        }
        NodeComparison::Incomparable
    }

    // ------------------------------------------------------------------
    // Substitution and quantification
    // ------------------------------------------------------------------

    /// Substitute constant `k` for variable `x` throughout the graph.
    ///
    /// `x` is removed from Ω and from η; when `k` lies outside `x`'s domain
    /// or the strengthened store becomes unsatisfiable, the result is the
    /// false graph.  If the graph does not mention `x` it is returned
    /// unchanged.
    pub fn substitute(&mut self, g: &LiftedGraph, k: i64, x: VarId) -> LiftedGraph {
        if !g.eta.has_var(x) {
            return g.clone();
        }
        let eta = match g.eta.substitute_value(k, x) {
            Ok(f) => f,
            Err(_) => return self.false_graph(),
        };
        if eta.is_false() {
            return self.false_graph();
        }
        let mut omega = g.omega.clone();
        omega.remove(&x);
        let root = self.subst_tree(g.root, x, k);
        LiftedGraph { omega, eta, root }
    }

    /// Existentially quantify the free variable `x`: move it into Ω.
    ///
    /// Fails if η does not mention `x` (its domain would be unknown).
    pub fn quantify(&self, g: &LiftedGraph, x: VarId) -> Result<LiftedGraph, LiftedError> {
        if !g.eta.has_var(x) {
            return Err(LiftedError::MissingVariable(self.pool.name(x).to_string()));
        }
        let mut omega = g.omega.clone();
        omega.insert(x);
        Ok(LiftedGraph {
            omega,
            eta: g.eta.clone(),
            root: g.root,
        })
    }

    /// Rename bound variables so that the two graphs share none, and neither
    /// graph's bound variables collide with the other's free variables.
    pub fn standardize_apart(
        &mut self,
        a: &LiftedGraph,
        b: &LiftedGraph,
    ) -> (LiftedGraph, LiftedGraph) {
        self.standardize_apart_protected(a, b, &BTreeSet::new())
    }

    /// Like [`LiftedBuilder::standardize_apart`], but variables in
    /// `protected` are left alone: they are bound in both graphs yet refer
    /// to one shared quantifier of an enclosing combination.
    fn standardize_apart_protected(
        &mut self,
        a: &LiftedGraph,
        b: &LiftedGraph,
        protected: &BTreeSet<VarId>,
    ) -> (LiftedGraph, LiftedGraph) {
        let a_vars: BTreeSet<VarId> = a.eta.vars().iter().map(|&(v, _)| v).collect();
        let mut b2 = b.clone();
        for v in b.omega.clone() {
            if a_vars.contains(&v) && !protected.contains(&v) {
                let base = self.pool.name(v).to_string();
                let fresh = self.pool.fresh_primed(&base);
                b2 = self.rename_graph_var(&b2, v, fresh);
            }
        }
        let b_vars: BTreeSet<VarId> = b2.eta.vars().iter().map(|&(v, _)| v).collect();
        let mut a2 = a.clone();
        for v in a.omega.clone() {
            if b_vars.contains(&v) && !protected.contains(&v) {
                let base = self.pool.name(v).to_string();
                let fresh = self.pool.fresh_primed(&base);
                a2 = self.rename_graph_var(&a2, v, fresh);
            }
        }
        (a2, b2)
    }

    // ------------------------------------------------------------------
    // Well-formedness
    // ------------------------------------------------------------------

    /// True iff every bound variable has at most one topmost occurrence:
    /// no two distinct root-to-node paths may reach nodes labeled with the
    /// same bound variable without one passing through the other.
    ///
    /// This is the structural condition under which the probability of the
    /// subgraph hanging below a bound variable's topmost node is independent
    /// of the variable's value, which the inference scan exploits.
    pub fn check_well_structured(&self, g: &LiftedGraph) -> bool {
        for &x in &g.omega {
            // Count maximal nodes labeled with x reachable from the root
            // without descending below another x-labeled node.  Paths (not
            // shared subgraphs) are what matter, so no memoisation.
            let mut count = 0usize;
            let mut stack = vec![g.root];
            while let Some(id) = stack.pop() {
                if id.is_leaf() {
                    continue;
                }
                let node = self.tree(id).expect("internal node");
                if node.term == Term::Var(x) {
                    count += 1;
                    if count > 1 {
                        return false;
                    }
                    continue; // do not descend below a topmost occurrence
                }
                stack.extend(node.children.iter().copied());
            }
        }
        true
    }

    /// Validate the structural invariants of a graph, returning the first
    /// violation as a description.
    ///
    /// Checked: Ω ⊆ vars(η); every tree-label variable is in vars(η); labels
    /// strictly increase along every path; every bound variable has a single
    /// topmost occurrence; the false graph is the only graph with an
    /// unsatisfiable store.
    pub fn check_graph(&self, g: &LiftedGraph) -> Result<(), String> {
        if g.eta.is_false() {
            if g.root == ZERO_TREE && g.omega.is_empty() {
                return Ok(());
            }
            return Err("unsatisfiable store on a non-false graph".to_string());
        }
        for &x in &g.omega {
            if !g.eta.has_var(x) {
                return Err(format!(
                    "bound variable '{}' missing from the store",
                    self.pool.name(x)
                ));
            }
        }
        for x in self.tree_vars(g.root) {
            if !g.eta.has_var(x) {
                return Err(format!(
                    "tree variable '{}' missing from the store",
                    self.pool.name(x)
                ));
            }
        }
        // Labels strictly increase along every path.
        let mut stack = vec![g.root];
        let mut seen = BTreeSet::new();
        while let Some(id) = stack.pop() {
            if id.is_leaf() || !seen.insert(id) {
                continue;
            }
            let node = self.tree(id).expect("internal node");
            for &c in &node.children {
                if c.is_leaf() {
                    continue;
                }
                let child = self.tree(c).expect("internal node");
                let cmp = self.compare_nodes(
                    &g.eta,
                    (node.switch, node.term),
                    (child.switch, child.term),
                );
                if cmp != NodeComparison::Lt {
                    return Err(format!(
                        "label order violated between ({}, {}) and ({}, {})",
                        self.prepared.program.switches[node.switch].name,
                        self.show_term(node.term),
                        self.prepared.program.switches[child.switch].name,
                        self.show_term(child.term),
                    ));
                }
                stack.push(c);
            }
        }
        if !self.check_well_structured(g) {
            return Err("a bound variable has two topmost occurrences".to_string());
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Conjunction and disjunction
    // ------------------------------------------------------------------

    /// Conjoin two graphs, returning an answer set (see module docs).
    pub fn l_and(&mut self, a: &LiftedGraph, b: &LiftedGraph) -> Vec<LiftedGraph> {
        self.answer_set_and(std::slice::from_ref(a), std::slice::from_ref(b))
    }

    /// Disjoin two graphs, returning an answer set whose members are
    /// mutually exclusive on the free variables.
    pub fn l_or(&mut self, a: &LiftedGraph, b: &LiftedGraph) -> Vec<LiftedGraph> {
        self.answer_set_or(std::slice::from_ref(a), std::slice::from_ref(b))
    }

    /// Projection of a member's store onto its free variables, keeping any
    /// bound variables in `context` (they are shared with an enclosing
    /// combination and act as free there).
    fn free_projection(&self, g: &LiftedGraph, context: &BTreeSet<VarId>) -> ConstraintFormula {
        let bound: Vec<VarId> = g
            .omega
            .iter()
            .copied()
            .filter(|v| !context.contains(v))
            .collect();
        g.eta.project_out_many(&bound)
    }

    /// Do two satisfiable members of `set` overlap on their free space?
    ///
    /// Internally exclusive sets never do; overlap means the set can no
    /// longer be weighed member by member.
    fn members_overlap(&self, set: &[LiftedGraph]) -> bool {
        let outside = BTreeSet::new();
        let projs: Vec<ConstraintFormula> = set
            .iter()
            .filter(|g| !g.is_false())
            .map(|g| self.free_projection(g, &outside))
            .collect();
        for (i, a) in projs.iter().enumerate() {
            for b in projs.iter().skip(i + 1) {
                if !a.conjoin(b).is_false() {
                    return true;
                }
            }
        }
        false
    }

    /// Conjoin two answer sets.  Every satisfiable pairwise combination
    /// contributes; mutual exclusivity of the inputs is preserved.
    pub fn answer_set_and(&mut self, xs: &[LiftedGraph], ys: &[LiftedGraph]) -> Vec<LiftedGraph> {
        let mut out = Vec::new();
        for a in xs {
            for b in ys {
                let (a2, b2) = self.standardize_apart(a, b);
                let eta = a2.eta.conjoin(&b2.eta);
                if eta.is_false() {
                    continue;
                }
                let mut omega = a2.omega.clone();
                omega.extend(b2.omega.iter().copied());
                let outside = BTreeSet::new();
                out.extend(self.dag_combine(Op::And, &omega, &eta, a2.root, b2.root, &outside));
            }
        }
        if out.is_empty() {
            out.push(self.false_graph());
        }
        out
    }

    /// Disjoin two answer sets.  Members are produced for (i) each region
    /// where exactly one side is satisfiable, carrying that side's graph,
    /// and (ii) each satisfiable intersection of free regions, carrying the
    /// combined graph.  The output regions are mutually exclusive whenever
    /// the input sets were internally exclusive.
    pub fn answer_set_or(&mut self, xs: &[LiftedGraph], ys: &[LiftedGraph]) -> Vec<LiftedGraph> {
        self.answer_set_or_ctx(xs, ys, &BTreeSet::new())
    }

    /// [`LiftedBuilder::answer_set_or`] relative to a context: variables in
    /// `context` are bound in an enclosing combination, so they are treated
    /// as free here (kept in projections, never renamed or merged).
    fn answer_set_or_ctx(
        &mut self,
        xs: &[LiftedGraph],
        ys: &[LiftedGraph],
        context: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        if xs.is_empty() {
            return ys.to_vec();
        }
        if ys.is_empty() {
            return xs.to_vec();
        }
        let qx: Vec<ConstraintFormula> =
            xs.iter().map(|g| self.free_projection(g, context)).collect();
        let qy: Vec<ConstraintFormula> =
            ys.iter().map(|g| self.free_projection(g, context)).collect();
        let mut out = Vec::new();
        // Regions where a member of xs holds but no member of ys does.
        for a in xs {
            for eta in Self::minus_regions(&a.eta, &qy) {
                out.push(LiftedGraph {
                    omega: a.omega.clone(),
                    eta,
                    root: a.root,
                });
            }
        }
        // Symmetrically for ys.
        for b in ys {
            for eta in Self::minus_regions(&b.eta, &qx) {
                out.push(LiftedGraph {
                    omega: b.omega.clone(),
                    eta,
                    root: b.root,
                });
            }
        }
        // Overlaps: both sides satisfiable.
        for (a, qa) in xs.iter().zip(&qx) {
            for (b, qb) in ys.iter().zip(&qy) {
                if qa.conjoin(qb).is_false() {
                    continue;
                }
                let (a2, b2) = self.standardize_apart_protected(a, b, context);
                let eta = a2.eta.conjoin(&b2.eta);
                if eta.is_false() {
                    continue;
                }
                let mut omega = a2.omega.clone();
                omega.extend(b2.omega.iter().copied());
                out.extend(self.dag_combine(Op::Or, &omega, &eta, a2.root, b2.root, context));
            }
        }
        if out.is_empty() {
            out.push(self.false_graph());
        }
        out
    }

    /// Strengthenings of `base` that exclude every region in `qs`:
    /// the satisfiable pieces of `base ∧ ¬q_1 ∧ ... ∧ ¬q_n`.
    fn minus_regions(base: &ConstraintFormula, qs: &[ConstraintFormula]) -> Vec<ConstraintFormula> {
        let mut acc = vec![base.clone()];
        for q in qs {
            let mut next = Vec::new();
            for piece in &acc {
                for neg in q.negate() {
                    let c = piece.conjoin(&neg);
                    if !c.is_false() {
                        next.push(c);
                    }
                }
            }
            acc = next;
            if acc.is_empty() {
                break;
            }
        }
        acc.retain(|f| !f.is_false());
        acc
    }

    /// Core of ∧/∨ on two trees under one shared store.
    ///
    /// Returns members `(Ω_i : η_i, ψ_i)` whose stores strengthen `eta`;
    /// on every assignment satisfying `eta`, the members that remain
    /// satisfiable jointly denote `ta ⊕ tb`.  `outside` holds variables
    /// with occurrences elsewhere in the enclosing combination (ancestor
    /// labels, sibling subtrees); such variables must not be merged away.
    fn dag_combine(
        &mut self,
        op: Op,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        ta: TreeId,
        tb: TreeId,
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        debug_assert!(!eta.is_false());
        // Constant leaves.
        let short = match (op, ta, tb) {
            (Op::And, ZERO_TREE, _) | (Op::And, _, ZERO_TREE) => Some(ZERO_TREE),
            (Op::And, ONE_TREE, t) | (Op::And, t, ONE_TREE) => Some(t),
            (Op::Or, ONE_TREE, _) | (Op::Or, _, ONE_TREE) => Some(ONE_TREE),
            (Op::Or, ZERO_TREE, t) | (Op::Or, t, ZERO_TREE) => Some(t),
            _ => None,
        };
        if let Some(root) = short {
            return vec![LiftedGraph {
                omega: omega.clone(),
                eta: eta.clone(),
                root,
            }];
        }
        let na = self.tree(ta).expect("internal node").clone();
        let nb = self.tree(tb).expect("internal node").clone();
        match self.compare_nodes(eta, (na.switch, na.term), (nb.switch, nb.term)) {
            NodeComparison::Lt => self.expand_smaller(op, omega, eta, &na, tb, outside),
            NodeComparison::Gt => self.expand_smaller(op, omega, eta, &nb, ta, outside),
            NodeComparison::Eq => {
                let pairs: Vec<(TreeId, TreeId)> = na
                    .children
                    .iter()
                    .copied()
                    .zip(nb.children.iter().copied())
                    .collect();
                self.thread_children(op, omega, eta, na.switch, na.term, &pairs, outside)
            }
            NodeComparison::Incomparable => {
                self.combine_incomparable(op, omega, eta, &na, &nb, outside)
            }
        }
    }

    /// Case: `smaller`'s label precedes the other root.  The other tree is
    /// pushed into each child of `smaller`.
    fn expand_smaller(
        &mut self,
        op: Op,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        smaller: &LiftedNode,
        other: TreeId,
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        let pairs: Vec<(TreeId, TreeId)> =
            smaller.children.iter().map(|&c| (c, other)).collect();
        self.thread_children(op, omega, eta, smaller.switch, smaller.term, &pairs, outside)
    }

    /// Combine the child pairs of a node labeled `(switch, term)`, threading
    /// the evolving store through the children left to right.
    ///
    /// Each child combination may strengthen the store or extend Ω (by
    /// merging variables); later children are combined under the
    /// strengthened store, and the cross product of per-child members is
    /// folded into complete result members.
    fn thread_children(
        &mut self,
        op: Op,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        switch: usize,
        term: Term,
        pairs: &[(TreeId, TreeId)],
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        // Partial state: store/omega so far plus the children built so far.
        struct State {
            omega: BTreeSet<VarId>,
            eta: ConstraintFormula,
            kids: Vec<TreeId>,
        }
        let mut states = vec![State {
            omega: omega.clone(),
            eta: eta.clone(),
            kids: Vec::new(),
        }];
        for (i, &(ca, cb)) in pairs.iter().enumerate() {
            // Variables with occurrences outside this child pair: inherited
            // ones, the node label, pending sibling pairs, and already-built
            // children.
            let mut child_outside = outside.clone();
            if let Term::Var(x) = term {
                child_outside.insert(x);
            }
            for (j, &(oa, ob)) in pairs.iter().enumerate() {
                if j != i {
                    child_outside.extend(self.tree_vars(oa));
                    child_outside.extend(self.tree_vars(ob));
                }
            }
            let mut next = Vec::new();
            for st in states {
                // Already-built children differ between states, so their
                // variables are added per state.
                let mut st_outside = child_outside.clone();
                for k in &st.kids {
                    st_outside.extend(self.tree_vars(*k));
                }
                let subs = self.dag_combine(op, &st.omega, &st.eta, ca, cb, &st_outside);
                for sub in subs {
                    if sub.eta.is_false() {
                        continue;
                    }
                    let mut kids = st.kids.clone();
                    kids.push(sub.root);
                    next.push(State {
                        omega: sub.omega,
                        eta: sub.eta,
                        kids,
                    });
                }
            }
            states = next;
            if states.is_empty() {
                break;
            }
        }
        let mut out = Vec::new();
        for st in states {
            let root = self.mk_tree(switch, term, st.kids);
            out.push(LiftedGraph {
                omega: st.omega,
                eta: st.eta,
                root,
            });
        }
        out
    }

    /// Combine two trees whose root labels the store does not order.
    ///
    /// The store is split into regions on which the labels become ordered.
    /// Splits on free variables yield separate members (the answer set
    /// partitions the free space); splits on bound variables refine the
    /// summation space and are folded back into a single member by
    /// disjunction.  Two bound labels over the same switch and coincident
    /// ranges are merged into one fresh variable when sound.
    fn combine_incomparable(
        &mut self,
        op: Op,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        na: &LiftedNode,
        nb: &LiftedNode,
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        let ta = na.term;
        let tb = nb.term;
        let va = ta.as_var().filter(|v| omega.contains(v));
        let vb = tb.as_var().filter(|v| omega.contains(v));
        match (va, vb) {
            // At least one side free (or constant): split the free space.
            (None, _) | (_, None) => {
                let free_split = va.is_none() && vb.is_none();
                let id_a = self.tree_of(na);
                let id_b = self.tree_of(nb);
                let mut members = Vec::new();
                for rel in [Rel::Lt, Rel::Eq, Rel::Gt] {
                    let eta2 = Self::strengthen(eta, ta, tb, rel);
                    if eta2.is_false() {
                        continue;
                    }
                    members.push(self.dag_combine(op, omega, &eta2, id_a, id_b, outside));
                }
                if free_split {
                    // Both terms free or constant: the split partitions the
                    // free space, so the pieces are separate answers.
                    members.into_iter().flatten().collect()
                } else {
                    // One side bound: the split refines the summation space;
                    // the pieces jointly denote one answer and are folded by
                    // disjunction.
                    self.fold_answer_or(members, outside)
                }
            }
            // Both bound.
            (Some(xa), Some(xb)) => {
                let (l1, u1) = eta.range(xa).expect("bound variable has a range");
                let (l2, u2) = eta.range(xb).expect("bound variable has a range");
                let safe = na.switch == nb.switch
                    && !outside.contains(&xa)
                    && !outside.contains(&xb)
                    && !self.occurs_below(na, xa)
                    && !self.occurs_below(nb, xb)
                    && !self.occurs_below(nb, xa)
                    && !self.occurs_below(na, xb);
                if !safe {
                    // Fall back to the always-sound trichotomy refinement of
                    // the summation space.
                    let id_a = self.tree_of(na);
                    let id_b = self.tree_of(nb);
                    let mut members = Vec::new();
                    for rel in [Rel::Lt, Rel::Eq, Rel::Gt] {
                        let eta2 = Self::strengthen(eta, ta, tb, rel);
                        if eta2.is_false() {
                            continue;
                        }
                        members.push(self.dag_combine(op, omega, &eta2, id_a, id_b, outside));
                    }
                    return self.fold_answer_or(members, outside);
                }
                if (l1, u1) == (l2, u2) {
                    return self.combine_equal_ranges(op, omega, eta, na, nb, outside);
                }
                // Distinct ranges: split the summation space so that each
                // piece either orders the labels or equalises the ranges.
                // With l1 ≤ l2 after an operand swap, the pieces cover
                // t < l2 (labels ordered), the range overlap with both
                // variables clamped into it (ranges equal), and the part of
                // the wider range above the other's upper end.
                if l2 < l1 {
                    return self.combine_incomparable(op, omega, eta, nb, na, outside);
                }
                let id_a = self.tree_of(na);
                let id_b = self.tree_of(nb);
                let mut splits: Vec<ConstraintFormula> = Vec::new();
                // Piece 1: t below the other range entirely.
                if l1 < l2 {
                    let mut f = eta.clone();
                    f = Self::add_ok(f, AtomicConstraint::lt(Term::Var(xa), Term::Const(l2)));
                    splits.push(f);
                }
                // Piece 2: both clamped into the overlap [l2, min(u1,u2)].
                {
                    let hi = u1.min(u2);
                    let mut f = eta.clone();
                    if l1 < l2 {
                        f = Self::add_ok(
                            f,
                            AtomicConstraint::lt(Term::Const(l2 - 1), Term::Var(xa)),
                        );
                    }
                    if u2 < u1 {
                        f = Self::add_ok(f, AtomicConstraint::lt(Term::Var(xa), Term::Const(hi + 1)));
                    }
                    if u1 < u2 {
                        f = Self::add_ok(f, AtomicConstraint::lt(Term::Var(xb), Term::Const(hi + 1)));
                    }
                    splits.push(f);
                }
                // Piece 3: the wider-topped variable above the overlap.
                if u1 != u2 {
                    let (wide, hi) = if u1 < u2 { (xb, u1) } else { (xa, u2) };
                    let mut f = eta.clone();
                    f = Self::add_ok(f, AtomicConstraint::lt(Term::Const(hi), Term::Var(wide)));
                    splits.push(f);
                }
                let mut members = Vec::new();
                for f in splits {
                    if f.is_false() {
                        continue;
                    }
                    members.push(self.dag_combine(op, omega, &f, id_a, id_b, outside));
                }
                self.fold_answer_or(members, outside)
            }
        }
    }

    /// Combine two bound-variable roots over the same switch and identical
    /// ranges by merging the variables into a fresh one.
    fn combine_equal_ranges(
        &mut self,
        op: Op,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        na: &LiftedNode,
        nb: &LiftedNode,
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        let xa = na.term.as_var().expect("bound variable");
        let xb = nb.term.as_var().expect("bound variable");
        let id_a = self.tree_of(na);
        let id_b = self.tree_of(nb);
        let merged = {
            let base = self.pool.name(xa).trim_end_matches('\'').to_string();
            self.pool.fresh_primed(&base)
        };
        match op {
            Op::Or => {
                // On every assignment of the remaining variables, the two
                // summations range over the same instances; summing a
                // disjunction per instance is exact.
                let eta_m = {
                    let f = eta.merge_vars(xa, xb, merged);
                    debug_assert!(!f.is_false(), "equal ranges cannot merge to false");
                    f
                };
                let mut omega_m: BTreeSet<VarId> = omega.clone();
                omega_m.remove(&xa);
                omega_m.remove(&xb);
                omega_m.insert(merged);
                let a_sub = self.rename_tree(id_a, xa, merged);
                let b_sub = self.rename_tree(id_b, xb, merged);
                let na2 = self.tree(a_sub).expect("internal").clone();
                let nb2 = self.tree(b_sub).expect("internal").clone();
                let pairs: Vec<(TreeId, TreeId)> = na2
                    .children
                    .iter()
                    .copied()
                    .zip(nb2.children.iter().copied())
                    .collect();
                self.thread_children(op, &omega_m, &eta_m, na2.switch, Term::Var(merged), &pairs, outside)
            }
            Op::And => {
                // The conjunction splits by the relative order of the two
                // summation variables; the three regimes jointly cover the
                // product space and are folded by disjunction.
                //
                // Regime 1: the same instance witnesses both summations.
                let m1 = {
                    let eta_m = eta.merge_vars(xa, xb, merged);
                    let mut omega_m: BTreeSet<VarId> = omega.clone();
                    omega_m.remove(&xa);
                    omega_m.remove(&xb);
                    omega_m.insert(merged);
                    let a_sub = self.rename_tree(id_a, xa, merged);
                    let b_sub = self.rename_tree(id_b, xb, merged);
                    let na2 = self.tree(a_sub).expect("internal").clone();
                    let nb2 = self.tree(b_sub).expect("internal").clone();
                    let pairs: Vec<(TreeId, TreeId)> = na2
                        .children
                        .iter()
                        .copied()
                        .zip(nb2.children.iter().copied())
                        .collect();
                    self.thread_children(
                        op,
                        &omega_m,
                        &eta_m,
                        na2.switch,
                        Term::Var(merged),
                        &pairs,
                        outside,
                    )
                };
                // Regime 2: the left witness is strictly below the right one.
                let m2 = self.ordered_witness_regime(omega, eta, na, id_b, xa, xb, merged, outside);
                // Regime 3: symmetric.
                let merged2 = {
                    let base = self.pool.name(xb).trim_end_matches('\'').to_string();
                    self.pool.fresh_primed(&base)
                };
                let m3 = self.ordered_witness_regime(omega, eta, nb, id_a, xb, xa, merged2, outside);
                self.fold_answer_or(vec![m1, m2, m3], outside)
            }
        }
    }

    /// Regime of a bound-bound conjunction in which `lead`'s witness `x_lead`
    /// is strictly below the other side's witness `x_other`.  `lead`'s
    /// variable is renamed to `fresh` and constrained below `x_other`; the
    /// whole other tree is pushed into `lead`'s children.
    #[allow(clippy::too_many_arguments)]
    fn ordered_witness_regime(
        &mut self,
        omega: &BTreeSet<VarId>,
        eta: &ConstraintFormula,
        lead: &LiftedNode,
        other_tree: TreeId,
        x_lead: VarId,
        x_other: VarId,
        fresh: VarId,
        outside: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        let eta2 = eta.rename_var(x_lead, fresh);
        let eta2 = Self::add_ok(eta2, AtomicConstraint::lt(Term::Var(fresh), Term::Var(x_other)));
        if eta2.is_false() {
            return Vec::new();
        }
        let mut omega2: BTreeSet<VarId> = omega.clone();
        omega2.remove(&x_lead);
        omega2.insert(fresh);
        let lead_id = self.tree_of(lead);
        let lead_sub = self.rename_tree(lead_id, x_lead, fresh);
        let lead_node = self.tree(lead_sub).expect("internal").clone();
        let pairs: Vec<(TreeId, TreeId)> = lead_node
            .children
            .iter()
            .map(|&c| (c, other_tree))
            .collect();
        self.thread_children(
            Op::And,
            &omega2,
            &eta2,
            lead_node.switch,
            Term::Var(fresh),
            &pairs,
            outside,
        )
    }

    /// Disjoin a list of answer sets into a single answer set, relative to
    /// the enclosing combination's context variables.
    fn fold_answer_or(
        &mut self,
        sets: Vec<Vec<LiftedGraph>>,
        context: &BTreeSet<VarId>,
    ) -> Vec<LiftedGraph> {
        let mut acc: Option<Vec<LiftedGraph>> = None;
        for s in sets {
            acc = Some(match acc {
                None => s,
                Some(prev) => self.answer_set_or_ctx(&prev, &s, context),
            });
        }
        let mut out = acc.unwrap_or_default();
        out.retain(|g| !g.is_false());
        if out.is_empty() {
            out.push(self.false_graph());
        }
        out
    }

    fn tree_of(&mut self, node: &LiftedNode) -> TreeId {
        self.mk_tree(node.switch, node.term, node.children.clone())
    }

    /// Does `x` occur in labels strictly below `node`'s root?
    fn occurs_below(&self, node: &LiftedNode, x: VarId) -> bool {
        node.children
            .iter()
            .any(|&c| self.tree_vars(c).contains(&x))
    }

    fn strengthen(eta: &ConstraintFormula, a: Term, b: Term, rel: Rel) -> ConstraintFormula {
        let c = match rel {
            Rel::Lt => AtomicConstraint::lt(a, b),
            Rel::Eq => AtomicConstraint::eq(a, b),
            Rel::Gt => AtomicConstraint::lt(b, a),
        };
        Self::add_ok(eta.clone(), c)
    }

    fn add_ok(eta: ConstraintFormula, c: AtomicConstraint) -> ConstraintFormula {
        eta.add(&c)
    }

    // ------------------------------------------------------------------
    // Grounding
    // ------------------------------------------------------------------

    /// Instantiate a closed graph over the concrete population, producing an
    /// ordered decision diagram in `engine`.
    ///
    /// Every bound variable is expanded into the disjunction over its range;
    /// constant labels map to ground nodes directly.  Fails if the graph has
    /// a free variable.
    pub fn ground(
        &mut self,
        g: &LiftedGraph,
        engine: &mut GroundEngine,
    ) -> Result<NodeId, LiftedError> {
        for &(v, _) in g.eta.vars() {
            if !g.omega.contains(&v) {
                return Err(LiftedError::FreeVariable(self.pool.name(v).to_string()));
            }
        }
        self.ground_rec(g, engine)
    }

    fn ground_rec(
        &mut self,
        g: &LiftedGraph,
        engine: &mut GroundEngine,
    ) -> Result<NodeId, LiftedError> {
        if g.eta.is_false() || g.root == ZERO_TREE {
            return Ok(ground::ZERO);
        }
        if g.root == ONE_TREE {
            return Ok(ground::ONE);
        }
        let node = self.tree(g.root).expect("internal node").clone();
        match node.term {
            Term::Const(k) => {
                let mut children = Vec::with_capacity(node.children.len());
                for &c in &node.children {
                    let sub = LiftedGraph {
                        omega: g.omega.clone(),
                        eta: g.eta.clone(),
                        root: c,
                    };
                    children.push(self.ground_rec(&sub, engine)?);
                }
                Ok(engine.mk_node(node.switch, k, children))
            }
            Term::Var(x) => {
                if !g.omega.contains(&x) {
                    return Err(LiftedError::FreeVariable(self.pool.name(x).to_string()));
                }
                let (lo, hi) = g
                    .eta
                    .range(x)
                    .map_err(|_| LiftedError::FreeVariable(self.pool.name(x).to_string()))?;
                let mut acc = ground::ZERO;
                for k in lo..=hi {
                    let inst = self.substitute(g, k, x);
                    let sub = self.ground_rec(&inst, engine)?;
                    acc = engine.g_or(acc, sub);
                }
                Ok(acc)
            }
        }
    }

    // ------------------------------------------------------------------
    // Explanations
    // ------------------------------------------------------------------

    /// Enumerate the conjunctive explanations of a graph: one per 1-path,
    /// with the switch-outcome literals in path order.
    pub fn lifted_explanations(&self, g: &LiftedGraph) -> Vec<LiftedExplanation> {
        let mut out = Vec::new();
        if g.eta.is_false() {
            return out;
        }
        let mut path: Vec<(usize, Term, usize)> = Vec::new();
        self.explain_rec(g, g.root, &mut path, &mut out);
        out
    }

    fn explain_rec(
        &self,
        g: &LiftedGraph,
        t: TreeId,
        path: &mut Vec<(usize, Term, usize)>,
        out: &mut Vec<LiftedExplanation>,
    ) {
        if t == ZERO_TREE {
            return;
        }
        if t == ONE_TREE {
            out.push(LiftedExplanation {
                omega: g.omega.clone(),
                eta: g.eta.clone(),
                literals: path.clone(),
            });
            return;
        }
        let node = self.tree(t).expect("internal node");
        for (i, &c) in node.children.iter().enumerate() {
            path.push((node.switch, node.term, i));
            self.explain_rec(g, c, path, out);
            path.pop();
        }
    }

    // ------------------------------------------------------------------
    // Rendering
    // ------------------------------------------------------------------

    fn show_term(&self, t: Term) -> String {
        match t {
            Term::Var(v) => self.pool.name(v).to_string(),
            Term::Const(k) => k.to_string(),
        }
    }

    fn show_tree(&self, t: TreeId) -> String {
        match t {
            ZERO_TREE => "0".to_string(),
            ONE_TREE => "1".to_string(),
            _ => {
                let node = self.tree(t).expect("internal node");
                let sw = &self.prepared.program.switches[node.switch];
                let kids: Vec<String> = node
                    .children
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| format!("{}: {}", sw.outcomes[i], self.show_tree(c)))
                    .collect();
                format!("({}, {})[{}]", sw.name, self.show_term(node.term), kids.join(", "))
            }
        }
    }

    /// Human-readable rendering `∃X. ∃Y. {constraints} : tree`.
    pub fn show(&self, g: &LiftedGraph) -> String {
        let mut s = String::new();
        for &x in &g.omega {
            s.push('∃');
            s.push_str(self.pool.name(x));
            s.push_str(". ");
        }
        s.push_str(&g.eta.display(&self.pool).to_string());
        s.push_str(" : ");
        s.push_str(&self.show_tree(g.root));
        s
    }

    /// Render one explanation as `switch[t]=outcome` literals.
    pub fn show_explanation(&self, e: &LiftedExplanation) -> String {
        let lits: Vec<String> = e
            .literals
            .iter()
            .map(|&(s, t, o)| {
                let sw = &self.prepared.program.switches[s];
                format!("{}[{}]={}", sw.name, self.show_term(t), sw.outcomes[o])
            })
            .collect();
        format!("{{{}}}", lits.join(", "))
    }

    // ------------------------------------------------------------------
    // Query construction
    // ------------------------------------------------------------------

    /// Build the answer set of lifted explanation graphs for a ground query.
    ///
    /// Clause bodies are folded goal by goal with the answer-set
    /// conjunction; clause-local typed variables are quantified; the clause
    /// results are folded with the answer-set disjunction.  For a ground
    /// query all members but one are unsatisfiable, so the satisfiable
    /// member is returned alone whenever it is unique.
    pub fn query_graphs(&mut self, query: &Atom) -> Result<Vec<LiftedGraph>, LiftedError> {
        let mut args = Vec::with_capacity(query.args.len());
        for a in &query.args {
            match a {
                ClauseTerm::Var(v) => return Err(LiftedError::NonGroundQuery(v.clone())),
                ClauseTerm::Const(c) => args.push(Term::Const(self.resolve_const(c)?)),
            }
        }
        let mut stack = Vec::new();
        let graphs = self.clause_graphs(&query.pred, &args, &HashMap::new(), &mut stack)?;
        let mut sat: Vec<LiftedGraph> = graphs.into_iter().filter(|g| !g.is_false()).collect();
        if sat.is_empty() {
            sat.push(self.false_graph());
        }
        Ok(sat)
    }

    fn resolve_const(&self, c: &str) -> Result<i64, LiftedError> {
        if let Ok(k) = c.parse::<i64>() {
            return Ok(k);
        }
        self.prepared
            .map
            .element(c)
            .ok_or_else(|| LiftedError::UnknownElement(c.to_string()))
    }

    /// Answer set for a call `pred(args)`; `domains` carries the population
    /// intervals of variables appearing in `args`.
    fn clause_graphs(
        &mut self,
        pred: &str,
        args: &[Term],
        domains: &HashMap<VarId, (i64, i64)>,
        stack: &mut Vec<String>,
    ) -> Result<Vec<LiftedGraph>, LiftedError> {
        if stack.iter().any(|p| p == pred) {
            return Err(LiftedError::Recursion(pred.to_string()));
        }
        let indices: Vec<usize> = (0..self.prepared.program.clauses.len())
            .filter(|&i| {
                let c = &self.prepared.program.clauses[i];
                c.head.pred == pred && c.head.args.len() == args.len()
            })
            .collect();
        if indices.is_empty() {
            return Err(LiftedError::UndefinedPredicate(pred.to_string()));
        }
        stack.push(pred.to_string());
        let mut total: Vec<LiftedGraph> = Vec::new();
        for ci in indices {
            let members = self.one_clause(ci, args, domains, stack)?;
            total = self.answer_set_or(&total, &members);
        }
        stack.pop();
        total.retain(|g| !g.is_false());
        if total.is_empty() {
            total.push(self.false_graph());
        }
        // Disjoining the clauses must leave an internally exclusive set; a
        // residue of overlapping members cannot be weighed and is refused.
        if self.members_overlap(&total) {
            return Err(LiftedError::OverlappingAnswers(pred.to_string()));
        }
        Ok(total)
    }

    fn one_clause(
        &mut self,
        ci: usize,
        args: &[Term],
        arg_domains: &HashMap<VarId, (i64, i64)>,
        stack: &mut Vec<String>,
    ) -> Result<Vec<LiftedGraph>, LiftedError> {
        let clause = self.prepared.program.clauses[ci].clone();
        let mut env: HashMap<String, Term> = HashMap::new();
        let mut domains: HashMap<VarId, (i64, i64)> = arg_domains.clone();
        let mut eqs: Vec<(Term, Term)> = Vec::new();
        for (pat, &arg) in clause.head.args.iter().zip(args) {
            match pat {
                ClauseTerm::Var(name) => {
                    if let Some(&prev) = env.get(name) {
                        if prev != arg {
                            eqs.push((prev, arg));
                        }
                    } else {
                        env.insert(name.clone(), arg);
                    }
                }
                ClauseTerm::Const(c) => {
                    let k = self.resolve_const(c)?;
                    match arg {
                        Term::Const(k2) => {
                            if k2 != k {
                                return Ok(vec![self.false_graph()]);
                            }
                        }
                        Term::Var(_) => eqs.push((arg, Term::Const(k))),
                    }
                }
            }
        }
        let mut members = vec![self.true_graph()];
        for (a, b) in eqs {
            let g = self.relation_graph(a, b, crate::program::CompareOp::Eq, &domains)?;
            members = self.answer_set_and(&members, std::slice::from_ref(&g));
        }
        let mut locals: BTreeSet<VarId> = BTreeSet::new();
        for goal in &clause.body {
            let g_set: Vec<LiftedGraph> = match goal {
                Goal::In { var, population, .. } => {
                    let interval = self
                        .prepared
                        .map
                        .interval(population)
                        .ok_or_else(|| LiftedError::UnknownElement(population.clone()))?;
                    match env.get(var).copied() {
                        Some(Term::Const(k)) => {
                            if k < interval.0 || k > interval.1 {
                                vec![self.false_graph()]
                            } else {
                                vec![self.true_graph()]
                            }
                        }
                        Some(Term::Var(x)) => {
                            domains.insert(x, interval);
                            vec![self.constraint_graph(ConstraintFormula::unconstrained(&[(
                                x, interval,
                            )]))]
                        }
                        None => {
                            let x = self.clause_var(var);
                            env.insert(var.clone(), Term::Var(x));
                            locals.insert(x);
                            domains.insert(x, interval);
                            vec![self.constraint_graph(ConstraintFormula::unconstrained(&[(
                                x, interval,
                            )]))]
                        }
                    }
                }
                Goal::Msw {
                    switch,
                    instance,
                    value,
                    ..
                } => {
                    let term = self.lookup_term(&env, instance)?;
                    let eta = match term {
                        Term::Var(x) => {
                            let dom = *domains
                                .get(&x)
                                .ok_or_else(|| {
                                    LiftedError::MissingDomain(self.pool.name(x).to_string())
                                })?;
                            ConstraintFormula::unconstrained(&[(x, dom)])
                        }
                        Term::Const(_) => ConstraintFormula::unconstrained(&[]),
                    };
                    vec![self.lifted_rv(switch, term, value, eta)?]
                }
                Goal::Constraint { op, lhs, rhs, .. } => {
                    let a = self.lookup_term(&env, lhs)?;
                    let b = self.lookup_term(&env, rhs)?;
                    vec![self.relation_graph(a, b, *op, &domains)?]
                }
                Goal::UserAtom(atom) => {
                    let mut call_args = Vec::with_capacity(atom.args.len());
                    for t in &atom.args {
                        call_args.push(self.lookup_term(&env, t)?);
                    }
                    self.clause_graphs(&atom.pred, &call_args, &domains, stack)?
                }
            };
            members = self.answer_set_and(&members, &g_set);
        }
        // Quantify the clause-local typed variables that survived into each
        // member's store (merges may already have replaced some of them).
        let mut closed = Vec::with_capacity(members.len());
        for m in members {
            let mut g = m;
            for &x in &locals {
                if g.eta.has_var(x) && !g.omega.contains(&x) {
                    g = self.quantify(&g, x)?;
                }
            }
            closed.push(g);
        }
        // Quantification hides the locals, so members that were exclusive
        // only on them may now overlap on the remaining free variables.
        // Weighing such a set would double-count the overlap; the lifted
        // method refuses and leaves the query to the ground engine.
        if self.members_overlap(&closed) {
            return Err(LiftedError::OverlappingAnswers(
                self.prepared.program.clauses[ci].head.pred.clone(),
            ));
        }
        Ok(closed)
    }

    /// Graph for a binary relation between two instance terms; disequality
    /// has been compiled away before this point.
    fn relation_graph(
        &mut self,
        a: Term,
        b: Term,
        op: crate::program::CompareOp,
        domains: &HashMap<VarId, (i64, i64)>,
    ) -> Result<LiftedGraph, LiftedError> {
        let mut doms = Vec::new();
        for t in [a, b] {
            if let Term::Var(x) = t {
                let dom = *domains
                    .get(&x)
                    .ok_or_else(|| LiftedError::MissingDomain(self.pool.name(x).to_string()))?;
                if !doms.iter().any(|&(v, _)| v == x) {
                    doms.push((x, dom));
                }
            }
        }
        let eta = ConstraintFormula::unconstrained(&doms);
        let c = match op {
            crate::program::CompareOp::Lt => AtomicConstraint::lt(a, b),
            crate::program::CompareOp::Eq => AtomicConstraint::eq(a, b),
            crate::program::CompareOp::Ne => {
                unreachable!("disequality is split before graph construction")
            }
        };
        Ok(self.constraint_graph(eta.add(&c)))
    }

    fn lookup_term(
        &mut self,
        env: &HashMap<String, Term>,
        t: &ClauseTerm,
    ) -> Result<Term, LiftedError> {
        match t {
            ClauseTerm::Var(name) => env
                .get(name)
                .copied()
                .ok_or_else(|| LiftedError::MissingDomain(name.clone())),
            ClauseTerm::Const(c) => Ok(Term::Const(self.resolve_const(c)?)),
        }
    }

    /// Intern a clause variable, keeping the source name for the first
    /// occurrence and priming on collision with an existing variable.
    fn clause_var(&mut self, name: &str) -> VarId {
        if self.pool.lookup(name).is_none() {
            self.pool.intern(name)
        } else {
            self.pool.fresh_primed(name)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Rel {
    Lt,
    Eq,
    Gt,
}
