//! Ground explanation graphs: multi-valued decision diagrams over the
//! concrete random variables `(switch, instance)` of a fully instantiated
//! program.
//!
//! An explanation of a query is a set of switch-trial outcomes that makes it
//! true; the explanation *graph* folds the whole set of explanations into one
//! reduced, ordered DAG. Internal nodes are labeled with a random variable
//! `(s, z)` and have one child per outcome of `s`; leaves are `0` and `1`; a
//! root-to-`1` path reads off one explanation. Labels strictly increase along
//! every path under the order "instance first, then switch name", which makes
//! the representation canonical: equal explanation sets produce the same
//! hash-consed node.
//!
//! The engine supports direct construction ([`GroundEngine::rv_graph`],
//! [`GroundEngine::g_and`], [`GroundEngine::g_or`]), query evaluation by
//! exhaustive instance enumeration ([`GroundEngine::ground_query`]), and
//! linear-time probability ([`GroundEngine::g_prob`]) using the independence
//! of distinct switch trials. It is deliberately brute-force — the
//! population-size-independent path lives in [`crate::lifted`] — and doubles
//! as the oracle that validates it.

use crate::program::{Atom, ClauseTerm, CompareOp, Goal, PopulationMap, Program, Value};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Handle to a hash-consed graph node. `ZERO` and `FALSE`-like comparisons
/// are by id: equal ids ⇔ equal explanation sets within one engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

/// The always-false graph.
pub const ZERO: NodeId = NodeId(0);
/// The always-true graph.
pub const ONE: NodeId = NodeId(1);

impl NodeId {
    pub fn is_leaf(self) -> bool {
        self.0 < 2
    }
}

/// An internal node: the trial of switch `switch` (index into the program's
/// switch table) at instance `instance`, with one child per outcome.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundNode {
    pub switch: usize,
    pub instance: i64,
    pub children: Vec<NodeId>,
}

/// Errors from graph construction or query evaluation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundError {
    #[error("unknown switch '{0}'")]
    UnknownSwitch(String),
    #[error("'{value}' is not an outcome of switch '{switch}'")]
    UnknownOutcome { switch: String, value: String },
    #[error("unknown element constant '{0}'")]
    UnknownElement(String),
    #[error("instance variable '{0}' is unbound at a switch trial")]
    UnboundInstance(String),
    #[error("variable '{0}' is unbound in a constraint")]
    UnboundComparison(String),
    #[error("predicate '{0}' is recursive, which is not supported")]
    Recursion(String),
    #[error("query argument '{0}' must be an element constant")]
    NonGroundQuery(String),
    #[error("undefined predicate '{0}'")]
    UndefinedPredicate(String),
}

#[derive(PartialEq, Eq, Hash, Clone, Copy)]
enum Op {
    And,
    Or,
}

/// Builder and evaluator for ground explanation graphs of one program.
///
/// All graphs produced by one engine share a node table, so ids are
/// comparable across calls; the engine is single-threaded.
pub struct GroundEngine {
    program: Program,
    map: PopulationMap,
    /// Rank of each switch under name order, indexed by switch table index;
    /// labels compare by `(instance, rank)`.
    switch_rank: Vec<usize>,
    /// Node table; slots 0 and 1 are reserved for the leaves.
    nodes: Vec<GroundNode>,
    dedup: HashMap<GroundNode, NodeId>,
    apply_cache: HashMap<(Op, NodeId, NodeId), NodeId>,
}

impl GroundEngine {
    /// Builds an engine over a prepared program (disequality-free, explicit
    /// membership goals) and its population layout.
    pub fn new(program: Program, map: PopulationMap) -> GroundEngine {
        let mut by_name: Vec<(String, usize)> = program
            .switches
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        by_name.sort();
        let mut switch_rank = vec![0; program.switches.len()];
        for (rank, (_, i)) in by_name.into_iter().enumerate() {
            switch_rank[i] = rank;
        }
        let leaf = GroundNode { switch: usize::MAX, instance: 0, children: Vec::new() };
        GroundEngine {
            program,
            map,
            switch_rank,
            nodes: vec![leaf.clone(), leaf],
            dedup: HashMap::new(),
            apply_cache: HashMap::new(),
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn map(&self) -> &PopulationMap {
        &self.map
    }

    /// The internal node behind `id`, or `None` for the two leaves.
    pub fn node(&self, id: NodeId) -> Option<&GroundNode> {
        if id.is_leaf() {
            None
        } else {
            Some(&self.nodes[id.0 as usize])
        }
    }

    /// `(instance, switch-name rank)`: the path order of Def-style graphs.
    fn label(&self, id: NodeId) -> (i64, usize) {
        let n = &self.nodes[id.0 as usize];
        (n.instance, self.switch_rank[n.switch])
    }

    /// Interns a node, applying the reduction rule: a node whose children
    /// are all identical is that child.
    pub(crate) fn mk_node(&mut self, switch: usize, instance: i64, children: Vec<NodeId>) -> NodeId {
        debug_assert_eq!(children.len(), self.program.switches[switch].outcomes.len());
        if children.iter().all(|&c| c == children[0]) {
            return children[0];
        }
        let node = GroundNode { switch, instance, children };
        if let Some(&id) = self.dedup.get(&node) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.dedup.insert(node, id);
        id
    }

    /// The single-trial graph: node `(switch, instance)` whose `value` edge
    /// leads to `1` and all others to `0`.
    pub fn rv_graph(
        &mut self,
        switch: &str,
        instance: i64,
        value: &Value,
    ) -> Result<NodeId, GroundError> {
        let Some(si) = self.program.switches.iter().position(|s| s.name == switch) else {
            return Err(GroundError::UnknownSwitch(switch.to_string()));
        };
        let Some(vi) = self.program.switches[si].outcome_index(value) else {
            return Err(GroundError::UnknownOutcome {
                switch: switch.to_string(),
                value: value.to_string(),
            });
        };
        let mut children = vec![ZERO; self.program.switches[si].outcomes.len()];
        children[vi] = ONE;
        Ok(self.mk_node(si, instance, children))
    }

    fn apply(&mut self, op: Op, a: NodeId, b: NodeId) -> NodeId {
        match (op, a, b) {
            (Op::And, ZERO, _) | (Op::And, _, ZERO) => return ZERO,
            (Op::And, ONE, x) | (Op::And, x, ONE) => return x,
            (Op::Or, ONE, _) | (Op::Or, _, ONE) => return ONE,
            (Op::Or, ZERO, x) | (Op::Or, x, ZERO) => return x,
            _ if a == b => return a,
            _ => {}
        }
        // Both operations are commutative; normalize the cache key.
        let key = (op, a.min(b), a.max(b));
        if let Some(&r) = self.apply_cache.get(&key) {
            return r;
        }
        let (la, lb) = (self.label(a), self.label(b));
        let result = if la == lb {
            let (na, nb) = (
                self.nodes[a.0 as usize].clone(),
                self.nodes[b.0 as usize].clone(),
            );
            let children = na
                .children
                .iter()
                .zip(&nb.children)
                .map(|(&ca, &cb)| self.apply(op, ca, cb))
                .collect();
            self.mk_node(na.switch, na.instance, children)
        } else {
            // Expand the smaller label; the other operand is unchanged in
            // every branch (its root variable is independent of this one).
            let (top, other) = if la < lb { (a, b) } else { (b, a) };
            let n = self.nodes[top.0 as usize].clone();
            let children =
                n.children.iter().map(|&c| self.apply(op, c, other)).collect();
            self.mk_node(n.switch, n.instance, children)
        };
        self.apply_cache.insert(key, result);
        result
    }

    /// Conjunction: explanations of the result = pairwise unions of an
    /// explanation of `a` and one of `b` (contradictory pairs drop out).
    pub fn g_and(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::And, a, b)
    }

    /// Disjunction: union of the explanation sets.
    pub fn g_or(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Op::Or, a, b)
    }

    /// Probability that a random world satisfies the graph, using the
    /// declared switch distributions: bottom-up weighted sum, linear in the
    /// number of distinct nodes.
    pub fn g_prob(&self, root: NodeId) -> f64 {
        fn walk(engine: &GroundEngine, id: NodeId, memo: &mut HashMap<NodeId, f64>) -> f64 {
            match id {
                ZERO => 0.0,
                ONE => 1.0,
                _ => {
                    if let Some(&p) = memo.get(&id) {
                        return p;
                    }
                    let n = &engine.nodes[id.0 as usize];
                    let probs = &engine.program.switches[n.switch].probs;
                    let p = n
                        .children
                        .iter()
                        .zip(probs)
                        .map(|(&c, &pi)| pi * walk(engine, c, memo))
                        .sum();
                    memo.insert(id, p);
                    p
                }
            }
        }
        walk(self, root, &mut HashMap::new())
    }

    /// Number of distinct nodes reachable from `root`, leaves included.
    pub fn node_count(&self, root: NodeId) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                if let Some(n) = self.node(id) {
                    stack.extend(&n.children);
                }
            }
        }
        seen.len()
    }

    /// Evaluates `query` against the program by exhaustive SLD-style search:
    /// membership goals enumerate their population interval, switch trials
    /// contribute single-trial graphs conjoined along each derivation, and
    /// derivations are disjoined. Query arguments must be element constants.
    pub fn ground_query(&mut self, query: &Atom) -> Result<NodeId, GroundError> {
        let mut args = Vec::with_capacity(query.args.len());
        for a in &query.args {
            match a {
                ClauseTerm::Const(c) => args.push(self.resolve_const(c)?),
                ClauseTerm::Var(v) => {
                    return Err(GroundError::NonGroundQuery(v.clone()))
                }
            }
        }
        let mut stack = Vec::new();
        self.call(&query.pred, &args, &mut stack)
    }

    fn resolve_const(&self, c: &str) -> Result<i64, GroundError> {
        self.map
            .element(c)
            .ok_or_else(|| GroundError::UnknownElement(c.to_string()))
    }

    fn resolve_term(
        &self,
        t: &ClauseTerm,
        env: &BTreeMap<String, i64>,
    ) -> Result<Option<i64>, GroundError> {
        match t {
            ClauseTerm::Const(c) => Ok(Some(self.resolve_const(c)?)),
            ClauseTerm::Var(v) => Ok(env.get(v).copied()),
        }
    }

    /// Disjunction over the clauses of `pred` applied to ground arguments.
    fn call(
        &mut self,
        pred: &str,
        args: &[i64],
        stack: &mut Vec<String>,
    ) -> Result<NodeId, GroundError> {
        if stack.iter().any(|p| p == pred) {
            return Err(GroundError::Recursion(pred.to_string()));
        }
        let clauses: Vec<usize> = (0..self.program.clauses.len())
            .filter(|&i| self.program.clauses[i].head.pred == pred)
            .collect();
        if clauses.is_empty() {
            return Err(GroundError::UndefinedPredicate(pred.to_string()));
        }
        stack.push(pred.to_string());
        let mut acc = ZERO;
        for ci in clauses {
            let clause = self.program.clauses[ci].clone();
            // Bind head arguments; a constant head argument must match the
            // incoming value or the clause contributes nothing.
            let mut env = BTreeMap::new();
            let mut feasible = true;
            for (term, &value) in clause.head.args.iter().zip(args) {
                match term {
                    ClauseTerm::Var(v) => match env.insert(v.clone(), value) {
                        Some(prev) if prev != value => feasible = false,
                        _ => {}
                    },
                    ClauseTerm::Const(c) => {
                        if self.resolve_const(c)? != value {
                            feasible = false;
                        }
                    }
                }
            }
            if !feasible {
                continue;
            }
            let g = self.solve(&clause.body, env, stack)?;
            acc = self.g_or(acc, g);
        }
        stack.pop();
        Ok(acc)
    }

    /// Conjunction of `goals` under `env`, branching on membership goals.
    fn solve(
        &mut self,
        goals: &[Goal],
        env: BTreeMap<String, i64>,
        stack: &mut Vec<String>,
    ) -> Result<NodeId, GroundError> {
        let Some((goal, rest)) = goals.split_first() else {
            return Ok(ONE);
        };
        match goal {
            Goal::In { var, population, .. } => {
                let (lo, hi) = self
                    .map
                    .interval(population)
                    .expect("typing validated population names");
                match env.get(var) {
                    Some(&z) => {
                        if lo <= z && z <= hi {
                            self.solve(rest, env, stack)
                        } else {
                            Ok(ZERO)
                        }
                    }
                    None => {
                        let mut acc = ZERO;
                        for z in lo..=hi {
                            let mut branch = env.clone();
                            branch.insert(var.clone(), z);
                            let g = self.solve(rest, branch, stack)?;
                            acc = self.g_or(acc, g);
                        }
                        Ok(acc)
                    }
                }
            }
            Goal::Msw { switch, instance, value, .. } => {
                let z = match self.resolve_term(instance, &env)? {
                    Some(z) => z,
                    None => {
                        let v = instance.as_var().unwrap_or_default().to_string();
                        return Err(GroundError::UnboundInstance(v));
                    }
                };
                let rv = self.rv_graph(switch, z, value)?;
                let rest_graph = self.solve(rest, env, stack)?;
                Ok(self.g_and(rv, rest_graph))
            }
            Goal::Constraint { op, lhs, rhs, .. } => {
                let ground = |t: &ClauseTerm| -> Result<i64, GroundError> {
                    self.resolve_term(t, &env)?.ok_or_else(|| {
                        GroundError::UnboundComparison(
                            t.as_var().unwrap_or_default().to_string(),
                        )
                    })
                };
                let (l, r) = (ground(lhs)?, ground(rhs)?);
                let holds = match op {
                    CompareOp::Lt => l < r,
                    CompareOp::Eq => l == r,
                    CompareOp::Ne => l != r,
                };
                if holds {
                    self.solve(rest, env, stack)
                } else {
                    Ok(ZERO)
                }
            }
            Goal::UserAtom(a) => {
                let mut args = Vec::with_capacity(a.args.len());
                for t in &a.args {
                    match self.resolve_term(t, &env)? {
                        Some(z) => args.push(z),
                        None => {
                            let v = t.as_var().unwrap_or_default().to_string();
                            return Err(GroundError::UnboundInstance(v));
                        }
                    }
                }
                let callee = self.call(&a.pred, &args, stack)?;
                let rest_graph = self.solve(rest, env, stack)?;
                Ok(self.g_and(callee, rest_graph))
            }
        }
    }
}

impl fmt::Debug for GroundEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroundEngine")
            .field("nodes", &self.nodes.len())
            .finish_non_exhaustive()
    }
}
