//! Population typing: assign every variable, switch, and constant a unique
//! population.
//!
//! Types are inferred, not declared on variables: membership goals and
//! element declarations seed concrete populations, and every other construct
//! propagates them by unification —
//!
//! * both sides of a constraint `{s op t}` share a type,
//! * the instance argument of every `msw(sw, t, v)` shares a type with the
//!   switch `sw` (each switch draws its trials from a single population),
//! * argument `i` of a predicate shares a type across all clause heads and
//!   call sites of that predicate.
//!
//! If the program declares exactly one population, slots left unconstrained
//! collapse to it; otherwise an unconstrained variable is a type error. A
//! consequence of a successful check is that a membership goal can be
//! supplied for any variable that lacks one (see
//! [`super::insert_membership_goals`]).
//!
//! Predicates must be non-recursive: clause bodies are inlined during graph
//! construction, so the call graph is required to be acyclic.

use super::{Atom, ClauseTerm, Goal, Pos, Program, SourceError, TypeAssignment};
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};

/// A unification slot: anything that carries a population type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Slot {
    /// A variable, scoped to its clause.
    Var(usize, String),
    /// A switch's instance type.
    Switch(String),
    /// Argument `i` of a predicate, shared by heads and calls.
    PredArg(String, usize),
    /// A declared element constant.
    Const(String),
}

/// Union-find over slots whose roots may carry a concrete population.
struct Unifier {
    ids: HashMap<Slot, usize>,
    parent: Vec<usize>,
    bound: Vec<Option<String>>,
}

impl Unifier {
    fn new() -> Self {
        Unifier { ids: HashMap::new(), parent: Vec::new(), bound: Vec::new() }
    }

    fn slot(&mut self, s: Slot) -> usize {
        if let Some(&i) = self.ids.get(&s) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.bound.push(None);
        self.ids.insert(s, i);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Merge the classes of `a` and `b`. `describe` names the construct in
    /// the conflict message; `pos` locates it.
    fn union(
        &mut self,
        a: usize,
        b: usize,
        pos: Pos,
        describe: &dyn Fn() -> String,
    ) -> Result<(), SourceError> {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return Ok(());
        }
        let merged = match (self.bound[ra].take(), self.bound[rb].take()) {
            (Some(p), Some(q)) if p != q => {
                return Err(SourceError::new(pos, format!(
                    "{} relates populations '{p}' and '{q}'",
                    describe()
                )));
            }
            (p, q) => p.or(q),
        };
        self.parent[ra] = rb;
        self.bound[rb] = merged;
        Ok(())
    }

    /// Bind the class of `i` to the concrete population `pop`.
    fn bind(
        &mut self,
        i: usize,
        pop: &str,
        pos: Pos,
        describe: &dyn Fn() -> String,
    ) -> Result<(), SourceError> {
        let r = self.find(i);
        match &self.bound[r] {
            Some(q) if q != pop => Err(SourceError::new(pos, format!(
                "{} relates populations '{q}' and '{pop}'",
                describe()
            ))),
            _ => {
                self.bound[r] = Some(pop.to_string());
                Ok(())
            }
        }
    }

    fn binding(&mut self, i: usize) -> Option<String> {
        let r = self.find(i);
        self.bound[r].clone()
    }
}

/// Checks that every predicate is defined, used at a consistent arity, and
/// non-recursive (bodies are inlined downstream, so cycles are rejected).
fn check_calls(program: &Program) -> Result<(), SourceError> {
    let mut arity: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &program.clauses {
        match arity.entry(&c.head.pred) {
            Entry::Vacant(e) => {
                e.insert(c.head.args.len());
            }
            Entry::Occupied(e) => {
                if *e.get() != c.head.args.len() {
                    return Err(SourceError::new(c.head.pos, format!(
                        "predicate '{}' is defined at arities {} and {}",
                        c.head.pred,
                        e.get(),
                        c.head.args.len()
                    )));
                }
            }
        }
    }

    let mut calls: BTreeMap<&str, Vec<&Atom>> = BTreeMap::new();
    for c in &program.clauses {
        for g in &c.body {
            if let Goal::UserAtom(a) = g {
                match arity.get(a.pred.as_str()) {
                    None => {
                        return Err(SourceError::new(a.pos, format!(
                            "undefined predicate '{}'",
                            a.pred
                        )))
                    }
                    Some(&k) if k != a.args.len() => {
                        return Err(SourceError::new(a.pos, format!(
                            "predicate '{}' has arity {k}, called with {} arguments",
                            a.pred,
                            a.args.len()
                        )))
                    }
                    Some(_) => {}
                }
                calls.entry(&c.head.pred).or_default().push(a);
            }
        }
    }

    // Depth-first cycle check over the call graph.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();
    for start in arity.keys() {
        if marks.contains_key(start) {
            continue;
        }
        // (pred, position reported on a cycle, next callee index)
        let mut stack: Vec<(&str, Pos, usize)> = vec![(start, Pos::start(), 0)];
        marks.insert(start, Mark::Open);
        while let Some(&mut (pred, _, ref mut next)) = stack.last_mut() {
            let callees = calls.get(pred).map(Vec::as_slice).unwrap_or(&[]);
            if *next < callees.len() {
                let callee = callees[*next];
                *next += 1;
                match marks.get(callee.pred.as_str()) {
                    Some(Mark::Open) => {
                        return Err(SourceError::new(callee.pos, format!(
                            "predicate '{}' is recursive, which is not supported",
                            callee.pred
                        )));
                    }
                    Some(Mark::Done) => {}
                    None => {
                        marks.insert(&callee.pred, Mark::Open);
                        stack.push((&callee.pred, callee.pos, 0));
                    }
                }
            } else {
                marks.insert(pred, Mark::Done);
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Infers the population of every variable, switch, and constant, or reports
/// why none exists.
pub fn check_well_typed(program: &Program) -> Result<TypeAssignment, SourceError> {
    check_calls(program)?;

    let mut uf = Unifier::new();

    // Element declarations give constants their types outright.
    for (c, pop) in &program.elements {
        let s = uf.slot(Slot::Const(c.clone()));
        let c = c.clone();
        let pop_ = pop.clone();
        uf.bind(s, pop, Pos::start(), &move || format!("element '{c}' of '{pop_}'"))?;
    }

    let term_slot = |uf: &mut Unifier, ci: usize, t: &ClauseTerm, pos: Pos| -> Result<usize, SourceError> {
        match t {
            ClauseTerm::Var(v) => Ok(uf.slot(Slot::Var(ci, v.clone()))),
            ClauseTerm::Const(c) => {
                if !program.elements.iter().any(|(e, _)| e == c) {
                    return Err(SourceError::new(pos, format!(
                        "constant '{c}' is not a declared element"
                    )));
                }
                Ok(uf.slot(Slot::Const(c.clone())))
            }
        }
    };

    for (ci, clause) in program.clauses.iter().enumerate() {
        for (i, arg) in clause.head.args.iter().enumerate() {
            let a = term_slot(&mut uf, ci, arg, clause.head.pos)?;
            let p = uf.slot(Slot::PredArg(clause.head.pred.clone(), i));
            let pred = clause.head.pred.clone();
            uf.union(a, p, clause.head.pos, &move || {
                format!("argument {} of '{pred}'", i + 1)
            })?;
        }
        for goal in &clause.body {
            let pos = goal.pos();
            match goal {
                Goal::In { var, population, .. } => {
                    if program.population_size(population).is_none() {
                        return Err(SourceError::new(pos, format!(
                            "unknown population '{population}'"
                        )));
                    }
                    let v = uf.slot(Slot::Var(ci, var.clone()));
                    let var = var.clone();
                    uf.bind(v, population, pos, &move || format!("variable '{var}'"))?;
                }
                Goal::Msw { switch, instance, value, .. } => {
                    let Some(sw) = program.switch(switch) else {
                        return Err(SourceError::new(pos, format!(
                            "unknown switch '{switch}'"
                        )));
                    };
                    if sw.outcome_index(value).is_none() {
                        return Err(SourceError::new(pos, format!(
                            "'{value}' is not an outcome of switch '{switch}'"
                        )));
                    }
                    let t = term_slot(&mut uf, ci, instance, pos)?;
                    let s = uf.slot(Slot::Switch(switch.clone()));
                    let switch = switch.clone();
                    uf.union(t, s, pos, &move || format!("switch '{switch}'"))?;
                }
                Goal::Constraint { lhs, rhs, .. } => {
                    let l = term_slot(&mut uf, ci, lhs, pos)?;
                    let r = term_slot(&mut uf, ci, rhs, pos)?;
                    let (lhs, rhs) = (lhs.clone(), rhs.clone());
                    uf.union(l, r, pos, &move || format!("constraint on '{lhs}' and '{rhs}'"))?;
                }
                Goal::UserAtom(a) => {
                    for (i, arg) in a.args.iter().enumerate() {
                        let t = term_slot(&mut uf, ci, arg, a.pos)?;
                        let p = uf.slot(Slot::PredArg(a.pred.clone(), i));
                        let pred = a.pred.clone();
                        uf.union(t, p, a.pos, &move || {
                            format!("argument {} of '{pred}'", i + 1)
                        })?;
                    }
                }
            }
        }
    }

    // With a single declared population there is nothing to be ambiguous
    // about: unconstrained slots collapse to it.
    let default_pop = match program.populations.as_slice() {
        [(only, _)] => Some(only.clone()),
        _ => None,
    };

    let mut assignment = TypeAssignment::default();
    for (c, pop) in &program.elements {
        assignment.const_types.insert(c.clone(), pop.clone());
    }
    let slots: Vec<(Slot, usize)> =
        uf.ids.iter().map(|(s, &i)| (s.clone(), i)).collect();
    for (slot, i) in slots {
        let pop = uf.binding(i).or_else(|| default_pop.clone());
        match slot {
            Slot::Var(ci, v) => match pop {
                Some(p) => {
                    assignment.var_types.insert((ci, v), p);
                }
                None => {
                    let pos = program.clauses[ci].head.pos;
                    return Err(SourceError::new(pos, format!(
                        "cannot infer a population for variable '{v}'; \
                         add a membership goal such as '{v} in <population>'"
                    )));
                }
            },
            Slot::Switch(s) => {
                // A used switch's class always contains its instance terms,
                // so if those resolved, this does too.
                if let Some(p) = pop {
                    assignment.switch_types.insert(s, p);
                }
            }
            Slot::PredArg(..) | Slot::Const(_) => {}
        }
    }
    Ok(assignment)
}
