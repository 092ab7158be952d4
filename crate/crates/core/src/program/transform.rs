//! Program-level rewrites between typing and graph construction.

use super::{
    CompareOp, Goal, PopulationMap, Program, TypeAssignment,
};
use std::collections::BTreeMap;
use std::collections::HashSet;

/// Replaces every disequality `{s \= t}` by the two-way order split.
///
/// A clause with `d` disequalities becomes `2^d` clauses, one per choice of
/// `{s < t}` or `{t < s}` for each; instances are totally ordered integers,
/// so the split is exhaustive and the two cases are disjoint. Later stages
/// only handle `<` and `=` constraints. Clauses without `\=` are kept as-is,
/// and expansion order is deterministic: the all-`<` variant comes first.
pub fn eliminate_disequality(program: &Program) -> Program {
    let mut out = program.clone();
    out.clauses.clear();
    for clause in &program.clauses {
        let ne_at: Vec<usize> = clause
            .body
            .iter()
            .enumerate()
            .filter(|(_, g)| matches!(g, Goal::Constraint { op: CompareOp::Ne, .. }))
            .map(|(i, _)| i)
            .collect();
        if ne_at.is_empty() {
            out.clauses.push(clause.clone());
            continue;
        }
        for mask in 0..(1u32 << ne_at.len()) {
            let mut variant = clause.clone();
            for (bit, &i) in ne_at.iter().enumerate() {
                let Goal::Constraint { lhs, rhs, pos, .. } = &clause.body[i] else {
                    unreachable!()
                };
                let (l, r) = if mask >> bit & 1 == 0 {
                    (lhs.clone(), rhs.clone())
                } else {
                    (rhs.clone(), lhs.clone())
                };
                variant.body[i] =
                    Goal::Constraint { op: CompareOp::Lt, lhs: l, rhs: r, pos: *pos };
            }
            out.clauses.push(variant);
        }
    }
    out
}

/// Inserts an explicit membership goal for every typed variable that lacks
/// one, directly before the variable's first use.
///
/// Typing already proved each variable ranges over exactly one population,
/// so adding `X in pop` never changes which instances satisfy a clause; it
/// just makes every variable's domain syntactically present, which is what
/// the explanation-graph builders consume.
pub fn insert_membership_goals(program: &Program, types: &TypeAssignment) -> Program {
    let mut out = program.clone();
    for (ci, clause) in out.clauses.iter_mut().enumerate() {
        let mut covered: HashSet<String> = HashSet::new();
        let mut body = Vec::with_capacity(clause.body.len());

        let cover = |var: &str, covered: &mut HashSet<String>, body: &mut Vec<Goal>, pos| {
            if covered.insert(var.to_string()) {
                if let Some(pop) = types.var_type(ci, var) {
                    body.push(Goal::In {
                        var: var.to_string(),
                        population: pop.to_string(),
                        pos,
                    });
                }
            }
        };

        for goal in clause.body.drain(..) {
            match &goal {
                Goal::In { var, .. } => {
                    covered.insert(var.clone());
                }
                Goal::Msw { instance, pos, .. } => {
                    if let Some(v) = instance.as_var() {
                        cover(v, &mut covered, &mut body, *pos);
                    }
                }
                Goal::Constraint { lhs, rhs, pos, .. } => {
                    for t in [lhs, rhs] {
                        if let Some(v) = t.as_var() {
                            cover(v, &mut covered, &mut body, *pos);
                        }
                    }
                }
                Goal::UserAtom(a) => {
                    for t in &a.args {
                        if let Some(v) = t.as_var() {
                            cover(v, &mut covered, &mut body, a.pos);
                        }
                    }
                }
            }
            body.push(goal);
        }
        // Head-only variables (none used in the body) still need a domain.
        for arg in &clause.head.args {
            if let Some(v) = arg.as_var() {
                cover(v, &mut covered, &mut body, clause.head.pos);
            }
        }
        clause.body = body;
    }
    out
}

/// Lays every population out on the shared instance interval `[1, m]`.
///
/// Populations get contiguous interval blocks in declaration order; within
/// a population, its named elements take the lowest indices in their own
/// declaration order. `m` is the sum of all cardinalities.
pub fn map_populations(program: &Program) -> PopulationMap {
    let mut intervals = Vec::with_capacity(program.populations.len());
    let mut elements = BTreeMap::new();
    let mut next = 1i64;
    for (pop, n) in &program.populations {
        let lo = next;
        let hi = next + n - 1;
        next = hi + 1;
        intervals.push((pop.clone(), (lo, hi)));
        let mut at = lo;
        for (c, p) in &program.elements {
            if p == pop {
                elements.insert(c.clone(), at);
                at += 1;
            }
        }
    }
    PopulationMap { intervals, elements, m: next - 1 }
}
