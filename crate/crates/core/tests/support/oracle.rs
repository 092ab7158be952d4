//! A brute-force probability oracle that never touches the graph machinery.
//!
//! It enumerates every outcome vector over every switch instance and decides
//! the truth of the query in each world directly from the clauses, by a
//! plain backtracking interpreter.  Exponential and proud of it: the point
//! is independence, not speed.

use std::collections::HashMap;

use pxlift::program::{Atom, ClauseTerm, CompareOp, Goal, Prepared, Value};

/// `(switch index, instance) → outcome index` for one fully decided world.
type World = HashMap<(usize, i64), usize>;

/// Probability of the ground query `atom` by world enumeration.
pub fn world_prob(prepared: &Prepared, atom: &Atom) -> f64 {
    let args: Vec<i64> = atom
        .args
        .iter()
        .map(|t| match t {
            ClauseTerm::Const(c) => resolve_const(prepared, c).expect("ground query argument"),
            ClauseTerm::Var(v) => panic!("free variable '{v}' in an oracle query"),
        })
        .collect();

    // One random variable per (switch, instance in its population).
    let mut rvs: Vec<(usize, i64)> = Vec::new();
    for (si, sw) in prepared.program.switches.iter().enumerate() {
        let Some(pop) = prepared.types.switch_types.get(&sw.name) else {
            continue; // declared but never used: no trials to enumerate
        };
        let (lo, hi) = prepared.map.interval(pop).expect("mapped population");
        for i in lo..=hi {
            rvs.push((si, i));
        }
    }
    let sizes: Vec<usize> = rvs
        .iter()
        .map(|&(si, _)| prepared.program.switches[si].outcomes.len())
        .collect();

    let mut picks = vec![0usize; rvs.len()];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        let mut world = World::new();
        for (k, &o) in picks.iter().enumerate() {
            weight *= prepared.program.switches[rvs[k].0].probs[o];
            world.insert(rvs[k], o);
        }
        if holds(prepared, &atom.pred, &args, &world, 0) {
            total += weight;
        }
        // Odometer step over the outcome vectors.
        let mut k = 0;
        loop {
            if k == picks.len() {
                return total;
            }
            picks[k] += 1;
            if picks[k] < sizes[k] {
                break;
            }
            picks[k] = 0;
            k += 1;
        }
    }
}

fn resolve_const(prepared: &Prepared, c: &str) -> Option<i64> {
    c.parse::<i64>().ok().or_else(|| prepared.map.element(c))
}

fn term_value(prepared: &Prepared, env: &HashMap<String, i64>, t: &ClauseTerm) -> Option<i64> {
    match t {
        ClauseTerm::Var(v) => env.get(v).copied(),
        ClauseTerm::Const(c) => resolve_const(prepared, c),
    }
}

/// Is `pred(args)` true in `world`, by clause resolution?
fn holds(prepared: &Prepared, pred: &str, args: &[i64], world: &World, depth: usize) -> bool {
    assert!(depth < 32, "oracle recursion limit hit");
    'clauses: for clause in &prepared.program.clauses {
        if clause.head.pred != pred || clause.head.args.len() != args.len() {
            continue;
        }
        let mut env: HashMap<String, i64> = HashMap::new();
        for (ht, &val) in clause.head.args.iter().zip(args) {
            match ht {
                ClauseTerm::Const(c) => {
                    if resolve_const(prepared, c) != Some(val) {
                        continue 'clauses;
                    }
                }
                ClauseTerm::Var(x) => match env.get(x) {
                    Some(&prev) if prev != val => continue 'clauses,
                    _ => {
                        env.insert(x.clone(), val);
                    }
                },
            }
        }
        if sat_goals(prepared, &clause.body, &env, world, depth) {
            return true;
        }
    }
    false
}

/// Does some extension of `env` satisfy all of `goals` in `world`?
fn sat_goals(
    prepared: &Prepared,
    goals: &[Goal],
    env: &HashMap<String, i64>,
    world: &World,
    depth: usize,
) -> bool {
    let Some((goal, rest)) = goals.split_first() else {
        return true;
    };
    match goal {
        Goal::In { var, population, .. } => {
            let (lo, hi) = prepared.map.interval(population).expect("mapped population");
            match env.get(var) {
                Some(&v) => (lo..=hi).contains(&v) && sat_goals(prepared, rest, env, world, depth),
                None => (lo..=hi).any(|k| {
                    let mut env2 = env.clone();
                    env2.insert(var.clone(), k);
                    sat_goals(prepared, rest, &env2, world, depth)
                }),
            }
        }
        Goal::Msw {
            switch,
            instance,
            value,
            ..
        } => {
            let si = prepared
                .program
                .switches
                .iter()
                .position(|s| &s.name == switch)
                .expect("declared switch");
            let Some(inst) = term_value(prepared, env, instance) else {
                panic!("oracle met an unbound msw instance");
            };
            let oi = outcome_index(&prepared.program.switches[si].outcomes, value);
            world.get(&(si, inst)) == Some(&oi) && sat_goals(prepared, rest, env, world, depth)
        }
        Goal::Constraint { op, lhs, rhs, .. } => {
            let (Some(l), Some(r)) = (
                term_value(prepared, env, lhs),
                term_value(prepared, env, rhs),
            ) else {
                panic!("oracle met an unbound constraint argument");
            };
            let ok = match op {
                CompareOp::Lt => l < r,
                CompareOp::Eq => l == r,
                CompareOp::Ne => l != r,
            };
            ok && sat_goals(prepared, rest, env, world, depth)
        }
        Goal::UserAtom(a) => {
            let vals: Vec<i64> = a
                .args
                .iter()
                .map(|t| term_value(prepared, env, t).expect("bound call argument"))
                .collect();
            holds(prepared, &a.pred, &vals, world, depth + 1)
                && sat_goals(prepared, rest, env, world, depth)
        }
    }
}

fn outcome_index(outcomes: &[Value], value: &Value) -> usize {
    outcomes
        .iter()
        .position(|v| v == value)
        .expect("declared outcome")
}
