//! DOT (Graphviz) rendering of explanation graphs.
//!
//! Ground graphs render as plain boxes `(switch, instance)` with
//! outcome-labelled edges and circular 0/1 leaves.  Lifted graphs add a
//! header box with the quantifier prefix and constraint store above the DAG,
//! and use rounded boxes for the parameterised nodes.

use std::collections::HashMap;

use crate::ground::{self, GroundEngine, NodeId};
use crate::lifted::{LiftedBuilder, LiftedGraph, TreeId, ONE_TREE, ZERO_TREE};
use crate::constraints::Term;

fn esc(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Render the ground graph under `root` as a DOT digraph.
pub fn ground_dot(engine: &GroundEngine, root: NodeId) -> String {
    let mut out = String::from("digraph ground {\n  rankdir=TB;\n");
    let mut names: HashMap<NodeId, usize> = HashMap::new();
    let mut order: Vec<NodeId> = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        if names.contains_key(&id) {
            continue;
        }
        names.insert(id, order.len());
        order.push(id);
        if let Some(node) = engine.node(id) {
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
    }
    for &id in &order {
        let n = names[&id];
        if id == ground::ZERO {
            out.push_str(&format!("  n{n} [shape=circle, label=\"0\"];\n"));
        } else if id == ground::ONE {
            out.push_str(&format!("  n{n} [shape=circle, label=\"1\"];\n"));
        } else {
            let node = engine.node(id).expect("interned node");
            let sw = &engine.program().switches[node.switch];
            out.push_str(&format!(
                "  n{n} [shape=box, label=\"({},{})\"];\n",
                esc(&sw.name),
                node.instance
            ));
        }
    }
    for &id in &order {
        if let Some(node) = engine.node(id) {
            let sw = &engine.program().switches[node.switch];
            for (i, &c) in node.children.iter().enumerate() {
                out.push_str(&format!(
                    "  n{} -> n{} [label=\"{}\"];\n",
                    names[&id],
                    names[&c],
                    esc(&sw.outcomes[i].to_string())
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Render a lifted graph as a DOT digraph with its store in a header box.
pub fn lifted_dot(b: &LiftedBuilder, g: &LiftedGraph) -> String {
    let mut out = String::from("digraph lifted {\n  rankdir=TB;\n");
    let mut header = String::new();
    for &x in &g.omega {
        header.push('∃');
        header.push_str(b.pool.name(x));
        header.push('.');
    }
    if !g.omega.is_empty() {
        header.push(' ');
    }
    header.push_str(&g.eta.display(&b.pool).to_string());
    out.push_str(&format!("  header [shape=box, label=\"{}\"];\n", esc(&header)));

    let mut names: HashMap<TreeId, usize> = HashMap::new();
    let mut order: Vec<TreeId> = Vec::new();
    let mut stack = vec![g.root];
    while let Some(id) = stack.pop() {
        if names.contains_key(&id) {
            continue;
        }
        names.insert(id, order.len());
        order.push(id);
        if let Some(node) = b.tree(id) {
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
    }
    for &id in &order {
        let n = names[&id];
        if id == ZERO_TREE {
            out.push_str(&format!("  t{n} [shape=circle, label=\"0\"];\n"));
        } else if id == ONE_TREE {
            out.push_str(&format!("  t{n} [shape=circle, label=\"1\"];\n"));
        } else {
            let node = b.tree(id).expect("interned tree");
            let sw = &b.prepared().program.switches[node.switch];
            let term = match node.term {
                Term::Var(v) => b.pool.name(v).to_string(),
                Term::Const(k) => k.to_string(),
            };
            out.push_str(&format!(
                "  t{n} [shape=box, style=rounded, label=\"({}, {})\"];\n",
                esc(&sw.name),
                esc(&term)
            ));
        }
    }
    out.push_str(&format!("  header -> t{} [style=invis];\n", names[&g.root]));
    for &id in &order {
        if let Some(node) = b.tree(id) {
            let sw = &b.prepared().program.switches[node.switch];
            for (i, &c) in node.children.iter().enumerate() {
                out.push_str(&format!(
                    "  t{} -> t{} [label=\"{}\"];\n",
                    names[&id],
                    names[&c],
                    esc(&sw.outcomes[i].to_string())
                ));
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifted::LiftedBuilder;
    use crate::program::{parse_program, parse_query, prepare};

    const TWO_HEADS: &str = "\
:- population(coins, 3).\n\
:- set_sw(toss, categorical([h:0.5, t:0.5])).\n\
two_heads :- X in coins, msw(toss, X, h), Y in coins, msw(toss, Y, h), {X < Y}.\n";

    #[test]
    fn lifted_render_has_header_rounded_boxes_and_outcome_edges() {
        let program = parse_program(TWO_HEADS).unwrap();
        let prepared = prepare(&program).unwrap();
        let mut b = LiftedBuilder::new(prepared);
        let q = parse_query("two_heads").unwrap();
        let g = b.query_graphs(&q).unwrap().remove(0);
        let dot = lifted_dot(&b, &g);
        assert!(dot.contains("∃X.∃Y."), "quantifier prefix:\n{dot}");
        assert!(dot.contains("X<Y"), "store constraints:\n{dot}");
        assert!(dot.contains("style=rounded"), "parameterised boxes:\n{dot}");
        assert!(dot.contains("label=\"(toss, X)\""), "node labels:\n{dot}");
        assert!(dot.contains("label=\"h\""), "outcome edges:\n{dot}");
        assert!(dot.contains("shape=circle, label=\"0\""), "0 leaf:\n{dot}");
    }

    #[test]
    fn ground_render_boxes_every_instance() {
        let program = parse_program(TWO_HEADS).unwrap();
        let prepared = prepare(&program).unwrap();
        let mut eng = crate::ground::GroundEngine::new(prepared.program.clone(), prepared.map.clone());
        let q = parse_query("two_heads").unwrap();
        let root = eng.ground_query(&q).unwrap();
        let dot = ground_dot(&eng, root);
        for needle in ["(toss,1)", "(toss,2)", "(toss,3)"] {
            assert!(dot.contains(needle), "missing {needle}:\n{dot}");
        }
        assert!(dot.contains("shape=box"));
        assert!(dot.contains("label=\"t\""), "both outcome edges:\n{dot}");
    }
}
