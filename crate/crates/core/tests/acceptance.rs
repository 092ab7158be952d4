//! Acceptance runs: one test per published criterion, each printing its own
//! pass/fail line through the harness.
//!
//! The criteria pin the engine against four independent referees — the exact
//! world-enumeration oracle, the ground decision-diagram engine, hand-derived
//! closed forms, and randomised law checking — plus the population-size
//! independence of the lifted representation.

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use pxlift::constraints::Term;
use pxlift::driver::{self, Mode, RunConfig};
use pxlift::ground::GroundEngine;
use pxlift::infer::{check_frontier_subsumption, emit_recurrences, lifted_prob, FamilyKind};
use pxlift::lifted::{LiftedBuilder, ZERO_TREE};
use pxlift::program::{parse_program, parse_query, prepare, Program};

use support::oracle;
use support::props;

fn corpus(name: &str) -> String {
    format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn set_population(program: &mut Program, name: &str, n: i64) {
    for p in &mut program.populations {
        if p.0 == name {
            p.1 = n;
        }
    }
}

/// The two-heads shape with a parametric population and coin bias.
fn two_heads_src(n: i64, ph: f64) -> String {
    let pt = 1.0 - ph;
    format!(
        "two_heads :- X in coins, msw(toss, X, h), Y in coins, {{X < Y}}, msw(toss, Y, h).\n\
         :- population(coins, {n}).\n\
         :- set_sw(toss, categorical([h:{ph}, t:{pt}])).\n"
    )
}

/// Build the single lifted graph of a query against a prepared program.
fn single_graph(
    b: &mut LiftedBuilder,
    query: &pxlift::program::Atom,
) -> pxlift::lifted::LiftedGraph {
    let graphs = b.query_graphs(query).expect("query builds");
    assert_eq!(graphs.len(), 1, "the query yields a single graph");
    graphs.into_iter().next().unwrap()
}

#[test]
fn criterion_1_two_heads_agrees_with_both_ground_paths_and_the_world_oracle() {
    let t0 = Instant::now();
    let text = fs::read_to_string(corpus("twoheads.px")).expect("corpus program");
    let frozen = [(2, 0.25), (3, 0.5), (4, 0.6875)];
    let query = parse_query("twoheads").expect("query");
    for n in 2..=8 {
        let mut program = parse_program(&text).expect("parses");
        set_population(&mut program, "coins", n);
        let prepared = prepare(&program).expect("prepares");

        let mut b = LiftedBuilder::new(prepared.clone());
        let g = single_graph(&mut b, &query);
        let (lifted, _) = lifted_prob(&b, &g).expect("supported");

        let mut eng = GroundEngine::new(prepared.program.clone(), prepared.map.clone());
        let node = b.ground(&g, &mut eng).expect("grounds");
        let grounded = eng.g_prob(node);

        let mut eng2 = GroundEngine::new(prepared.program.clone(), prepared.map.clone());
        let node2 = eng2.ground_query(&query).expect("ground query");
        let direct = eng2.g_prob(node2);

        let worlds = oracle::world_prob(&prepared, &query);

        for (label, other) in [
            ("grounded lifted graph", grounded),
            ("direct ground query", direct),
            ("world enumeration", worlds),
        ] {
            assert!(
                (lifted - other).abs() < 1e-9,
                "n={n}: lifted {lifted} vs {label} {other}"
            );
        }
        if let Some(&(_, want)) = frozen.iter().find(|&&(m, _)| m == n) {
            assert!(
                (lifted - want).abs() < 1e-9,
                "n={n}: {lifted} vs frozen {want}"
            );
        }
    }
    assert!(
        t0.elapsed().as_secs_f64() < 1.0,
        "two-heads agreement must finish within one second"
    );
}

#[test]
fn criterion_2_dice_merges_the_clauses_fails_subsumption_and_falls_back() {
    let t0 = Instant::now();
    let text = fs::read_to_string(corpus("dice.px")).expect("corpus program");
    let query = parse_query("q").expect("query");

    // Structure at the corpus population: the two clause graphs merge into
    // one graph whose root scans a fresh variable shared by both clauses,
    // with the per-clause continuations under outcomes 1 and 2.
    let program = parse_program(&text).expect("parses");
    let prepared = prepare(&program).expect("prepares");
    let mut b = LiftedBuilder::new(prepared);
    let g = single_graph(&mut b, &query);
    let root = b.tree(g.root).expect("internal root").clone();
    assert_eq!(b.prepared().program.switches[root.switch].name, "roll");
    let Term::Var(scan) = root.term else {
        panic!("the merged root scans a variable");
    };
    assert!(g.omega.contains(&scan), "the scan variable is bound");
    assert_eq!(root.children.len(), 6);
    let c1 = b.tree(root.children[0]).expect("outcome-1 continuation").clone();
    let c2 = b.tree(root.children[1]).expect("outcome-2 continuation").clone();
    for (label, c) in [("outcome 1", &c1), ("outcome 2", &c2)] {
        assert_eq!(
            b.prepared().program.switches[c.switch].name,
            "roll",
            "{label} continues on the same switch"
        );
    }
    let (Term::Var(y1), Term::Var(y2)) = (c1.term, c2.term) else {
        panic!("both continuations scan bound variables");
    };
    assert_ne!(y1, y2, "the continuations keep separate partners");
    assert!(g.omega.contains(&y1) && g.omega.contains(&y2));
    for &rest in &root.children[2..] {
        assert_eq!(rest, ZERO_TREE, "outcomes 3..6 are dead ends");
    }
    // The header orders the merged variable below both partners.
    assert!(g.eta.proves_lt(Term::Var(scan), Term::Var(y1)).unwrap());
    assert!(g.eta.proves_lt(Term::Var(scan), Term::Var(y2)).unwrap());

    // The merged variable's frontier is not subsumed, so lifted evaluation
    // refuses this graph.
    let report = check_frontier_subsumption(&b, &g);
    let (_, holds) = report
        .per_var
        .iter()
        .find(|&&(v, _)| v == scan)
        .expect("the scan variable is checked");
    assert!(!holds, "subsumption must fail for the merged scan variable");

    // Numerics: auto falls back to the ground engine and matches exact
    // enumeration.
    let cfg = |n: i64| RunConfig {
        source: text.clone(),
        query: "q".to_string(),
        mode: Mode::Auto,
        populations: vec![("dice".to_string(), n)],
    };
    let report = driver::run(&cfg(2)).expect("auto runs");
    assert_eq!(report.mode_used, "ground");
    assert!(
        (report.probability - 1.0 / 18.0).abs() < 1e-9,
        "two dice agree on 1 or 2 with probability 1/18"
    );
    for n in [3, 4] {
        let got = driver::run(&cfg(n)).expect("auto runs").probability;
        let mut program = parse_program(&text).expect("parses");
        set_population(&mut program, "dice", n);
        let prepared = prepare(&program).expect("prepares");
        let want = oracle::world_prob(&prepared, &query);
        assert!((got - want).abs() < 1e-9, "n={n}: {got} vs oracle {want}");
    }
    assert!(
        t0.elapsed().as_secs_f64() < 5.0,
        "dice checks must finish within five seconds"
    );
}

#[test]
fn criterion_3_the_emitted_inner_scan_reproduces_the_tail_closed_form() {
    // The inner scan's h(j) is the probability of a head among instances
    // j..n: 1 − (1−π)^(n−j+1).
    for pi in [0.3, 0.5] {
        for n in 2..=20 {
            let program = parse_program(&two_heads_src(n, pi)).expect("parses");
            let prepared = prepare(&program).expect("prepares");
            let mut b = LiftedBuilder::new(prepared);
            let query = parse_query("two_heads").expect("query");
            let g = single_graph(&mut b, &query);
            let sys = emit_recurrences(&b, &g).expect("supported graph");
            let y = b.pool.lookup("Y").expect("inner scan variable");
            let inner = sys
                .families
                .iter()
                .position(|f| matches!(f.kind, FamilyKind::Scan { var, .. } if var == y))
                .expect("a scan family over Y");
            for j in 1..=n {
                let h = sys.eval_h(inner, j, &BTreeMap::new());
                let want = 1.0 - (1.0 - pi).powi((n - j + 1) as i32);
                assert!(
                    (h - want).abs() < 1e-12,
                    "π={pi}, n={n}, j={j}: {h} vs {want}"
                );
            }
        }
    }
}

#[test]
fn criterion_4_the_lifted_graph_size_is_independent_of_the_population() {
    let text = fs::read_to_string(corpus("twoheads.px")).expect("corpus program");
    let config = RunConfig {
        source: text,
        query: "twoheads".to_string(),
        mode: Mode::Auto,
        populations: Vec::new(),
    };
    let rows = driver::bench(&config, "coins", &[10, 100, 1000]).expect("bench runs");
    assert_eq!(rows.len(), 3);
    assert!(
        rows.iter().all(|r| r.lifted_nodes == rows[0].lifted_nodes),
        "node counts must be identical: {:?}",
        rows.iter().map(|r| r.lifted_nodes).collect::<Vec<_>>()
    );
}

#[test]
fn criterion_5_evaluation_cells_scale_linearly_in_the_population() {
    let cells = |n: i64| {
        let program = parse_program(&two_heads_src(n, 0.5)).expect("parses");
        let prepared = prepare(&program).expect("prepares");
        let mut b = LiftedBuilder::new(prepared);
        let query = parse_query("two_heads").expect("query");
        let g = single_graph(&mut b, &query);
        let (_, stats) = lifted_prob(&b, &g).expect("supported");
        stats.total()
    };
    let ratio = cells(2000) as f64 / cells(1000) as f64;
    assert!(
        (1.8..=2.2).contains(&ratio),
        "doubling the population must roughly double the cells, got ×{ratio:.3}"
    );
}

#[test]
fn criterion_6_five_hundred_random_trials_per_law_pass_inside_the_budget() {
    use proptest::prelude::*;
    let t0 = Instant::now();
    props::run_suite(props::expr_strategy(), 500, |e| props::check_and_or_law(e))
        .unwrap_or_else(|e| panic!("∧/∨ law: {e}"));
    props::run_suite(props::flat_expr_strategy(), 500, |e| {
        props::check_exclusivity_law(e)
    })
    .unwrap_or_else(|e| panic!("exclusivity invariant: {e}"));
    props::run_suite(props::expr_strategy(), 500, |e| {
        props::check_quantify_law(e)
    })
    .unwrap_or_else(|e| panic!("quantification law: {e}"));
    props::run_suite(
        (props::expr_strategy(), any::<usize>(), 1i64..=4),
        500,
        |(e, pick, k)| props::check_substitution_law(e, *pick, *k),
    )
    .unwrap_or_else(|e| panic!("substitution law: {e}"));
    props::run_suite(props::store_strategy(), 500, |s| {
        props::check_store_laws(s)
    })
    .unwrap_or_else(|e| panic!("store laws: {e}"));
    assert!(
        t0.elapsed().as_secs_f64() < 60.0,
        "the randomised laws must finish within a minute"
    );
}

#[test]
fn criterion_7_population_one_hundred_matches_the_closed_form() {
    // P(two distinct heads) = 1 − P(no heads) − P(exactly one head).
    let text = fs::read_to_string(corpus("twoheads.px")).expect("corpus program");
    let program = parse_program(&text).expect("parses");
    let prepared = prepare(&program).expect("prepares");
    let mut b = LiftedBuilder::new(prepared);
    let query = parse_query("twoheads").expect("query");
    let g = single_graph(&mut b, &query);
    let (p, _) = lifted_prob(&b, &g).expect("supported");
    let pi: f64 = 0.5;
    let want = 1.0 - (1.0 - pi).powi(100) - 100.0 * pi * (1.0 - pi).powi(99);
    assert!((p - want).abs() < 1e-9, "{p} vs closed form {want}");
}
