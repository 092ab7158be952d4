//! End-to-end query pipeline: parse, prepare, build graphs, evaluate.
//!
//! [`run`] drives one query through the full stack in one of four modes:
//!
//!  * `lifted` — scan-recurrence evaluation; refuses graphs that fail the
//!    frontier subsumption check,
//!  * `ground` — decision-diagram evaluation over the fully grounded graph,
//!  * `auto` — lifted first, silently falling back to ground when lifted
//!    evaluation refuses (the default: the lifted method is partial, the
//!    tool must be total),
//!  * `compare` — both, with the absolute difference checked against 1e-9.
//!
//! [`bench`] sweeps one population size over a list of values and reports
//! graph and memo-table sizes per run, which makes the population
//! independence of the lifted graphs directly observable.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::ground::GroundEngine;
use crate::infer::{check_frontier_subsumption, lifted_prob, InferError};
use crate::lifted::{LiftedBuilder, LiftedGraph, TreeId};
use crate::program::{parse_program, parse_query, prepare, Program, SourceError};

/// Evaluation strategy for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Scan recurrences only; error if the graph is unsupported.
    Lifted,
    /// Ground decision diagram only.
    Ground,
    /// Lifted with ground fallback.
    Auto,
    /// Both, cross-checked.
    Compare,
}

impl Mode {
    /// Parse a mode name as written on the command line.
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "lifted" => Some(Mode::Lifted),
            "ground" => Some(Mode::Ground),
            "auto" => Some(Mode::Auto),
            "compare" => Some(Mode::Compare),
            _ => None,
        }
    }
}

/// One evaluation request: a program, a query, and how to run it.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Full program text.
    pub source: String,
    /// Query atom text, e.g. `two_heads` or `q(fred)`.
    pub query: String,
    /// Evaluation strategy.
    pub mode: Mode,
    /// Population size overrides, applied before preparation.
    pub populations: Vec<(String, i64)>,
}

/// The result of one evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// The query probability.
    pub probability: f64,
    /// The strategy that actually produced the number.
    pub mode_used: String,
    /// Frontier-subsumption verdict per bound variable of the lifted graphs
    /// (empty when no lifted graph was built).
    pub subsumption: Vec<(String, bool)>,
    /// Internal nodes reachable in the lifted graphs, when built.
    pub lifted_nodes: Option<usize>,
    /// Decision-diagram nodes in the ground graph, when built.
    pub ground_nodes: Option<usize>,
    /// Total memo cells used by the lifted evaluation, when it ran.
    pub memo_cells: Option<usize>,
    /// `|p_lifted − p_ground|` in compare mode.
    pub compare_diff: Option<f64>,
    /// Wall-clock time for the whole run, in milliseconds.
    pub wall_ms: f64,
}

/// One row of a population sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    /// The population size of this run.
    pub n: i64,
    /// Internal nodes reachable in the lifted graphs.
    pub lifted_nodes: usize,
    /// Total memo cells used by the evaluation.
    pub memo_cells: usize,
    /// Wall-clock time for this run, in milliseconds.
    pub wall_ms: f64,
}

/// Why a run failed, with its process exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriverError {
    /// The program or query text does not parse.
    #[error("{0}")]
    Parse(SourceError),
    /// The program parses but is ill-typed.
    #[error("{0}")]
    Type(SourceError),
    /// The query cannot be evaluated as requested.
    #[error("{0}")]
    Unsupported(String),
    /// Lifted and ground evaluation disagree beyond tolerance.
    #[error("lifted {lifted} and ground {ground} disagree by more than 1e-9")]
    CompareMismatch {
        /// Lifted result.
        lifted: f64,
        /// Ground result.
        ground: f64,
    },
}

impl DriverError {
    /// The process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Parse(_) => 2,
            DriverError::Type(_) => 3,
            DriverError::Unsupported(_) => 4,
            DriverError::CompareMismatch { .. } => 5,
        }
    }
}

fn override_populations(
    program: &mut Program,
    overrides: &[(String, i64)],
) -> Result<(), DriverError> {
    for (name, n) in overrides {
        let slot = program
            .populations
            .iter_mut()
            .find(|(p, _)| p == name)
            .ok_or_else(|| {
                DriverError::Unsupported(format!("unknown population '{name}' in override"))
            })?;
        slot.1 = *n;
    }
    Ok(())
}

/// Internal nodes reachable from the roots of `graphs`.
fn reachable_nodes(b: &LiftedBuilder, graphs: &[LiftedGraph]) -> usize {
    let mut seen: BTreeSet<TreeId> = BTreeSet::new();
    let mut stack: Vec<TreeId> = graphs.iter().map(|g| g.root).collect();
    let mut count = 0;
    while let Some(t) = stack.pop() {
        if !seen.insert(t) {
            continue;
        }
        if let Some(node) = b.tree(t) {
            count += 1;
            stack.extend(node.children.iter().copied());
        }
    }
    count
}

struct LiftedOutcome {
    probability: Result<f64, InferError>,
    subsumption: Vec<(String, bool)>,
    nodes: usize,
    memo_cells: usize,
}

fn run_lifted(config: &RunConfig) -> Result<LiftedOutcome, DriverError> {
    let mut program = parse_program(&config.source).map_err(DriverError::Parse)?;
    override_populations(&mut program, &config.populations)?;
    let prepared = prepare(&program).map_err(DriverError::Type)?;
    let query = parse_query(&config.query).map_err(DriverError::Parse)?;
    let mut b = LiftedBuilder::new(prepared);
    let graphs = b
        .query_graphs(&query)
        .map_err(|e| DriverError::Unsupported(e.to_string()))?;

    let mut subsumption = Vec::new();
    for g in &graphs {
        for (v, ok) in check_frontier_subsumption(&b, g).per_var {
            subsumption.push((b.pool.name(v).to_string(), ok));
        }
    }
    let nodes = reachable_nodes(&b, &graphs);

    // Answer-set members are mutually exclusive, so probabilities add.
    let mut p = 0.0;
    let mut cells = 0;
    let mut refused = None;
    for g in &graphs {
        match lifted_prob(&b, g) {
            Ok((pi, stats)) => {
                p += pi;
                cells += stats.total();
            }
            Err(e) => {
                refused = Some(e);
                break;
            }
        }
    }
    Ok(LiftedOutcome {
        probability: match refused {
            None => Ok(p),
            Some(e) => Err(e),
        },
        subsumption,
        nodes,
        memo_cells: cells,
    })
}

fn run_ground(config: &RunConfig) -> Result<(f64, usize), DriverError> {
    let mut program = parse_program(&config.source).map_err(DriverError::Parse)?;
    override_populations(&mut program, &config.populations)?;
    let prepared = prepare(&program).map_err(DriverError::Type)?;
    let query = parse_query(&config.query).map_err(DriverError::Parse)?;
    let mut engine = GroundEngine::new(prepared.program.clone(), prepared.map.clone());
    let root = engine
        .ground_query(&query)
        .map_err(|e| DriverError::Unsupported(e.to_string()))?;
    Ok((engine.g_prob(root), engine.node_count(root)))
}

/// Evaluate one query according to `config`.
pub fn run(config: &RunConfig) -> Result<RunReport, DriverError> {
    let t0 = Instant::now();
    let report = match config.mode {
        Mode::Lifted => {
            let out = run_lifted(config)?;
            let p = out
                .probability
                .map_err(|e| DriverError::Unsupported(e.to_string()))?;
            RunReport {
                probability: p,
                mode_used: "lifted".to_string(),
                subsumption: out.subsumption,
                lifted_nodes: Some(out.nodes),
                ground_nodes: None,
                memo_cells: Some(out.memo_cells),
                compare_diff: None,
                wall_ms: 0.0,
            }
        }
        Mode::Ground => {
            let (p, nodes) = run_ground(config)?;
            RunReport {
                probability: p,
                mode_used: "ground".to_string(),
                subsumption: Vec::new(),
                lifted_nodes: None,
                ground_nodes: Some(nodes),
                memo_cells: None,
                compare_diff: None,
                wall_ms: 0.0,
            }
        }
        Mode::Auto => match run_lifted(config) {
            Ok(out) => match out.probability {
                Ok(p) => RunReport {
                    probability: p,
                    mode_used: "lifted".to_string(),
                    subsumption: out.subsumption,
                    lifted_nodes: Some(out.nodes),
                    ground_nodes: None,
                    memo_cells: Some(out.memo_cells),
                    compare_diff: None,
                    wall_ms: 0.0,
                },
                Err(_) => {
                    let (p, nodes) = run_ground(config)?;
                    RunReport {
                        probability: p,
                        mode_used: "ground".to_string(),
                        subsumption: out.subsumption,
                        lifted_nodes: Some(out.nodes),
                        ground_nodes: Some(nodes),
                        memo_cells: None,
                        compare_diff: None,
                        wall_ms: 0.0,
                    }
                }
            },
            // Construction itself failed lifted-side: stay total via ground.
            Err(DriverError::Unsupported(_)) => {
                let (p, nodes) = run_ground(config)?;
                RunReport {
                    probability: p,
                    mode_used: "ground".to_string(),
                    subsumption: Vec::new(),
                    lifted_nodes: None,
                    ground_nodes: Some(nodes),
                    memo_cells: None,
                    compare_diff: None,
                    wall_ms: 0.0,
                }
            }
            Err(e) => return Err(e),
        },
        Mode::Compare => {
            // The lifted side follows the auto path so compare stays total:
            // on a refusal the comparison degenerates to ground vs ground,
            // with the refusal still visible in the subsumption report.
            let (pl, subsumption, lifted_nodes, memo_cells) = match run_lifted(config) {
                Ok(out) => match out.probability {
                    Ok(p) => (
                        Some(p),
                        out.subsumption,
                        Some(out.nodes),
                        Some(out.memo_cells),
                    ),
                    Err(_) => (None, out.subsumption, Some(out.nodes), None),
                },
                Err(DriverError::Unsupported(_)) => (None, Vec::new(), None, None),
                Err(e) => return Err(e),
            };
            let (pg, gnodes) = run_ground(config)?;
            let diff = pl.map(|p| (p - pg).abs()).unwrap_or(0.0);
            if diff > 1e-9 {
                return Err(DriverError::CompareMismatch {
                    lifted: pl.expect("mismatch implies a lifted value"),
                    ground: pg,
                });
            }
            RunReport {
                probability: pg,
                mode_used: "compare".to_string(),
                subsumption,
                lifted_nodes,
                ground_nodes: Some(gnodes),
                memo_cells,
                compare_diff: Some(diff),
                wall_ms: 0.0,
            }
        }
    };
    Ok(RunReport {
        wall_ms: t0.elapsed().as_secs_f64() * 1000.0,
        ..report
    })
}

/// Sweep `population` over `sizes` and report per-run lifted sizes.
///
/// Requires a lifted-capable query: a refusal is an error, not a fallback,
/// because the point of the sweep is to measure the lifted evaluation.
pub fn bench(
    config: &RunConfig,
    population: &str,
    sizes: &[i64],
) -> Result<Vec<BenchRow>, DriverError> {
    let mut rows = Vec::new();
    for &n in sizes {
        let mut c = config.clone();
        c.populations.push((population.to_string(), n));
        let t0 = Instant::now();
        let out = run_lifted(&c)?;
        out.probability
            .map_err(|e| DriverError::Unsupported(e.to_string()))?;
        rows.push(BenchRow {
            n,
            lifted_nodes: out.nodes,
            memo_cells: out.memo_cells,
            wall_ms: t0.elapsed().as_secs_f64() * 1000.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_HEADS: &str = "\
:- population(coins, 3).\n\
:- set_sw(toss, categorical([h:0.5, t:0.5])).\n\
two_heads :- X in coins, msw(toss, X, h), Y in coins, msw(toss, Y, h), {X < Y}.\n";

    const DICE: &str = "\
:- population(dice, 2).\n\
:- set_sw(roll, categorical([1:1/6, 2:1/6, 3:1/6, 4:1/6, 5:1/6, 6:1/6])).\n\
q :- X in dice, msw(roll, X, 1), Y in dice, {X < Y}, msw(roll, Y, 1).\n\
q :- X in dice, msw(roll, X, 2), Y in dice, {X < Y}, msw(roll, Y, 2).\n";

    fn config(source: &str, query: &str, mode: Mode) -> RunConfig {
        RunConfig {
            source: source.to_string(),
            query: query.to_string(),
            mode,
            populations: Vec::new(),
        }
    }

    #[test]
    fn auto_mode_stays_lifted_when_supported() {
        let report = run(&config(TWO_HEADS, "two_heads", Mode::Auto)).unwrap();
        assert_eq!(report.mode_used, "lifted");
        assert!((report.probability - 0.5).abs() < 1e-9);
        assert!(report.subsumption.iter().all(|&(_, ok)| ok));
        assert_eq!(report.lifted_nodes, Some(2));
        assert!(report.ground_nodes.is_none());
    }

    #[test]
    fn auto_mode_falls_back_to_ground_on_refusal() {
        let report = run(&config(DICE, "q", Mode::Auto)).unwrap();
        assert_eq!(report.mode_used, "ground");
        assert!((report.probability - 1.0 / 18.0).abs() < 1e-9);
        assert!(report.subsumption.iter().any(|&(_, ok)| !ok));
        assert!(report.ground_nodes.is_some());
    }

    #[test]
    fn lifted_mode_refuses_what_auto_would_rescue() {
        let err = run(&config(DICE, "q", Mode::Lifted)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    const UNORDERED_PAIR: &str = "\
:- population(p, 4).\n\
:- set_sw(a, categorical([u:0.5, v:0.5])).\n\
q :- X in p, Y in p, msw(a, X, u), msw(a, Y, u).\n";

    #[test]
    fn overlapping_answers_fall_back_and_compare_clean() {
        // ∃X ∃Y. u(X) ∧ u(Y) collapses to "some draw shows u": 1 − (1/2)⁴.
        let report = run(&config(UNORDERED_PAIR, "q", Mode::Auto)).unwrap();
        assert_eq!(report.mode_used, "ground");
        assert!((report.probability - 0.9375).abs() < 1e-9);

        let report = run(&config(UNORDERED_PAIR, "q", Mode::Compare)).unwrap();
        assert!((report.probability - 0.9375).abs() < 1e-9);
        assert_eq!(report.compare_diff, Some(0.0));

        let err = run(&config(UNORDERED_PAIR, "q", Mode::Lifted)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn compare_mode_reports_the_difference() {
        let report = run(&config(TWO_HEADS, "two_heads", Mode::Compare)).unwrap();
        assert_eq!(report.mode_used, "compare");
        assert!(report.compare_diff.unwrap() <= 1e-9);
        assert!(report.lifted_nodes.is_some() && report.ground_nodes.is_some());
    }

    #[test]
    fn compare_mode_is_total_over_refusals() {
        let report = run(&config(DICE, "q", Mode::Compare)).unwrap();
        assert_eq!(report.mode_used, "compare");
        assert!((report.probability - 1.0 / 18.0).abs() < 1e-9);
        assert_eq!(report.compare_diff, Some(0.0));
        assert!(report.subsumption.iter().any(|&(_, ok)| !ok));
        assert!(report.memo_cells.is_none(), "no lifted evaluation ran");
    }

    #[test]
    fn population_overrides_change_the_run() {
        let mut c = config(TWO_HEADS, "two_heads", Mode::Auto);
        c.populations.push(("coins".to_string(), 4));
        let report = run(&c).unwrap();
        assert!((report.probability - 0.6875).abs() < 1e-9);

        c.populations = vec![("marbles".to_string(), 4)];
        assert_eq!(run(&c).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn parse_and_type_failures_have_their_exit_codes() {
        let bad = config("two_heads :- msw(", "two_heads", Mode::Auto);
        assert_eq!(run(&bad).unwrap_err().exit_code(), 2);

        // `toss` is never declared: a typing failure.
        let untyped = config(
            ":- population(coins, 3).\ntwo_heads :- X in coins, msw(toss, X, h).\n",
            "two_heads",
            Mode::Auto,
        );
        assert_eq!(run(&untyped).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn unknown_queries_are_unsupported() {
        let err = run(&config(TWO_HEADS, "nonsense", Mode::Auto)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn bench_rows_show_constant_graph_size() {
        let c = config(TWO_HEADS, "two_heads", Mode::Lifted);
        let rows = bench(&c, "coins", &[10, 100, 1000]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.lifted_nodes == rows[0].lifted_nodes));
        assert!(rows[2].memo_cells > rows[1].memo_cells);
    }

    #[test]
    fn reports_serialize_to_json() {
        let report = run(&config(TWO_HEADS, "two_heads", Mode::Auto)).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["probability"].as_f64().unwrap() >= 0.0);
        assert_eq!(json["mode_used"], "lifted");
    }
}
