//! `pxlift` — evaluate queries over parameterized probabilistic logic
//! programs.
//!
//! One invocation loads a program, evaluates one query in the chosen mode,
//! and optionally exports the explanation graph as DOT, dumps the recurrence
//! equation system, or sweeps a population size for benchmarking.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 parse error, 3 type error,
//! 4 unsupported or unevaluable query, 5 compare-mode mismatch.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pxlift::driver::{bench, run, DriverError, Mode, RunConfig};
use pxlift::dot::{ground_dot, lifted_dot};
use pxlift::ground::GroundEngine;
use pxlift::infer::emit_recurrences;
use pxlift::lifted::LiftedBuilder;
use pxlift::program::{parse_program, parse_query, prepare};

/// Exact inference for parameterized probabilistic logic programs.
#[derive(Parser)]
#[command(name = "pxlift", version, about)]
struct Args {
    /// Program file.
    #[arg(long)]
    program: PathBuf,

    /// Query atom, e.g. `two_heads` or `q(fred)`.
    #[arg(long)]
    query: String,

    /// Evaluation mode.
    #[arg(long, default_value = "auto")]
    mode: String,

    /// Population size override, repeatable: `--population coins=100`.
    #[arg(long = "population", value_name = "NAME=N")]
    population: Vec<String>,

    /// Write the explanation graph as DOT to this path.
    #[arg(long, value_name = "PATH")]
    dot: Option<PathBuf>,

    /// Print the emitted recurrence equation system.
    #[arg(long)]
    recurrences: bool,

    /// Print the run report as JSON.
    #[arg(long)]
    json: bool,

    /// Sweep a population size: `--bench coins=10,100,1000`.
    #[arg(long, value_name = "NAME=N1,N2,...")]
    bench: Option<String>,
}

fn parse_override(text: &str) -> Result<(String, i64), String> {
    let (name, n) = text
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=N, found '{text}'"))?;
    let n: i64 = n
        .parse()
        .map_err(|_| format!("population size in '{text}' is not an integer"))?;
    Ok((name.to_string(), n))
}

fn fail(code: i32, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code as u8)
}

/// Export the graph for `config` as DOT, mirroring the driver's pipeline.
fn write_dot(config: &RunConfig, path: &PathBuf) -> Result<(), (i32, String)> {
    let mut program =
        parse_program(&config.source).map_err(|e| (2, e.to_string()))?;
    for (name, n) in &config.populations {
        match program.populations.iter_mut().find(|(p, _)| p == name) {
            Some(slot) => slot.1 = *n,
            None => return Err((4, format!("unknown population '{name}' in override"))),
        }
    }
    let prepared = prepare(&program).map_err(|e| (3, e.to_string()))?;
    let query = parse_query(&config.query).map_err(|e| (2, e.to_string()))?;
    let text = if config.mode == Mode::Ground {
        let mut engine = GroundEngine::new(prepared.program.clone(), prepared.map.clone());
        let root = engine.ground_query(&query).map_err(|e| (4, e.to_string()))?;
        ground_dot(&engine, root)
    } else {
        let mut b = LiftedBuilder::new(prepared);
        let graphs = b.query_graphs(&query).map_err(|e| (4, e.to_string()))?;
        lifted_dot(&b, &graphs[0])
    };
    fs::write(path, text).map_err(|e| (1, format!("cannot write {}: {e}", path.display())))
}

/// Print the recurrence system for `config`, or say why there is none.
fn print_recurrences(config: &RunConfig) -> Result<(), (i32, String)> {
    let mut program =
        parse_program(&config.source).map_err(|e| (2, e.to_string()))?;
    for (name, n) in &config.populations {
        match program.populations.iter_mut().find(|(p, _)| p == name) {
            Some(slot) => slot.1 = *n,
            None => return Err((4, format!("unknown population '{name}' in override"))),
        }
    }
    let prepared = prepare(&program).map_err(|e| (3, e.to_string()))?;
    let query = parse_query(&config.query).map_err(|e| (2, e.to_string()))?;
    let mut b = LiftedBuilder::new(prepared);
    let graphs = b.query_graphs(&query).map_err(|e| (4, e.to_string()))?;
    for g in &graphs {
        match emit_recurrences(&b, g) {
            Ok(sys) => print!("{sys}"),
            Err(e) => eprintln!("recurrences unavailable: {e}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE, so a closed pipe (`pxlift ... | head`) would
    // surface as a print panic; die quietly instead, like other line tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let args = Args::parse();

    let Some(mode) = Mode::parse(&args.mode) else {
        return fail(
            2,
            format!("unknown mode '{}'; use lifted, ground, auto, or compare", args.mode),
        );
    };
    let mut populations = Vec::new();
    for o in &args.population {
        match parse_override(o) {
            Ok(p) => populations.push(p),
            Err(e) => return fail(2, e),
        }
    }
    let source = match fs::read_to_string(&args.program) {
        Ok(s) => s,
        Err(e) => return fail(1, format!("cannot read {}: {e}", args.program.display())),
    };
    let config = RunConfig {
        source,
        query: args.query.clone(),
        mode,
        populations,
    };

    if let Some(spec) = &args.bench {
        if !matches!(mode, Mode::Auto | Mode::Lifted) {
            return fail(4, "bench requires mode auto or lifted");
        }
        let (name, sizes) = match spec.split_once('=') {
            Some((name, rest)) => {
                let sizes: Result<Vec<i64>, _> =
                    rest.split(',').map(|s| s.trim().parse::<i64>()).collect();
                match sizes {
                    Ok(sizes) if !sizes.is_empty() => (name.to_string(), sizes),
                    _ => return fail(2, format!("expected NAME=N1,N2,..., found '{spec}'")),
                }
            }
            None => return fail(2, format!("expected NAME=N1,N2,..., found '{spec}'")),
        };
        return match bench(&config, &name, &sizes) {
            Ok(rows) => {
                if args.json {
                    println!("{}", serde_json::to_string_pretty(&rows).expect("serializable"));
                } else {
                    println!("{:<10} {:<14} {:<12} {:<10}", "n", "lifted_nodes", "memo_cells", "wall_ms");
                    for r in &rows {
                        println!(
                            "{:<10} {:<14} {:<12} {:<10.3}",
                            r.n, r.lifted_nodes, r.memo_cells, r.wall_ms
                        );
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(e.exit_code(), e),
        };
    }

    if let Some(path) = &args.dot {
        if let Err((code, msg)) = write_dot(&config, path) {
            return fail(code, msg);
        }
    }
    if args.recurrences {
        if let Err((code, msg)) = print_recurrences(&config) {
            return fail(code, msg);
        }
    }

    match run(&config) {
        Ok(report) => {
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                println!("probability: {}", report.probability);
                println!("mode: {}", report.mode_used);
                if !report.subsumption.is_empty() {
                    let verdicts: Vec<String> = report
                        .subsumption
                        .iter()
                        .map(|(v, ok)| format!("{v}: {}", if *ok { "holds" } else { "fails" }))
                        .collect();
                    println!("subsumption: {}", verdicts.join(", "));
                }
                if let Some(n) = report.lifted_nodes {
                    println!("lifted nodes: {n}");
                }
                if let Some(n) = report.ground_nodes {
                    println!("ground nodes: {n}");
                }
                if let Some(n) = report.memo_cells {
                    println!("memo cells: {n}");
                }
                if let Some(d) = report.compare_diff {
                    println!("compare diff: {d}");
                }
                println!("time: {:.3} ms", report.wall_ms);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            match &e {
                DriverError::CompareMismatch { lifted, ground } => {
                    eprintln!("error: {e}");
                    eprintln!("  lifted: {lifted}");
                    eprintln!("  ground: {ground}");
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(code as u8)
        }
    }
}
