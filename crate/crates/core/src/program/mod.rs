//! Program front end: surface syntax, typing, and population layout.
//!
//! A program is a set of definite clauses over three kinds of body goals —
//! random-switch trials `msw(sw, I, v)`, population membership `X in pop`,
//! and brace-delimited order constraints `{X < Y}` — plus directives that
//! declare populations, named elements, and switch distributions:
//!
//! ```text
//! two_heads :- msw(toss, X, h), msw(toss, Y, h), {X < Y}.
//! :- population(coins, 100).
//! :- set_sw(toss, categorical([h:0.5, t:0.5])).
//! ```
//!
//! This module owns the pipeline from text to an evaluation-ready program:
//!
//! * [`parse_program`] — lexing and recursive-descent parsing with
//!   `line:col:`-prefixed errors,
//! * [`render`] — prints a program back to concrete syntax (parsing the
//!   rendered text reproduces the same AST),
//! * [`check_well_typed`] — assigns every clause variable, switch, and
//!   element constant a unique population via unification, inserting no
//!   goals but recording enough to justify membership inference; rejects
//!   recursive predicates,
//! * [`eliminate_disequality`] — expands `{X \= Y}` into the `<`/`>` case
//!   split so later stages only see `<` and `=`,
//! * [`map_populations`] — lays all populations out on a single integer
//!   interval `[1, m]`, assigning named elements the low indices.
//!
//! Variables are clause-local and stored by name here; the explanation-graph
//! builders intern them into a [`crate::constraints::VarPool`] per query.

mod parse;
mod transform;
mod typing;

pub use parse::{parse_program, parse_query};
pub use transform::{eliminate_disequality, insert_membership_goals, map_populations};
pub use typing::check_well_typed;

use std::collections::BTreeMap;
use std::fmt;

/// Position-tagged front-end error (parse or type).
///
/// Renders as `line:col: message`; callers that know the source path prepend
/// `path:` to match the conventional compiler format.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SourceError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

impl fmt::Display for SourceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

impl SourceError {
    pub fn new(pos: Pos, msg: impl Into<String>) -> Self {
        SourceError { line: pos.line, col: pos.col, msg: msg.into() }
    }
}

/// Line/column of a token, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub const fn start() -> Pos {
        Pos { line: 1, col: 1 }
    }
}

/// A term in a clause head or body goal: a variable or a named constant.
///
/// Constants name declared population elements; bare integers are not
/// surface terms (instances are abstract until populations are laid out).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ClauseTerm {
    Var(String),
    Const(String),
}

impl ClauseTerm {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            ClauseTerm::Var(v) => Some(v),
            ClauseTerm::Const(_) => None,
        }
    }
}

impl fmt::Display for ClauseTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClauseTerm::Var(v) => write!(f, "{v}"),
            ClauseTerm::Const(c) => write!(f, "{c}"),
        }
    }
}

/// A switch outcome: an atom like `h` or an integer like `3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Atom(String),
    Int(i64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Atom(a) => write!(f, "{a}"),
            Value::Int(i) => write!(f, "{i}"),
        }
    }
}

/// `pred(t1, ..., tk)` — a user-defined predicate application.
///
/// Equality ignores the source position, so structurally identical programs
/// compare equal regardless of layout.
#[derive(Debug, Clone, Eq)]
pub struct Atom {
    pub pred: String,
    pub args: Vec<ClauseTerm>,
    pub pos: Pos,
}

impl PartialEq for Atom {
    fn eq(&self, other: &Self) -> bool {
        self.pred == other.pred && self.args == other.args
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Comparison operator of a surface constraint goal.
///
/// `Ne` exists only between parsing and [`eliminate_disequality`]; the graph
/// builders accept `<` and `=` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Eq,
    Ne,
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompareOp::Lt => write!(f, "<"),
            CompareOp::Eq => write!(f, "="),
            CompareOp::Ne => write!(f, "\\="),
        }
    }
}

/// One body goal. Like [`Atom`], equality ignores source positions.
#[derive(Debug, Clone, Eq)]
pub enum Goal {
    /// Call to a user-defined predicate.
    UserAtom(Atom),
    /// `msw(switch, instance, value)`: the trial of `switch` at `instance`
    /// came out `value`.
    Msw { switch: String, instance: ClauseTerm, value: Value, pos: Pos },
    /// `X in pop`: `X` ranges over the named population.
    In { var: String, population: String, pos: Pos },
    /// `{lhs op rhs}`.
    Constraint { op: CompareOp, lhs: ClauseTerm, rhs: ClauseTerm, pos: Pos },
}

impl PartialEq for Goal {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Goal::UserAtom(a), Goal::UserAtom(b)) => a == b,
            (
                Goal::Msw { switch: s1, instance: i1, value: v1, .. },
                Goal::Msw { switch: s2, instance: i2, value: v2, .. },
            ) => s1 == s2 && i1 == i2 && v1 == v2,
            (
                Goal::In { var: v1, population: p1, .. },
                Goal::In { var: v2, population: p2, .. },
            ) => v1 == v2 && p1 == p2,
            (
                Goal::Constraint { op: o1, lhs: l1, rhs: r1, .. },
                Goal::Constraint { op: o2, lhs: l2, rhs: r2, .. },
            ) => o1 == o2 && l1 == l2 && r1 == r2,
            _ => false,
        }
    }
}

impl Goal {
    pub fn pos(&self) -> Pos {
        match self {
            Goal::UserAtom(a) => a.pos,
            Goal::Msw { pos, .. } | Goal::In { pos, .. } | Goal::Constraint { pos, .. } => *pos,
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::UserAtom(a) => write!(f, "{a}"),
            Goal::Msw { switch, instance, value, .. } => {
                write!(f, "msw({switch}, {instance}, {value})")
            }
            Goal::In { var, population, .. } => write!(f, "{var} in {population}"),
            Goal::Constraint { op, lhs, rhs, .. } => write!(f, "{{{lhs} {op} {rhs}}}"),
        }
    }
}

/// `head :- body.` (facts have an empty body).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub head: Atom,
    pub body: Vec<Goal>,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            for (i, g) in self.body.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        write!(f, ".")
    }
}

/// A declared random switch with its categorical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch {
    pub name: String,
    pub outcomes: Vec<Value>,
    pub probs: Vec<f64>,
}

impl Switch {
    /// Index of `value` among this switch's outcomes.
    pub fn outcome_index(&self, value: &Value) -> Option<usize> {
        self.outcomes.iter().position(|v| v == value)
    }
}

/// A parsed program: clauses plus the three directive tables, each in
/// declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub clauses: Vec<Clause>,
    /// `(name, cardinality)` per `:- population(name, n).`
    pub populations: Vec<(String, i64)>,
    /// `(constant, population)` per `:- element(c, pop).`
    pub elements: Vec<(String, String)>,
    pub switches: Vec<Switch>,
}

impl Program {
    pub fn switch(&self, name: &str) -> Option<&Switch> {
        self.switches.iter().find(|s| s.name == name)
    }

    pub fn population_size(&self, name: &str) -> Option<i64> {
        self.populations.iter().find(|(p, _)| p == name).map(|&(_, n)| n)
    }

    /// Clauses whose head predicate is `pred`, in program order.
    pub fn clauses_for(&self, pred: &str) -> Vec<&Clause> {
        self.clauses.iter().filter(|c| c.head.pred == pred).collect()
    }
}

/// Prints a program back to concrete syntax: clauses first, then population,
/// element, and switch directives. Parsing the result reproduces the AST.
pub fn render(program: &Program) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for c in &program.clauses {
        writeln!(out, "{c}").unwrap();
    }
    for (name, n) in &program.populations {
        writeln!(out, ":- population({name}, {n}).").unwrap();
    }
    for (c, pop) in &program.elements {
        writeln!(out, ":- element({c}, {pop}).").unwrap();
    }
    for sw in &program.switches {
        let dist: Vec<String> = sw
            .outcomes
            .iter()
            .zip(&sw.probs)
            .map(|(v, p)| format!("{v}:{p}"))
            .collect();
        writeln!(out, ":- set_sw({}, categorical([{}])).", sw.name, dist.join(", ")).unwrap();
    }
    out
}

/// A program ready for explanation-graph construction, together with the
/// analyses the builders consume.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Disequality-free, with an explicit membership goal for every variable.
    pub program: Program,
    pub types: TypeAssignment,
    pub map: PopulationMap,
}

/// Runs the standard front-end pipeline on a parsed program.
///
/// Disequalities are split first (it changes clause indices, which the type
/// assignment is keyed by), then types are inferred, membership goals made
/// explicit, and populations laid out on `[1, m]`.
pub fn prepare(program: &Program) -> Result<Prepared, SourceError> {
    let program = eliminate_disequality(program);
    let types = check_well_typed(&program)?;
    let program = insert_membership_goals(&program, &types);
    let map = map_populations(&program);
    Ok(Prepared { program, types, map })
}

/// The population assigned to every variable, switch, and element constant.
///
/// Produced by [`check_well_typed`]; variables are keyed per clause because
/// clause scopes are independent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeAssignment {
    /// `(clause index, variable name) -> population`.
    pub var_types: BTreeMap<(usize, String), String>,
    /// `switch name -> population` (switches never used in any clause are
    /// absent).
    pub switch_types: BTreeMap<String, String>,
    /// `element constant -> population`, copied from the declarations.
    pub const_types: BTreeMap<String, String>,
}

impl TypeAssignment {
    pub fn var_type(&self, clause: usize, var: &str) -> Option<&str> {
        self.var_types.get(&(clause, var.to_string())).map(|s| s.as_str())
    }

    pub fn term_type(&self, clause: usize, term: &ClauseTerm) -> Option<&str> {
        match term {
            ClauseTerm::Var(v) => self.var_type(clause, v),
            ClauseTerm::Const(c) => self.const_types.get(c).map(|s| s.as_str()),
        }
    }
}

/// Concrete integer layout of all populations on `[1, m]`.
///
/// Intervals are contiguous, disjoint, ordered by declaration, and cover
/// `[1, m]` exactly; each population's named elements occupy its lowest
/// indices in element-declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationMap {
    /// `(population, (lo, hi))` inclusive, in declaration order.
    pub intervals: Vec<(String, (i64, i64))>,
    /// `element constant -> index`.
    pub elements: BTreeMap<String, i64>,
    /// Total number of instances across all populations.
    pub m: i64,
}

impl PopulationMap {
    pub fn interval(&self, population: &str) -> Option<(i64, i64)> {
        self.intervals.iter().find(|(p, _)| p == population).map(|&(_, iv)| iv)
    }

    pub fn element(&self, constant: &str) -> Option<i64> {
        self.elements.get(constant).copied()
    }
}
