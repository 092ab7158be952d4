//! Exact inference for parameterized probabilistic logic programs.
//!
//! Programs draw random values from independent *switch* families indexed by
//! members of finite populations (`msw(toss, X, h)`), and queries ask for the
//! probability that a goal holds. The engine answers such queries two ways:
//!
//! * the **ground** path grounds the query over the population and compiles
//!   its explanations into a canonical multi-valued decision diagram whose
//!   probability is a linear-time fold ([`ground`]);
//! * the **lifted** path builds a population-size-independent *lifted
//!   explanation graph* — a DAG whose node labels carry symbolic instance
//!   variables governed by an order constraint formula ([`lifted`]) — and
//!   evaluates it with generated scan recurrences whose cost grows
//!   polynomially, not exponentially, in the population size ([`infer`]).
//!
//! The two paths agree exactly (the ground engine doubles as the correctness
//! oracle in the test suite), and the driver falls back from lifted to ground
//! when the lifted evaluation's applicability check fails ([`driver`]).
//!
//! Module map:
//!
//! * [`constraints`] — difference-bound algebra for instance-order formulas.
//! * [`program`] — surface syntax, type checking, program transforms.
//! * [`ground`] — hash-consed ground explanation graphs and SLD grounding.
//! * [`lifted`] — lifted explanation graphs and their ∧/∨/quantify algebra.
//! * [`infer`] — frontier analysis, scan recurrences, lifted probability.
//! * [`driver`] — end-to-end runs, comparison mode, and benchmarking.

pub mod constraints;
pub mod program;
pub mod ground;
pub mod lifted;
pub mod infer;
pub mod driver;
pub mod dot;

pub use constraints::{AtomicConstraint, ConstraintFormula, ConstraintKind, Term, VarId, VarPool};
