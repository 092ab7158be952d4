//! Difference-bound constraint algebra over population instances.
//!
//! Instance variables range over bounded integer intervals (the mapped
//! population elements), and the constraints relating them are conjunctions of
//! atomic comparisons `t1 < t2 + k` / `t1 = t2 + k`. Such conjunctions are
//! closed under conjunction, projection, and variable substitution, and their
//! *negations* and *disjunctions* decompose into finitely many mutually
//! exclusive conjunctions. That finite-decomposition property is what lets the
//! lifted graph operations split a result into constraint alternatives instead
//! of enumerating instances.
//!
//! # Representation
//!
//! A satisfiable formula is a difference-bound matrix (DBM) over its variable
//! set plus a distinguished zero row/column carrying the interval bounds:
//! entry `m[i][j] = b` means `v_i - v_j <= b`, with `v_0 = 0`. Strict
//! comparisons are integral, so `x < y` is stored as `x - y <= -1`. The matrix
//! is kept *closed* (all-pairs shortest paths), which makes satisfiability,
//! entailment, projection, and per-variable ranges constant- or linear-time
//! lookups. An unsatisfiable formula is normalized to the distinguished
//! [`ConstraintFormula::FALSE`] value, so formula equality is structural.
//!
//! Variables are interned in a [`VarPool`]; formulas store variables in
//! ascending id order, so equal solution sets over equal variable sets compare
//! equal after closure.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Interned instance-variable identifier. Ordering follows creation order in
/// the owning [`VarPool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct VarId(pub u32);

/// Name interner for instance variables.
///
/// Source-program variables are interned by name; operations that need fresh
/// variables (standardize-apart, range merging) derive primed names from an
/// existing base so rendered graphs stay readable (`X`, `X'`, `X''`, ...).
#[derive(Debug, Default, Clone)]
pub struct VarPool {
    names: Vec<String>,
    by_name: HashMap<String, VarId>,
}

impl VarPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Intern `name`, returning the existing id if already present.
    pub fn intern(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.by_name.get(name) {
            return v;
        }
        let id = VarId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Create a fresh variable by priming `base` until the name is unused.
    pub fn fresh_primed(&mut self, base: &str) -> VarId {
        let mut name = format!("{base}'");
        while self.by_name.contains_key(&name) {
            name.push('\'');
        }
        self.intern(&name)
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.0 as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// An instance term: a variable or a mapped population element (integer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(VarId),
    Const(i64),
}

impl Term {
    pub fn as_var(&self) -> Option<VarId> {
        match self {
            Term::Var(v) => Some(*v),
            Term::Const(_) => None,
        }
    }
}

/// Comparison kind of an atomic constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Lt,
    Eq,
}

/// One atomic comparison `lhs ⊙ rhs + offset` with `⊙ ∈ {<, =}`.
///
/// Offsets appear only on variable right-hand sides; a constant right-hand
/// side folds the offset into the constant. Disequality is not atomic — the
/// front end splits `≠` into the two strict orders before graphs are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomicConstraint {
    pub kind: ConstraintKind,
    pub lhs: Term,
    pub rhs: Term,
    pub offset: i64,
}

impl AtomicConstraint {
    pub fn new(kind: ConstraintKind, lhs: Term, rhs: Term, offset: i64) -> Self {
        let (rhs, offset) = match rhs {
            Term::Const(c) => (Term::Const(c + offset), 0),
            v => (v, offset),
        };
        AtomicConstraint { kind, lhs, rhs, offset }
    }

    pub fn lt(lhs: Term, rhs: Term) -> Self {
        Self::new(ConstraintKind::Lt, lhs, rhs, 0)
    }

    pub fn lt_off(lhs: Term, rhs: Term, offset: i64) -> Self {
        Self::new(ConstraintKind::Lt, lhs, rhs, offset)
    }

    pub fn eq(lhs: Term, rhs: Term) -> Self {
        Self::new(ConstraintKind::Eq, lhs, rhs, 0)
    }

    pub fn eq_off(lhs: Term, rhs: Term, offset: i64) -> Self {
        Self::new(ConstraintKind::Eq, lhs, rhs, offset)
    }

    /// Does the ground assignment satisfy this constraint? Unassigned
    /// variables yield `None`.
    pub fn eval(&self, assign: &dyn Fn(VarId) -> Option<i64>) -> Option<bool> {
        let val = |t: &Term| match t {
            Term::Var(v) => assign(*v),
            Term::Const(c) => Some(*c),
        };
        let l = val(&self.lhs)?;
        let r = val(&self.rhs)? + self.offset;
        Some(match self.kind {
            ConstraintKind::Lt => l < r,
            ConstraintKind::Eq => l == r,
        })
    }
}

/// Errors surfaced by the constraint algebra.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("variable is not in the formula")]
    VarNotInFormula,
    #[error("operation undefined on an unsatisfiable formula")]
    Unsatisfiable,
    #[error("value {0} lies outside the variable's domain [{1}, {2}]")]
    OutOfDomain(i64, i64, i64),
}

/// Infinity sentinel for DBM entries. Kept well below `i64::MAX` so sums of
/// two entries cannot overflow.
const INF: i64 = i64::MAX / 4;

fn badd(a: i64, b: i64) -> i64 {
    if a >= INF || b >= INF {
        INF
    } else {
        a + b
    }
}

/// A conjunction of atomic instance constraints in canonical (closed DBM)
/// form, or the distinguished unsatisfiable formula `FALSE`.
///
/// Every variable carries its domain interval `[lo, hi]`; the zero row and
/// column of the matrix hold the *tightened* bounds while the domain interval
/// itself is immutable and serves as the reference box for negation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintFormula {
    repr: Repr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Repr {
    False,
    Dbm(Dbm),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Dbm {
    /// Variables with their domain intervals, ascending by id.
    vars: Vec<(VarId, (i64, i64))>,
    /// Row-major `(n+1) x (n+1)` bound matrix; index 0 is the zero variable.
    mat: Vec<i64>,
}

impl Dbm {
    fn n(&self) -> usize {
        self.vars.len()
    }

    fn dim(&self) -> usize {
        self.vars.len() + 1
    }

    fn at(&self, i: usize, j: usize) -> i64 {
        self.mat[i * self.dim() + j]
    }

    fn set(&mut self, i: usize, j: usize, b: i64) {
        let d = self.dim();
        let e = &mut self.mat[i * d + j];
        if b < *e {
            *e = b;
        }
    }

    fn idx(&self, v: VarId) -> Option<usize> {
        self.vars.binary_search_by_key(&v, |&(w, _)| w).ok().map(|i| i + 1)
    }

    /// Floyd–Warshall closure; returns false if a negative cycle (an
    /// unsatisfiable conjunction) is found.
    fn close(&mut self) -> bool {
        let d = self.dim();
        for k in 0..d {
            for i in 0..d {
                let ik = self.at(i, k);
                if ik >= INF {
                    continue;
                }
                for j in 0..d {
                    let b = badd(ik, self.at(k, j));
                    if b < self.at(i, j) {
                        self.mat[i * d + j] = b;
                    }
                }
            }
        }
        (0..d).all(|i| self.at(i, i) >= 0)
    }
}

impl ConstraintFormula {
    /// The distinguished unsatisfiable formula.
    pub const FALSE: ConstraintFormula = ConstraintFormula { repr: Repr::False };

    /// Unconstrained formula over the given variables and domains.
    ///
    /// An empty variable list yields the trivially true formula. Empty domains
    /// (`lo > hi`) normalize to `FALSE`.
    pub fn unconstrained(vars: &[(VarId, (i64, i64))]) -> Self {
        let mut vs: Vec<(VarId, (i64, i64))> = vars.to_vec();
        vs.sort_by_key(|&(v, _)| v);
        vs.dedup_by_key(|&mut (v, _)| v);
        assert_eq!(vs.len(), vars.len(), "duplicate variable in formula");
        let d = vs.len() + 1;
        let mut dbm = Dbm { vars: vs, mat: vec![INF; d * d] };
        for i in 0..d {
            dbm.mat[i * d + i] = 0;
        }
        for (k, &(_, (lo, hi))) in dbm.vars.clone().iter().enumerate() {
            dbm.set(k + 1, 0, hi);
            dbm.set(0, k + 1, -lo);
        }
        if dbm.close() {
            ConstraintFormula { repr: Repr::Dbm(dbm) }
        } else {
            Self::FALSE
        }
    }

    pub fn is_false(&self) -> bool {
        matches!(self.repr, Repr::False)
    }

    pub fn is_satisfiable(&self) -> bool {
        !self.is_false()
    }

    /// Variables of the formula in ascending id order. Empty for `FALSE`.
    pub fn vars(&self) -> &[(VarId, (i64, i64))] {
        match &self.repr {
            Repr::False => &[],
            Repr::Dbm(d) => &d.vars,
        }
    }

    pub fn has_var(&self, v: VarId) -> bool {
        match &self.repr {
            Repr::False => false,
            Repr::Dbm(d) => d.idx(v).is_some(),
        }
    }

    pub fn domain(&self, v: VarId) -> Option<(i64, i64)> {
        self.vars().iter().find(|&&(w, _)| w == v).map(|&(_, d)| d)
    }

    /// Add a variable with its domain (no-op if already present with the same
    /// domain; panics on a conflicting domain).
    pub fn with_var(&self, v: VarId, dom: (i64, i64)) -> Self {
        match &self.repr {
            Repr::False => Self::FALSE,
            Repr::Dbm(d) => {
                if let Some(existing) = self.domain(v) {
                    assert_eq!(existing, dom, "conflicting domain for variable");
                    return self.clone();
                }
                let mut vars = d.vars.clone();
                vars.push((v, dom));
                let mut out = Self::unconstrained(&vars);
                out = out.conjoin(self);
                out
            }
        }
    }

    /// Conjunction. Variable sets are merged; shared variables must agree on
    /// their domains.
    pub fn conjoin(&self, other: &ConstraintFormula) -> Self {
        let (a, b) = match (&self.repr, &other.repr) {
            (Repr::False, _) | (_, Repr::False) => return Self::FALSE,
            (Repr::Dbm(a), Repr::Dbm(b)) => (a, b),
        };
        let mut vars: Vec<(VarId, (i64, i64))> = a.vars.clone();
        for &(v, dom) in &b.vars {
            match vars.iter().find(|&&(w, _)| w == v) {
                Some(&(_, d0)) => assert_eq!(d0, dom, "conflicting domain for shared variable"),
                None => vars.push((v, dom)),
            }
        }
        vars.sort_by_key(|&(v, _)| v);
        let d = vars.len() + 1;
        let mut dbm = Dbm { vars, mat: vec![INF; d * d] };
        for i in 0..d {
            dbm.mat[i * d + i] = 0;
        }
        for (k, &(v, _)) in dbm.vars.clone().iter().enumerate() {
            for src in [a, b] {
                if let Some(si) = src.idx(v) {
                    dbm.set(k + 1, 0, src.at(si, 0));
                    dbm.set(0, k + 1, src.at(0, si));
                    for (l, &(w, _)) in dbm.vars.clone().iter().enumerate() {
                        if let Some(sj) = src.idx(w) {
                            dbm.set(k + 1, l + 1, src.at(si, sj));
                        }
                    }
                }
            }
        }
        if dbm.close() {
            ConstraintFormula { repr: Repr::Dbm(dbm) }
        } else {
            Self::FALSE
        }
    }

    /// Conjoin a single atomic constraint. All variables of the constraint
    /// must already be in the formula.
    pub fn add(&self, c: &AtomicConstraint) -> Self {
        let d = match &self.repr {
            Repr::False => return Self::FALSE,
            Repr::Dbm(d) => d,
        };
        let mut dbm = d.clone();
        for (i, j, b) in Self::entries_of(d, c).expect("constraint variable not in formula") {
            dbm.set(i, j, b);
        }
        if dbm.close() {
            ConstraintFormula { repr: Repr::Dbm(dbm) }
        } else {
            Self::FALSE
        }
    }

    /// Translate an atomic constraint into DBM entries `(i, j, b)` meaning
    /// `v_i - v_j <= b`.
    fn entries_of(d: &Dbm, c: &AtomicConstraint) -> Result<Vec<(usize, usize, i64)>, ConstraintError> {
        let term_idx = |t: &Term| -> Result<(usize, i64), ConstraintError> {
            match t {
                Term::Var(v) => d.idx(*v).map(|i| (i, 0)).ok_or(ConstraintError::VarNotInFormula),
                Term::Const(k) => Ok((0, *k)),
            }
        };
        // lhs ⊙ rhs + offset, rewritten as bounds on (lhs_idx - rhs_idx).
        let (li, lc) = term_idx(&c.lhs)?;
        let (ri, rc) = term_idx(&c.rhs)?;
        let shift = rc + c.offset - lc; // lhs ⊙ rhs_base + shift
        Ok(match c.kind {
            // lhs < rhs_base + shift  ⟺  lhs - rhs_base <= shift - 1
            ConstraintKind::Lt => vec![(li, ri, shift - 1)],
            ConstraintKind::Eq => vec![(li, ri, shift), (ri, li, -shift)],
        })
    }

    /// Does the formula entail the atomic constraint? `FALSE` entails
    /// everything. Errors if the constraint mentions unknown variables.
    pub fn entails(&self, c: &AtomicConstraint) -> Result<bool, ConstraintError> {
        let d = match &self.repr {
            Repr::False => return Ok(true),
            Repr::Dbm(d) => d,
        };
        for (i, j, b) in Self::entries_of(d, c)? {
            if i == j {
                if 0 > b {
                    return Ok(false);
                }
            } else if d.at(i, j) > b {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `η ⊨ t1 < t2`, treating unknown variables as an error.
    pub fn proves_lt(&self, t1: Term, t2: Term) -> Result<bool, ConstraintError> {
        self.entails(&AtomicConstraint::lt(t1, t2))
    }

    /// `η ⊨ t1 = t2`.
    pub fn proves_eq(&self, t1: Term, t2: Term) -> Result<bool, ConstraintError> {
        self.entails(&AtomicConstraint::eq(t1, t2))
    }

    /// Existentially project out one variable (exact for difference bounds:
    /// drop its row and column after closure).
    pub fn project_out(&self, v: VarId) -> Self {
        let d = match &self.repr {
            Repr::False => return Self::FALSE,
            Repr::Dbm(d) => d,
        };
        let Some(vi) = d.idx(v) else { return self.clone() };
        let mut vars = d.vars.clone();
        vars.remove(vi - 1);
        let dim = vars.len() + 1;
        let old: Vec<usize> = (0..d.dim()).filter(|&i| i != vi).collect();
        let mut mat = vec![INF; dim * dim];
        for (ni, &oi) in old.iter().enumerate() {
            for (nj, &oj) in old.iter().enumerate() {
                mat[ni * dim + nj] = d.at(oi, oj);
            }
        }
        ConstraintFormula { repr: Repr::Dbm(Dbm { vars, mat }) }
    }

    /// Project out every variable in `drop`.
    pub fn project_out_many(&self, drop: &[VarId]) -> Self {
        let mut f = self.clone();
        for &v in drop {
            f = f.project_out(v);
        }
        f
    }

    /// Interval of values `v` takes across all solutions (constant-time read
    /// of the closed zero row/column).
    pub fn range(&self, v: VarId) -> Result<(i64, i64), ConstraintError> {
        let d = match &self.repr {
            Repr::False => return Err(ConstraintError::Unsatisfiable),
            Repr::Dbm(d) => d,
        };
        let vi = d.idx(v).ok_or(ConstraintError::VarNotInFormula)?;
        Ok((-d.at(0, vi), d.at(vi, 0)))
    }

    /// Replace variable `v` by the constant `k` (conjoin `v = k`, project `v`
    /// out). Errors if `k` lies outside `v`'s domain; an unsatisfiable result
    /// is `FALSE`, not an error.
    pub fn substitute_value(&self, k: i64, v: VarId) -> Result<Self, ConstraintError> {
        let dom = match &self.repr {
            Repr::False => return Ok(Self::FALSE),
            Repr::Dbm(_) => self.domain(v).ok_or(ConstraintError::VarNotInFormula)?,
        };
        if k < dom.0 || k > dom.1 {
            return Err(ConstraintError::OutOfDomain(k, dom.0, dom.1));
        }
        let pinned = self.add(&AtomicConstraint::eq(Term::Var(v), Term::Const(k)));
        Ok(pinned.project_out(v))
    }

    /// Rename `old` to `new` (same domain, `new` must be fresh).
    pub fn rename_var(&self, old: VarId, new: VarId) -> Self {
        let d = match &self.repr {
            Repr::False => return Self::FALSE,
            Repr::Dbm(d) => d,
        };
        let Some(_) = d.idx(old) else { return self.clone() };
        assert!(d.idx(new).is_none(), "rename target already present");
        let mut vars = d.vars.clone();
        let pos = vars.iter().position(|&(w, _)| w == old).unwrap();
        vars[pos].0 = new;
        let perm_src: Vec<VarId> = vars.iter().map(|&(v, _)| v).collect();
        vars.sort_by_key(|&(v, _)| v);
        // Row/column permutation from the old matrix to the re-sorted one.
        let old_index = |v: VarId| -> usize {
            if v == new {
                pos + 1
            } else {
                d.idx(v).unwrap()
            }
        };
        let dim = vars.len() + 1;
        let mut mat = vec![INF; dim * dim];
        let mut order = vec![0usize];
        order.extend(vars.iter().map(|&(v, _)| old_index(v)));
        let _ = perm_src;
        for (ni, &oi) in order.iter().enumerate() {
            for (nj, &oj) in order.iter().enumerate() {
                mat[ni * dim + nj] = d.at(oi, oj);
            }
        }
        ConstraintFormula { repr: Repr::Dbm(Dbm { vars, mat }) }
    }

    /// Merge two variables into a fresh one carrying both constraint rows
    /// (the formula `η[t″/t, t″/t′]`). The fresh variable's domain is the
    /// intersection of the two merged domains.
    pub fn merge_vars(&self, a: VarId, b: VarId, fresh: VarId) -> Self {
        let d = match &self.repr {
            Repr::False => return Self::FALSE,
            Repr::Dbm(d) => d,
        };
        let (ai, bi) = match (d.idx(a), d.idx(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => panic!("merge_vars: variable not in formula"),
        };
        let (alo, ahi) = self.domain(a).unwrap();
        let (blo, bhi) = self.domain(b).unwrap();
        let dom = (alo.max(blo), ahi.min(bhi));
        let mut vars: Vec<(VarId, (i64, i64))> = d
            .vars
            .iter()
            .copied()
            .filter(|&(v, _)| v != a && v != b)
            .collect();
        assert!(!vars.iter().any(|&(v, _)| v == fresh), "merge target already present");
        vars.push((fresh, dom));
        vars.sort_by_key(|&(v, _)| v);
        if dom.0 > dom.1 {
            return Self::FALSE;
        }
        let dim = vars.len() + 1;
        let mut out = Dbm { vars, mat: vec![INF; dim * dim] };
        for i in 0..dim {
            out.mat[i * dim + i] = 0;
        }
        let src_of = |v: VarId| -> Vec<usize> {
            if v == fresh {
                vec![ai, bi]
            } else {
                vec![d.idx(v).unwrap()]
            }
        };
        let out_vars = out.vars.clone();
        for (i, &(v, (lo, hi))) in out_vars.iter().enumerate() {
            out.set(i + 1, 0, hi);
            out.set(0, i + 1, -lo);
            for &si in &src_of(v) {
                out.set(i + 1, 0, d.at(si, 0));
                out.set(0, i + 1, d.at(0, si));
                for (j, &(w, _)) in out_vars.iter().enumerate() {
                    for &sj in &src_of(w) {
                        if si != sj {
                            out.set(i + 1, j + 1, d.at(si, sj));
                        }
                    }
                }
            }
        }
        if out.close() {
            ConstraintFormula { repr: Repr::Dbm(out) }
        } else {
            Self::FALSE
        }
    }

    /// Upper bound on `x - y` if it is strictly tighter than what the domain
    /// box alone implies. Closure fills every finite entry, so this filter is
    /// what distinguishes a genuine constraint from a box artifact.
    pub fn tight_upper_diff(&self, x: VarId, y: VarId) -> Option<i64> {
        let d = match &self.repr {
            Repr::False => return None,
            Repr::Dbm(d) => d,
        };
        let (xi, yi) = (d.idx(x)?, d.idx(y)?);
        let b = d.at(xi, yi);
        let (_, xhi) = self.domain(x).unwrap();
        let (ylo, _) = self.domain(y).unwrap();
        if b < xhi - ylo {
            Some(b)
        } else {
            None
        }
    }

    /// Variables whose assigned value can raise `t`'s lower bound beyond the
    /// closed zero-column bound: `v` qualifies iff `hi_v - m[v][t] > lo_t`.
    pub fn lower_neighbors(&self, t: VarId) -> Vec<VarId> {
        self.neighbors(t, true)
    }

    /// Variables whose assigned value can lower `t`'s upper bound beyond the
    /// closed zero-row bound.
    pub fn upper_neighbors(&self, t: VarId) -> Vec<VarId> {
        self.neighbors(t, false)
    }

    fn neighbors(&self, t: VarId, lower: bool) -> Vec<VarId> {
        let d = match &self.repr {
            Repr::False => return vec![],
            Repr::Dbm(d) => d,
        };
        let Some(ti) = d.idx(t) else { return vec![] };
        let mut out = vec![];
        for (k, &(v, (vlo, vhi))) in d.vars.iter().enumerate() {
            let vi = k + 1;
            if v == t {
                continue;
            }
            if lower {
                // v - t <= m[v][t]  ⟹  t >= v - m[v][t]; beats -m[0][t] only if
                // some domain value of v makes v - m[v][t] > -m[0][t].
                let b = d.at(vi, ti);
                if b < INF && vhi - b > -d.at(0, ti) {
                    out.push(v);
                }
            } else {
                let b = d.at(ti, vi);
                if b < INF && vlo + b < d.at(ti, 0) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Lower-bound terms for `t` given that the variables in `assigned` carry
    /// values: the constant part and `(v, k)` pairs meaning `t >= v + k`.
    pub fn lower_terms(&self, t: VarId, assigned: &[VarId]) -> (i64, Vec<(VarId, i64)>) {
        let d = match &self.repr {
            Repr::False => return (1, vec![]),
            Repr::Dbm(d) => d,
        };
        let ti = d.idx(t).expect("lower_terms: unknown variable");
        let konst = -d.at(0, ti);
        let mut terms = vec![];
        for &v in assigned {
            if self.lower_neighbors(t).contains(&v) {
                let b = d.at(d.idx(v).unwrap(), ti);
                terms.push((v, -b));
            }
        }
        (konst, terms)
    }

    /// Upper-bound analogue of [`lower_terms`](Self::lower_terms): `(v, k)`
    /// pairs mean `t <= v + k`.
    pub fn upper_terms(&self, t: VarId, assigned: &[VarId]) -> (i64, Vec<(VarId, i64)>) {
        let d = match &self.repr {
            Repr::False => return (0, vec![]),
            Repr::Dbm(d) => d,
        };
        let ti = d.idx(t).expect("upper_terms: unknown variable");
        let konst = d.at(ti, 0);
        let mut terms = vec![];
        for &v in assigned {
            if self.upper_neighbors(t).contains(&v) {
                let b = d.at(ti, d.idx(v).unwrap());
                terms.push((v, b));
            }
        }
        (konst, terms)
    }

    /// Complement within the domain box, as a list of mutually exclusive
    /// satisfiable conjunctions.
    ///
    /// The formula is first reduced to its *minimal* face set (closed entries
    /// derivable from other faces plus the domain box are closure artifacts,
    /// not constraints). Then, in row-major face order, each face contributes
    /// its trichotomy complement — the equality boundary and the strict
    /// reverse, e.g. `¬(X<Y)` yields `{X=Y}` and `{Y<X}` — conjoined with all
    /// previously kept faces to force disjointness. An unconstrained formula
    /// has no faces and negates to the empty list; `FALSE` negates to the
    /// single trivially true formula (over no variables).
    pub fn negate(&self) -> Vec<ConstraintFormula> {
        let d = match &self.repr {
            Repr::False => return vec![ConstraintFormula::unconstrained(&[])],
            Repr::Dbm(d) => d,
        };
        let box_bound = |i: usize, j: usize| -> i64 {
            // Bound on v_i - v_j implied by the domain box alone.
            match (i, j) {
                (0, 0) => 0,
                (0, j) => -d.vars[j - 1].1 .0,
                (i, 0) => d.vars[i - 1].1 .1,
                (i, j) => d.vars[i - 1].1 .1 - d.vars[j - 1].1 .0,
            }
        };
        let dim = d.dim();
        let mut faces = vec![];
        for i in 0..dim {
            for j in 0..dim {
                if i != j && d.at(i, j) < box_bound(i, j) {
                    faces.push((i, j, d.at(i, j)));
                }
            }
        }
        // Greedily drop faces derivable from the remaining faces plus the box
        // (shortest path over the arc set excluding the candidate itself).
        let mut kept: Vec<(usize, usize, i64)> = vec![];
        for k in 0..faces.len() {
            let candidate = faces[k];
            let mut w = vec![INF; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    w[i * dim + j] = if i == j { 0 } else { box_bound(i, j) };
                }
            }
            for &(i, j, b) in kept.iter().chain(faces[k + 1..].iter()) {
                if (i, j) != (candidate.0, candidate.1) && b < w[i * dim + j] {
                    w[i * dim + j] = b;
                }
            }
            for m in 0..dim {
                for i in 0..dim {
                    for j in 0..dim {
                        let b = badd(w[i * dim + m], w[m * dim + j]);
                        if b < w[i * dim + j] {
                            w[i * dim + j] = b;
                        }
                    }
                }
            }
            if w[candidate.0 * dim + candidate.1] > candidate.2 {
                kept.push(candidate);
            }
        }
        let base = ConstraintFormula::unconstrained(&d.vars);
        let mut out = vec![];
        for (k, &(i, j, b)) in kept.iter().enumerate() {
            // Complement of v_i - v_j <= b splits into the boundary
            // v_i - v_j = b + 1 and the strict remainder v_i - v_j >= b + 2.
            for complement in [
                &[(i, j, b + 1), (j, i, -b - 1)][..],
                &[(j, i, -b - 2)][..],
            ] {
                let mut piece = match &base.repr {
                    Repr::Dbm(p) => p.clone(),
                    Repr::False => continue,
                };
                for &(pi, pj, pb) in &kept[..k] {
                    piece.set(pi, pj, pb);
                }
                for &(ci, cj, cb) in complement {
                    piece.set(ci, cj, cb);
                }
                if piece.close() {
                    out.push(ConstraintFormula { repr: Repr::Dbm(piece) });
                }
            }
        }
        out
    }

    /// Disjunction as mutually exclusive pieces: `(a ∧ ¬b) ∪ (b ∧ ¬a) ∪ {a ∧ b}`
    /// with unsatisfiable pieces dropped. Never returns an empty list.
    pub fn disjoin(&self, other: &ConstraintFormula) -> Vec<ConstraintFormula> {
        let mut out = vec![];
        for nb in other.negate() {
            let p = self.conjoin(&nb);
            if p.is_satisfiable() {
                out.push(p);
            }
        }
        for na in self.negate() {
            let p = other.conjoin(&na);
            if p.is_satisfiable() {
                out.push(p);
            }
        }
        let both = self.conjoin(other);
        if both.is_satisfiable() {
            out.push(both);
        }
        if out.is_empty() {
            out.push(Self::FALSE);
        }
        out
    }

    /// All solutions, lexicographic in ascending variable-id order.
    ///
    /// Exactness of DBM closure means every consistent prefix extends to a
    /// full solution, so enumeration never backtracks.
    pub fn enumerate_solutions(&self) -> Vec<Vec<(VarId, i64)>> {
        let d = match &self.repr {
            Repr::False => return vec![],
            Repr::Dbm(d) => d,
        };
        let n = d.n();
        let mut out = vec![];
        let mut partial: Vec<(VarId, i64)> = vec![];
        fn rec(d: &Dbm, partial: &mut Vec<(VarId, i64)>, out: &mut Vec<Vec<(VarId, i64)>>) {
            let k = partial.len();
            if k == d.n() {
                out.push(partial.clone());
                return;
            }
            let ti = k + 1;
            let mut lo = -d.at(0, ti);
            let mut hi = d.at(ti, 0);
            for (vi0, &(_, val)) in partial.iter().enumerate() {
                let vi = vi0 + 1;
                lo = lo.max(val - d.at(vi, ti));
                hi = hi.min(badd(val, d.at(ti, vi)));
            }
            for val in lo..=hi {
                partial.push((d.vars[k].0, val));
                rec(d, partial, out);
                partial.pop();
            }
        }
        rec(d, &mut partial, &mut out);
        let _ = n;
        out
    }

    /// Number of solutions (enumeration-backed; intended for small domains).
    pub fn count_solutions(&self) -> usize {
        self.enumerate_solutions().len()
    }

    /// Does the (total, over `vars()`) assignment satisfy the formula?
    pub fn satisfied_by(&self, assign: &[(VarId, i64)]) -> bool {
        let d = match &self.repr {
            Repr::False => return false,
            Repr::Dbm(d) => d,
        };
        let val = |v: VarId| assign.iter().find(|&&(w, _)| w == v).map(|&(_, x)| x);
        for (i, &(vi, _)) in d.vars.iter().enumerate() {
            let Some(x) = val(vi) else { return false };
            if x < -d.at(0, i + 1) || x > d.at(i + 1, 0) {
                return false;
            }
            for (j, &(vj, _)) in d.vars.iter().enumerate() {
                if i == j {
                    continue;
                }
                let Some(y) = val(vj) else { return false };
                if x - y > d.at(i + 1, j + 1) {
                    return false;
                }
            }
        }
        true
    }

    /// Render with a variable pool for names, e.g. `X<Y, 1<=X<=100, 1<=Y<=100`.
    pub fn display<'a>(&'a self, pool: &'a VarPool) -> FormulaDisplay<'a> {
        FormulaDisplay { f: self, pool }
    }
}

/// Pretty-printer for formulas (see [`ConstraintFormula::display`]).
pub struct FormulaDisplay<'a> {
    f: &'a ConstraintFormula,
    pool: &'a VarPool,
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match &self.f.repr {
            Repr::False => return write!(out, "false"),
            Repr::Dbm(d) => d,
        };
        let mut parts: Vec<String> = vec![];
        let name = |k: usize| self.pool.name(d.vars[k - 1].0);
        // Variable-variable relations, ascending (i, j), equalities folded.
        for i in 1..d.dim() {
            for j in 1..d.dim() {
                if i == j {
                    continue;
                }
                let b = d.at(i, j);
                if self.f.tight_upper_diff(d.vars[i - 1].0, d.vars[j - 1].0).is_none() {
                    continue;
                }
                let rb = d.at(j, i);
                if rb == -b {
                    if i < j {
                        // v_i - v_j = b
                        if b == 0 {
                            parts.push(format!("{}={}", name(i), name(j)));
                        } else {
                            parts.push(format!("{}={}{:+}", name(i), name(j), b));
                        }
                    }
                    continue;
                }
                // v_i - v_j <= b, strict style: v_i < v_j + b + 1
                match b + 1 {
                    0 => parts.push(format!("{}<{}", name(i), name(j))),
                    k => parts.push(format!("{}<{}{:+}", name(i), name(j), k)),
                }
            }
        }
        for (k, &(_, (lo, hi))) in d.vars.iter().enumerate() {
            let (tlo, thi) = (-d.at(0, k + 1), d.at(k + 1, 0));
            if (tlo, thi) == (lo, hi) {
                parts.push(format!("{}<={}<={}", lo, name(k + 1), hi));
            } else {
                parts.push(format!("{}<={}<={} in [{},{}]", tlo, name(k + 1), thi, lo, hi));
            }
        }
        if parts.is_empty() {
            return write!(out, "true");
        }
        write!(out, "{}", parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool3() -> (VarPool, VarId, VarId, VarId) {
        let mut p = VarPool::new();
        let x = p.intern("X");
        let y = p.intern("Y");
        let z = p.intern("Z");
        (p, x, y, z)
    }

    fn lt(a: VarId, b: VarId) -> AtomicConstraint {
        AtomicConstraint::lt(Term::Var(a), Term::Var(b))
    }

    /// Reference oracle: filter the full domain box by the atomic constraints.
    fn box_filter(
        doms: &[(VarId, (i64, i64))],
        cs: &[AtomicConstraint],
    ) -> Vec<Vec<(VarId, i64)>> {
        let mut out = vec![vec![]];
        for &(v, (lo, hi)) in doms {
            let mut next = vec![];
            for sol in &out {
                for val in lo..=hi {
                    let mut s = sol.clone();
                    s.push((v, val));
                    next.push(s);
                }
            }
            out = next;
        }
        out.into_iter()
            .filter(|sol| {
                cs.iter().all(|c| {
                    c.eval(&|v| sol.iter().find(|&&(w, _)| w == v).map(|&(_, x)| x))
                        .unwrap()
                })
            })
            .collect()
    }

    #[test]
    fn conjoin_chains_and_ranges() {
        let (_, x, y, z) = pool3();
        let dom = (1, 10);
        let f = ConstraintFormula::unconstrained(&[(x, dom), (y, dom), (z, dom)])
            .add(&lt(x, y))
            .add(&lt(y, z));
        assert!(f.entails(&lt(x, z)).unwrap());
        assert!(f
            .entails(&AtomicConstraint::lt_off(Term::Var(x), Term::Var(z), -1))
            .unwrap());
        assert_eq!(f.range(x).unwrap(), (1, 8));
        assert_eq!(f.range(y).unwrap(), (2, 9));
        assert_eq!(f.range(z).unwrap(), (3, 10));
    }

    #[test]
    fn contradiction_is_false() {
        let (_, x, y, _) = pool3();
        let f = ConstraintFormula::unconstrained(&[(x, (1, 5)), (y, (1, 5))])
            .add(&lt(x, y))
            .add(&lt(y, x));
        assert!(f.is_false());
        // FALSE entails anything.
        assert!(f.entails(&lt(x, y)).unwrap());
        assert_eq!(f.range(x), Err(ConstraintError::Unsatisfiable));
    }

    #[test]
    fn projection_is_exact() {
        let (_, x, y, z) = pool3();
        let dom = (1, 10);
        let f = ConstraintFormula::unconstrained(&[(x, dom), (y, dom), (z, dom)])
            .add(&lt(x, y))
            .add(&lt(y, z));
        let q = f.project_out(y);
        // ∃Y. X<Y<Z leaves X+1 < Z.
        assert!(q
            .entails(&AtomicConstraint::lt_off(Term::Var(x), Term::Var(z), -1))
            .unwrap());
        // Oracle comparison: projections of the solution set.
        let sols = f.enumerate_solutions();
        let mut projected: Vec<Vec<(VarId, i64)>> = sols
            .iter()
            .map(|s| s.iter().copied().filter(|&(v, _)| v != y).collect())
            .collect();
        projected.sort();
        projected.dedup();
        let mut got = q.enumerate_solutions();
        got.sort();
        assert_eq!(projected, got);
    }

    #[test]
    fn enumerate_lexicographic() {
        let (_, x, y, _) = pool3();
        let f = ConstraintFormula::unconstrained(&[(x, (1, 3)), (y, (1, 3))]).add(&lt(x, y));
        let sols: Vec<Vec<i64>> = f
            .enumerate_solutions()
            .iter()
            .map(|s| s.iter().map(|&(_, v)| v).collect())
            .collect();
        assert_eq!(sols, vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        // Matches the box-filter oracle.
        assert_eq!(
            f.enumerate_solutions(),
            box_filter(&[(x, (1, 3)), (y, (1, 3))], &[lt(x, y)])
        );
    }

    #[test]
    fn negate_partitions_the_box() {
        let (_, x, y, _) = pool3();
        let doms = [(x, (1, 3)), (y, (1, 3))];
        let f = ConstraintFormula::unconstrained(&doms).add(&lt(x, y));
        let pieces = f.negate();
        // Single minimal face X < Y; its trichotomy complement is {X=Y}, {Y<X}.
        assert_eq!(pieces.len(), 2);
        assert!(pieces[0].proves_eq(Term::Var(x), Term::Var(y)).unwrap());
        assert!(pieces[1].proves_lt(Term::Var(y), Term::Var(x)).unwrap());
        let mut covered: Vec<Vec<(VarId, i64)>> = f.enumerate_solutions();
        for p in &pieces {
            covered.extend(p.enumerate_solutions());
        }
        covered.sort();
        let mut all = ConstraintFormula::unconstrained(&doms).enumerate_solutions();
        all.sort();
        assert_eq!(covered, all, "negation pieces plus the formula tile the box");
    }

    #[test]
    fn negate_unconstrained_is_empty() {
        let (_, x, _, _) = pool3();
        let f = ConstraintFormula::unconstrained(&[(x, (1, 4))]);
        assert!(f.negate().is_empty());
        assert_eq!(
            ConstraintFormula::FALSE.negate(),
            vec![ConstraintFormula::unconstrained(&[])]
        );
    }

    #[test]
    fn disjoin_covers_and_excludes() {
        let (_, x, y, _) = pool3();
        let doms = [(x, (1, 3)), (y, (1, 3))];
        let a = ConstraintFormula::unconstrained(&doms).add(&lt(x, y));
        let b = ConstraintFormula::unconstrained(&doms).add(&lt(y, x));
        let pieces = a.disjoin(&b);
        let mut union: Vec<Vec<(VarId, i64)>> = vec![];
        for p in &pieces {
            let sols = p.enumerate_solutions();
            for s in &sols {
                assert!(!union.contains(s), "disjoin pieces must be mutually exclusive");
            }
            union.extend(sols);
        }
        union.sort();
        let mut expect = box_filter(
            &doms,
            &[], // filtered below
        );
        expect.retain(|s| {
            let get = |v| s.iter().find(|&&(w, _)| w == v).map(|&(_, val)| val).unwrap();
            get(x) != get(y)
        });
        expect.sort();
        assert_eq!(union, expect);
    }

    #[test]
    fn substitute_value_pins_and_projects() {
        let (_, x, y, _) = pool3();
        let f = ConstraintFormula::unconstrained(&[(x, (1, 3)), (y, (1, 3))]).add(&lt(x, y));
        let g = f.substitute_value(1, x).unwrap();
        assert_eq!(g.range(y).unwrap(), (2, 3));
        let h = f.substitute_value(3, x).unwrap();
        assert!(h.is_false());
        assert!(matches!(
            f.substitute_value(9, x),
            Err(ConstraintError::OutOfDomain(9, 1, 3))
        ));
    }

    #[test]
    fn merge_vars_unifies_constraints() {
        let mut p = VarPool::new();
        let x = p.intern("X");
        let y = p.intern("Y");
        let x2 = p.intern("X2");
        let y2 = p.intern("Y2");
        let dom = (1, 6);
        let f = ConstraintFormula::unconstrained(&[(x, dom), (y, dom), (x2, dom), (y2, dom)])
            .add(&lt(x, y))
            .add(&lt(x2, y2));
        let fresh = p.fresh_primed("X");
        let g = f.merge_vars(x, x2, fresh).with_var(fresh, dom);
        assert!(g.proves_lt(Term::Var(fresh), Term::Var(y)).unwrap());
        assert!(g.proves_lt(Term::Var(fresh), Term::Var(y2)).unwrap());
        assert!(!g.proves_lt(Term::Var(y), Term::Var(y2)).unwrap());
    }

    #[test]
    fn constant_terms_entail_through_domains() {
        let (_, x, y, _) = pool3();
        let f = ConstraintFormula::unconstrained(&[(x, (1, 3)), (y, (1, 3))]).add(&lt(x, y));
        // X < Y <= 3 forces X < 3.
        assert!(f.proves_lt(Term::Var(x), Term::Const(3)).unwrap());
        assert!(f.proves_lt(Term::Const(0), Term::Var(x)).unwrap());
        assert!(!f.proves_lt(Term::Var(x), Term::Const(2)).unwrap());
        assert!(f.proves_lt(Term::Const(2), Term::Const(7)).unwrap());
    }

    #[test]
    fn neighbor_analysis_filters_box_artifacts() {
        let (_, x, y, _) = pool3();
        let n = 10;
        let f = ConstraintFormula::unconstrained(&[(x, (1, n)), (y, (1, n))]).add(&lt(x, y));
        // Y's lower bound genuinely depends on X; its upper bound does not.
        assert_eq!(f.lower_neighbors(y), vec![x]);
        assert!(f.upper_neighbors(y).is_empty());
        // X's upper bound depends on Y; its lower bound does not.
        assert_eq!(f.upper_neighbors(x), vec![y]);
        assert!(f.lower_neighbors(x).is_empty());
        // Tight entry extraction for the subsumption mappings.
        assert_eq!(f.tight_upper_diff(x, y), Some(-1));
        assert_eq!(f.tight_upper_diff(y, x), None);
    }

    #[test]
    fn rename_preserves_solutions() {
        let mut p = VarPool::new();
        let x = p.intern("X");
        let y = p.intern("Y");
        let f = ConstraintFormula::unconstrained(&[(x, (1, 3)), (y, (1, 3))]).add(&lt(x, y));
        let z = p.intern("Z");
        let g = f.rename_var(x, z);
        assert!(g.proves_lt(Term::Var(z), Term::Var(y)).unwrap());
        assert_eq!(g.count_solutions(), f.count_solutions());
    }
}
