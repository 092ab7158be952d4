//! Lexer and recursive-descent parser for the surface syntax.
//!
//! The grammar is a small Prolog subset plus three directives:
//!
//! ```text
//! program   ::= (clause | directive)*
//! directive ::= ":-" "population" "(" atom "," int ")" "."
//!             | ":-" "element" "(" atom "," atom ")" "."
//!             | ":-" "set_sw" "(" atom "," "categorical" "(" "[" dist "]" ")" ")" "."
//! dist      ::= value ":" prob ("," value ":" prob)*
//! prob      ::= float | int | int "/" int
//! clause    ::= atom_goal (":-" goal ("," goal)*)? "."
//! goal      ::= "msw" "(" atom "," term "," value ")"
//!             | VAR "in" atom
//!             | "{" term op term "}"          op ∈ { "<", "=", "\=" }
//!             | atom_goal
//! term      ::= VAR | atom
//! value     ::= atom | int
//! ```
//!
//! `%` starts a comment running to end of line. Errors carry the 1-based
//! `line:col` of the offending token.

use super::{
    Atom, Clause, ClauseTerm, CompareOp, Goal, Pos, Program, SourceError, Switch, Value,
};

/// Sum tolerance for validating a categorical distribution.
const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    /// Lowercase-initial identifier (`toss`, `msw`, `in`, ...).
    Atom(String),
    /// Uppercase- or underscore-initial identifier.
    Var(String),
    Int(i64),
    Float(f64),
    Neck,   // :-
    Dot,    // clause/directive terminator
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Colon,
    Lt,
    Eq,
    Ne,     // \=
    Slash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Atom(a) => format!("'{a}'"),
            Tok::Var(v) => format!("variable '{v}'"),
            Tok::Int(i) => format!("'{i}'"),
            Tok::Float(x) => format!("'{x}'"),
            Tok::Neck => "':-'".into(),
            Tok::Dot => "'.'".into(),
            Tok::Comma => "','".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::Colon => "':'".into(),
            Tok::Lt => "'<'".into(),
            Tok::Eq => "'='".into(),
            Tok::Ne => "'\\='".into(),
            Tok::Slash => "'/'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, SourceError> {
    let mut toks = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = text.chars().peekable();

    macro_rules! bump {
        () => {{
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        }};
    }

    while let Some(&c) = chars.peek() {
        let pos = Pos { line, col };
        match c {
            ' ' | '\t' | '\r' | '\n' => {
                bump!();
            }
            '%' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump!();
                }
            }
            'a'..='z' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(bump!());
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Atom(s), pos));
            }
            'A'..='Z' | '_' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(bump!());
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Var(s), pos));
            }
            '0'..='9' => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(bump!());
                    } else {
                        break;
                    }
                }
                // A '.' continues the number only when a digit follows;
                // otherwise it terminates the clause (as in "0.5)).").
                let mut is_float = false;
                let mut probe = chars.clone();
                if probe.next() == Some('.') {
                    if matches!(probe.peek(), Some(d) if d.is_ascii_digit()) {
                        is_float = true;
                        s.push(bump!()); // '.'
                        while let Some(&c) = chars.peek() {
                            if c.is_ascii_digit() {
                                s.push(bump!());
                            } else {
                                break;
                            }
                        }
                    }
                }
                if is_float {
                    let x: f64 = s
                        .parse()
                        .map_err(|_| SourceError::new(pos, format!("invalid number '{s}'")))?;
                    toks.push((Tok::Float(x), pos));
                } else {
                    let n: i64 = s
                        .parse()
                        .map_err(|_| SourceError::new(pos, format!("integer '{s}' out of range")))?;
                    toks.push((Tok::Int(n), pos));
                }
            }
            ':' => {
                bump!();
                if chars.peek() == Some(&'-') {
                    bump!();
                    toks.push((Tok::Neck, pos));
                } else {
                    toks.push((Tok::Colon, pos));
                }
            }
            '\\' => {
                bump!();
                if chars.peek() == Some(&'=') {
                    bump!();
                    toks.push((Tok::Ne, pos));
                } else {
                    return Err(SourceError::new(pos, "expected '=' after '\\'".to_string()));
                }
            }
            '.' => {
                bump!();
                toks.push((Tok::Dot, pos));
            }
            ',' => {
                bump!();
                toks.push((Tok::Comma, pos));
            }
            '(' => {
                bump!();
                toks.push((Tok::LParen, pos));
            }
            ')' => {
                bump!();
                toks.push((Tok::RParen, pos));
            }
            '[' => {
                bump!();
                toks.push((Tok::LBracket, pos));
            }
            ']' => {
                bump!();
                toks.push((Tok::RBracket, pos));
            }
            '{' => {
                bump!();
                toks.push((Tok::LBrace, pos));
            }
            '}' => {
                bump!();
                toks.push((Tok::RBrace, pos));
            }
            '<' => {
                bump!();
                toks.push((Tok::Lt, pos));
            }
            '=' => {
                bump!();
                toks.push((Tok::Eq, pos));
            }
            '/' => {
                bump!();
                toks.push((Tok::Slash, pos));
            }
            other => {
                return Err(SourceError::new(pos, format!("unexpected character '{other}'")));
            }
        }
    }
    toks.push((Tok::Eof, Pos { line, col }));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> SourceError {
        SourceError::new(self.pos(), msg)
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, SourceError> {
        if *self.peek() == want {
            Ok(self.next().1)
        } else {
            Err(self.err(format!("expected {}, found {}", want.describe(), self.peek().describe())))
        }
    }

    fn expect_atom(&mut self, what: &str) -> Result<(String, Pos), SourceError> {
        match self.peek().clone() {
            Tok::Atom(a) => {
                let pos = self.next().1;
                Ok((a, pos))
            }
            other => Err(self.err(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i64, SourceError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(n)
            }
            other => Err(self.err(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn term(&mut self) -> Result<ClauseTerm, SourceError> {
        match self.peek().clone() {
            Tok::Var(v) => {
                self.next();
                Ok(ClauseTerm::Var(v))
            }
            Tok::Atom(a) => {
                self.next();
                Ok(ClauseTerm::Const(a))
            }
            other => Err(self.err(format!(
                "expected a variable or constant, found {}",
                other.describe()
            ))),
        }
    }

    fn value(&mut self) -> Result<Value, SourceError> {
        match self.peek().clone() {
            Tok::Atom(a) => {
                self.next();
                Ok(Value::Atom(a))
            }
            Tok::Int(n) => {
                self.next();
                Ok(Value::Int(n))
            }
            other => Err(self.err(format!(
                "expected an outcome value (atom or integer), found {}",
                other.describe()
            ))),
        }
    }

    /// One probability: `0.5`, `1`, or `1/6`.
    fn probability(&mut self) -> Result<f64, SourceError> {
        let pos = self.pos();
        let p = match self.peek().clone() {
            Tok::Float(x) => {
                self.next();
                x
            }
            Tok::Int(n) => {
                self.next();
                if *self.peek() == Tok::Slash {
                    self.next();
                    let d = self.expect_int("a denominator")?;
                    if d == 0 {
                        return Err(SourceError::new(pos, "probability has zero denominator"));
                    }
                    n as f64 / d as f64
                } else {
                    n as f64
                }
            }
            other => {
                return Err(self.err(format!("expected a probability, found {}", other.describe())))
            }
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(SourceError::new(pos, format!("probability {p} is not in [0, 1]")));
        }
        Ok(p)
    }

    fn directive(&mut self, program: &mut Program) -> Result<(), SourceError> {
        let (name, pos) = self.expect_atom("a directive name")?;
        match name.as_str() {
            "population" => {
                self.expect(Tok::LParen)?;
                let (pop, ppos) = self.expect_atom("a population name")?;
                self.expect(Tok::Comma)?;
                let n = self.expect_int("a cardinality")?;
                if n < 0 {
                    return Err(SourceError::new(ppos, format!(
                        "population '{pop}' has negative cardinality {n}"
                    )));
                }
                if program.populations.iter().any(|(p, _)| *p == pop) {
                    return Err(SourceError::new(ppos, format!(
                        "population '{pop}' is declared twice"
                    )));
                }
                self.expect(Tok::RParen)?;
                program.populations.push((pop, n));
            }
            "element" => {
                self.expect(Tok::LParen)?;
                let (c, cpos) = self.expect_atom("an element constant")?;
                self.expect(Tok::Comma)?;
                let (pop, _) = self.expect_atom("a population name")?;
                if program.elements.iter().any(|(e, _)| *e == c) {
                    return Err(SourceError::new(cpos, format!(
                        "element '{c}' is declared twice"
                    )));
                }
                self.expect(Tok::RParen)?;
                program.elements.push((c, pop));
            }
            "set_sw" => {
                self.expect(Tok::LParen)?;
                let (sw, spos) = self.expect_atom("a switch name")?;
                if program.switches.iter().any(|s| s.name == sw) {
                    return Err(SourceError::new(spos, format!(
                        "switch '{sw}' is declared twice"
                    )));
                }
                self.expect(Tok::Comma)?;
                let (kind, kpos) = self.expect_atom("a distribution")?;
                if kind != "categorical" {
                    return Err(SourceError::new(kpos, format!(
                        "unknown distribution '{kind}' (only 'categorical' is supported)"
                    )));
                }
                self.expect(Tok::LParen)?;
                self.expect(Tok::LBracket)?;
                let mut outcomes = Vec::new();
                let mut probs = Vec::new();
                loop {
                    let vpos = self.pos();
                    let v = self.value()?;
                    if outcomes.contains(&v) {
                        return Err(SourceError::new(vpos, format!(
                            "outcome '{v}' appears twice in the distribution of '{sw}'"
                        )));
                    }
                    self.expect(Tok::Colon)?;
                    probs.push(self.probability()?);
                    outcomes.push(v);
                    if *self.peek() == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RBracket)?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::RParen)?;
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOL {
                    return Err(SourceError::new(kpos, format!(
                        "distribution of '{sw}' sums to {sum}, expected 1"
                    )));
                }
                program.switches.push(Switch { name: sw, outcomes, probs });
            }
            other => {
                return Err(SourceError::new(pos, format!("unknown directive '{other}'")));
            }
        }
        self.expect(Tok::Dot)?;
        Ok(())
    }

    fn user_atom(&mut self, name: String, pos: Pos) -> Result<Atom, SourceError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.next();
            loop {
                args.push(self.term()?);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
            self.expect(Tok::RParen)?;
        }
        Ok(Atom { pred: name, args, pos })
    }

    fn goal(&mut self) -> Result<Goal, SourceError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::LBrace => {
                self.next();
                let lhs = self.term()?;
                let op = match self.next().0 {
                    Tok::Lt => CompareOp::Lt,
                    Tok::Eq => CompareOp::Eq,
                    Tok::Ne => CompareOp::Ne,
                    other => {
                        return Err(SourceError::new(pos, format!(
                            "expected '<', '=', or '\\=' in constraint, found {}",
                            other.describe()
                        )))
                    }
                };
                let rhs = self.term()?;
                self.expect(Tok::RBrace)?;
                Ok(Goal::Constraint { op, lhs, rhs, pos })
            }
            Tok::Var(v) => {
                self.next();
                match self.peek().clone() {
                    Tok::Atom(kw) if kw == "in" => {
                        self.next();
                        let (pop, _) = self.expect_atom("a population name")?;
                        Ok(Goal::In { var: v, population: pop, pos })
                    }
                    other => Err(self.err(format!(
                        "expected 'in' after variable '{v}', found {}",
                        other.describe()
                    ))),
                }
            }
            Tok::Atom(name) if name == "msw" => {
                self.next();
                self.expect(Tok::LParen)?;
                let (sw, _) = self.expect_atom("a switch name")?;
                self.expect(Tok::Comma)?;
                let instance = self.term()?;
                self.expect(Tok::Comma)?;
                let value = self.value()?;
                self.expect(Tok::RParen)?;
                Ok(Goal::Msw { switch: sw, instance, value, pos })
            }
            Tok::Atom(name) => {
                self.next();
                Ok(Goal::UserAtom(self.user_atom(name, pos)?))
            }
            other => Err(self.err(format!("expected a goal, found {}", other.describe()))),
        }
    }

    fn clause(&mut self) -> Result<Clause, SourceError> {
        let (name, pos) = self.expect_atom("a clause head")?;
        let head = self.user_atom(name, pos)?;
        let mut body = Vec::new();
        if *self.peek() == Tok::Neck {
            self.next();
            loop {
                body.push(self.goal()?);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Dot)?;
        Ok(Clause { head, body })
    }

    fn program(&mut self) -> Result<Program, SourceError> {
        let mut program = Program::default();
        loop {
            match self.peek() {
                Tok::Eof => break,
                Tok::Neck => {
                    self.next();
                    self.directive(&mut program)?;
                }
                _ => {
                    let c = self.clause()?;
                    program.clauses.push(c);
                }
            }
        }
        validate(&program)?;
        Ok(program)
    }
}

/// Declaration-level checks that need the whole file (directives may appear
/// in any order relative to their uses).
fn validate(program: &Program) -> Result<(), SourceError> {
    let origin = Pos::start();
    for (c, pop) in &program.elements {
        if program.population_size(pop).is_none() {
            return Err(SourceError::new(origin, format!(
                "element '{c}' refers to undeclared population '{pop}'"
            )));
        }
    }
    for (pop, n) in &program.populations {
        let declared = program.elements.iter().filter(|(_, p)| p == pop).count() as i64;
        if declared > *n {
            return Err(SourceError::new(origin, format!(
                "population '{pop}' has {declared} named elements but cardinality {n}"
            )));
        }
    }
    Ok(())
}

/// Parses a complete program. The empty string parses to the empty program.
pub fn parse_program(text: &str) -> Result<Program, SourceError> {
    let toks = lex(text)?;
    Parser { toks, at: 0 }.program()
}

/// Parses a query atom such as `two_heads` or `q(fred)`.
pub fn parse_query(text: &str) -> Result<Atom, SourceError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let (name, pos) = p.expect_atom("a query atom")?;
    let atom = p.user_atom(name, pos)?;
    if *p.peek() == Tok::Dot {
        p.next();
    }
    p.expect(Tok::Eof)?;
    Ok(atom)
}
