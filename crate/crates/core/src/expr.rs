//! A small scalar expression language used for order functions, Lagrangians,
//! terminal costs and trajectories.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | name '(' expr ')' | name | '(' expr ')'
//! ```
//!
//! Variables are fixed by role (`t`, `tau`, `x`, `v`, `T`, `xT`). Any other
//! identifier parses fine and fails at evaluation time as unbound.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::gamma;

/// Role-named variables understood by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// `t`, outer time.
    Time,
    /// `tau`, integration variable.
    Tau,
    /// `x`, state value.
    State,
    /// `v`, combined fractional derivative value.
    Deriv,
    /// `T`, terminal time.
    Terminal,
    /// `xT`, terminal state.
    TerminalState,
}

impl Var {
    pub const ALL: [Var; 6] = [
        Var::Time,
        Var::Tau,
        Var::State,
        Var::Deriv,
        Var::Terminal,
        Var::TerminalState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Var::Time => "t",
            Var::Tau => "tau",
            Var::State => "x",
            Var::Deriv => "v",
            Var::Terminal => "T",
            Var::TerminalState => "xT",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Gamma,
}

impl Func {
    const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Abs,
        Func::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Gamma => "gammafn",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

/// Parsed expression tree. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    /// An identifier outside the fixed variable set; always unbound.
    Unknown(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values for the role-named variables. Unset slots are unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VarBindings {
    slots: [Option<f64>; 6],
}

impl VarBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.slots[var.slot()] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.slots[var.slot()]
    }
}

impl Expr {
    /// Parses `source` into an expression tree.
    pub fn parse(source: &str) -> Result<Expr> {
        let tokens = lex(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        parser.expect_end()?;
        Ok(expr)
    }

    pub fn num(value: f64) -> Expr {
        Expr::Num(value)
    }

    pub fn var(var: Var) -> Expr {
        Expr::Var(var)
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// `1 - self`, used for the complementary orders `1 - alpha`.
    pub fn one_minus(&self) -> Expr {
        Expr::binary(BinOp::Sub, Expr::Num(1.0), self.clone())
    }

    pub fn eval(&self, b: &VarBindings) -> Result<f64> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(var) => b
                .get(*var)
                .ok_or_else(|| Error::UnboundVariable(var.name().to_string())),
            Expr::Unknown(name) => Err(Error::UnboundVariable(name.clone())),
            Expr::Neg(e) => Ok(-e.eval(b)?),
            Expr::Bin(op, l, r) => {
                let lv = l.eval(b)?;
                let rv = r.eval(b)?;
                let out = match op {
                    BinOp::Add => lv + rv,
                    BinOp::Sub => lv - rv,
                    BinOp::Mul => lv * rv,
                    BinOp::Div => {
                        if rv == 0.0 {
                            return Err(Error::domain(self.to_string(), "division by zero"));
                        }
                        lv / rv
                    }
                    BinOp::Pow => lv.powf(rv),
                };
                self.finite(out, lv.is_finite() && rv.is_finite())
            }
            Expr::Call(f, arg) => {
                let x = arg.eval(b)?;
                let out = match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Ln => {
                        if x <= 0.0 {
                            return Err(Error::domain(
                                self.to_string(),
                                format!("logarithm of non-positive value {x}"),
                            ));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(Error::domain(
                                self.to_string(),
                                format!("square root of negative value {x}"),
                            ));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                    Func::Gamma => gamma(x).map_err(|_| {
                        Error::domain(self.to_string(), format!("gamma of non-positive value {x}"))
                    })?,
                };
                self.finite(out, x.is_finite())
            }
        }
    }

    /// Replaces every subtree whose variables are all bound in `b` by its
    /// value. Evaluating the result with the remaining variables performs the
    /// same floating-point operations as evaluating `self` directly.
    pub fn fold(&self, b: &VarBindings) -> Result<Expr> {
        let constant = |e: Expr| -> Result<Expr> {
            let done = match &e {
                Expr::Neg(x) | Expr::Call(_, x) => matches!(**x, Expr::Num(_)),
                Expr::Bin(_, l, r) => matches!((&**l, &**r), (Expr::Num(_), Expr::Num(_))),
                _ => false,
            };
            if done {
                Ok(Expr::Num(e.eval(&VarBindings::new())?))
            } else {
                Ok(e)
            }
        };
        match self {
            Expr::Num(_) | Expr::Unknown(_) => Ok(self.clone()),
            Expr::Var(v) => Ok(b.get(*v).map_or_else(|| self.clone(), Expr::Num)),
            Expr::Neg(e) => constant(Expr::Neg(Box::new(e.fold(b)?))),
            Expr::Call(f, e) => constant(Expr::Call(*f, Box::new(e.fold(b)?))),
            Expr::Bin(op, l, r) => constant(Expr::Bin(*op, Box::new(l.fold(b)?), Box::new(r.fold(b)?))),
        }
    }

    fn finite(&self, out: f64, inputs_finite: bool) -> Result<f64> {
        if out.is_finite() || !inputs_finite {
            Ok(out)
        } else {
            Err(Error::domain(self.to_string(), format!("result is {out}")))
        }
    }

    /// Names of every identifier that appears as a variable.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.name().to_string());
            }
            Expr::Unknown(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// Errors if the expression mentions a variable outside `allowed`.
    pub fn check_vars(&self, allowed: &[Var]) -> Result<()> {
        let bad: Vec<String> = self
            .free_vars()
            .into_iter()
            .filter(|name| !allowed.iter().any(|v| v.name() == name))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            let allowed: Vec<_> = allowed.iter().map(|v| v.name()).collect();
            Err(Error::Problem(format!(
                "expression `{self}` uses variable(s) {} but only {} are available here",
                bad.join(", "),
                allowed.join(", ")
            )))
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Bin(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.precedence() < min;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}")?,
            Expr::Var(v) => f.write_str(v.name())?,
            Expr::Unknown(name) => f.write_str(name)?,
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_at(f, 3)?;
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                arg.fmt_at(f, 0)?;
                f.write_str(")")?;
            }
            Expr::Bin(op, l, r) => {
                let (lmin, rmin) = match op {
                    BinOp::Add | BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    BinOp::Pow => (5, 3),
                };
                l.fmt_at(f, lmin)?;
                let spaced = matches!(op, BinOp::Add | BinOp::Sub);
                if spaced {
                    write!(f, " {} ", op.symbol())?;
                } else {
                    f.write_str(op.symbol())?;
                }
                r.fmt_at(f, rmin)?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("name `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>, expected: &[&str]) -> Error {
    Error::Syntax {
        offset,
        message: message.into(),
        expected: expected.iter().map(|s| s.to_string()).collect(),
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| syntax(start, format!("malformed number `{text}`"), &["number"]))?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(syntax(
                    start,
                    format!("unexpected character `{ch}`"),
                    &["number", "name", "`(`", "operator"],
                ));
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

const OPERAND: &[&str] = &["number", "name", "`(`", "`-`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn expect_end(&self) -> Result<()> {
        match self.peek() {
            Tok::End => Ok(()),
            tok => Err(syntax(
                self.offset(),
                format!("unexpected {}", tok.describe()),
                &["`+`", "`-`", "`*`", "`/`", "`^`", "end of input"],
            )),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(Error::UnknownFunction { name, offset })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.close_paren()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if let Some(var) = Var::from_name(&name) {
                    Ok(Expr::Var(var))
                } else {
                    Ok(Expr::Unknown(name))
                }
            }
            tok => Err(syntax(
                offset,
                format!("unexpected {}", tok.describe()),
                OPERAND,
            )),
        }
    }

    fn close_paren(&mut self) -> Result<()> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            tok => Err(syntax(
                self.offset(),
                format!("unexpected {}", tok.describe()),
                &["`)`", "`+`", "`-`", "`*`", "`/`", "`^`"],
            )),
        }
    }
}
