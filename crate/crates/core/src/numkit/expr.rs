//! Closed-form scalar functions written as text, e.g. `x^4 - x^2 + 1` or
//! `x1 - x2^2`.
//!
//! `x` is an alias for `x1`; variables are 1-based in text and 0-based in
//! slices. Supported functions are `relu`, `sigmoid`, `log`, `sq` and `abs`
//! (smoothed). Anything else is a capability error. Exponents must be
//! integer literals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var, ABS_SMOOTH_EPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Powi(Box<Node>, i32),
    Relu(Box<Node>),
    Sigmoid(Box<Node>),
    Ln(Box<Node>),
    AbsSmooth(Box<Node>),
    // Only produced by differentiation.
    Step(Box<Node>),
    SmoothSign(Box<Node>),
    SmoothSignSlope(Box<Node>),
}

/// A parsed closed-form function of a covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    root: Node,
    dim: usize,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(parse_err(format!("unexpected trailing input in `{text}`")));
        }
        let dim = max_var(&root).map_or(1, |m| m + 1);
        Ok(Self { root, dim })
    }

    /// Number of covariates the function reads (at least 1).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Widen the declared input dimension, e.g. a constant over R^3.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = self.dim.max(dim);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }

    /// Record the function on a tape for reverse-mode gradients.
    pub fn record<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Var<'t> {
        record(&self.root, tape, x)
    }

    pub fn gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, mut g) = super::tape::grad(|t, vars| self.record(t, vars), x);
        g.resize(x.len(), 0.0);
        (v, g)
    }

    /// Symbolic partial derivative with respect to covariate `index`.
    pub fn partial(&self, index: usize) -> Result<Expr> {
        Ok(Expr {
            root: simplify(derive(&self.root, index)?),
            dim: self.dim,
        })
    }

    /// Exact Hessian (row-major) through two rounds of symbolic differentiation.
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = x.len();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            let di = self.partial(i)?;
            for j in 0..d {
                h[i * d + j] = di.partial(j)?.eval(x);
            }
        }
        Ok(h)
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.to_string()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn write_node(n: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Const(c) => {
            if *c < 0.0 {
                write!(f, "({c:?})")
            } else {
                write!(f, "{c:?}")
            }
        }
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::Add(a, b) => bin(f, a, "+", b),
        Node::Sub(a, b) => bin(f, a, "-", b),
        Node::Mul(a, b) => bin(f, a, "*", b),
        Node::Div(a, b) => bin(f, a, "/", b),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, f)?;
            write!(f, ")")
        }
        Node::Powi(a, k) => {
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, "^{k})")
        }
        Node::Relu(a) => call(f, "relu", a),
        Node::Sigmoid(a) => call(f, "sigmoid", a),
        Node::Ln(a) => call(f, "log", a),
        Node::AbsSmooth(a) => call(f, "abs", a),
        Node::Step(a) => call(f, "step", a),
        Node::SmoothSign(a) => call(f, "sign", a),
        Node::SmoothSignSlope(a) => call(f, "dsign", a),
    }
}

fn bin(f: &mut fmt::Formatter<'_>, a: &Node, op: &str, b: &Node) -> fmt::Result {
    write!(f, "(")?;
    write_node(a, f)?;
    write!(f, " {op} ")?;
    write_node(b, f)?;
    write!(f, ")")
}

fn call(f: &mut fmt::Formatter<'_>, name: &str, a: &Node) -> fmt::Result {
    write!(f, "{name}(")?;
    write_node(a, f)?;
    write!(f, ")")
}

fn max_var(n: &Node) -> Option<usize> {
    match n {
        Node::Const(_) => None,
        Node::Var(i) => Some(*i),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            match (max_var(a), max_var(b)) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            }
        }
        Node::Neg(a)
        | Node::Powi(a, _)
        | Node::Relu(a)
        | Node::Sigmoid(a)
        | Node::Ln(a)
        | Node::AbsSmooth(a)
        | Node::Step(a)
        | Node::SmoothSign(a)
        | Node::SmoothSignSlope(a) => max_var(a),
    }
}

fn eval(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Var(i) => x.get(*i).copied().unwrap_or(0.0),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Neg(a) => -eval(a, x),
        Node::Powi(a, k) => eval(a, x).powi(*k),
        Node::Relu(a) => eval(a, x).max(0.0),
        Node::Sigmoid(a) => sigmoid(eval(a, x)),
        Node::Ln(a) => eval(a, x).ln(),
        Node::AbsSmooth(a) => {
            let u = eval(a, x);
            (u * u + ABS_SMOOTH_EPS).sqrt() - ABS_SMOOTH_EPS.sqrt()
        }
        Node::Step(a) => {
            if eval(a, x) > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Node::SmoothSign(a) => {
            let u = eval(a, x);
            u / (u * u + ABS_SMOOTH_EPS).sqrt()
        }
        Node::SmoothSignSlope(a) => {
            let u = eval(a, x);
            ABS_SMOOTH_EPS / (u * u + ABS_SMOOTH_EPS).powf(1.5)
        }
    }
}

fn record<'t>(n: &Node, tape: &'t Tape, x: &[Var<'t>]) -> Var<'t> {
    match n {
        Node::Const(c) => tape.constant(*c),
        Node::Var(i) => x.get(*i).copied().unwrap_or_else(|| tape.constant(0.0)),
        Node::Add(a, b) => record(a, tape, x) + record(b, tape, x),
        Node::Sub(a, b) => record(a, tape, x) - record(b, tape, x),
        Node::Mul(a, b) => record(a, tape, x) * record(b, tape, x),
        Node::Div(a, b) => record(a, tape, x) / record(b, tape, x),
        Node::Neg(a) => -record(a, tape, x),
        Node::Powi(a, k) => record(a, tape, x).powi(*k),
        Node::Relu(a) => record(a, tape, x).relu(),
        Node::Sigmoid(a) => record(a, tape, x).sigmoid(),
        Node::Ln(a) => record(a, tape, x).ln(),
        Node::AbsSmooth(a) => record(a, tape, x).abs_smooth(),
        // Piecewise-constant in their argument almost everywhere.
        Node::Step(_) | Node::SmoothSign(_) | Node::SmoothSignSlope(_) => {
            tape.constant(eval(n, &x.iter().map(|v| v.value()).collect::<Vec<_>>()))
        }
    }
}

fn derive(n: &Node, i: usize) -> Result<Node> {
    use Node::*;
    let b = Box::new;
    Ok(match n {
        Const(_) => Const(0.0),
        Var(j) => Const(if *j == i { 1.0 } else { 0.0 }),
        Add(p, q) => Add(b(derive(p, i)?), b(derive(q, i)?)),
        Sub(p, q) => Sub(b(derive(p, i)?), b(derive(q, i)?)),
        Mul(p, q) => Add(
            b(Mul(b(derive(p, i)?), q.clone())),
            b(Mul(p.clone(), b(derive(q, i)?))),
        ),
        Div(p, q) => Div(
            b(Sub(
                b(Mul(b(derive(p, i)?), q.clone())),
                b(Mul(p.clone(), b(derive(q, i)?))),
            )),
            b(Powi(q.clone(), 2)),
        ),
        Neg(p) => Neg(b(derive(p, i)?)),
        Powi(p, k) => Mul(
            b(Mul(b(Const(*k as f64)), b(Powi(p.clone(), k - 1)))),
            b(derive(p, i)?),
        ),
        Relu(p) => Mul(b(Step(p.clone())), b(derive(p, i)?)),
        Sigmoid(p) => Mul(
            b(Mul(
                b(Sigmoid(p.clone())),
                b(Sub(b(Const(1.0)), b(Sigmoid(p.clone())))),
            )),
            b(derive(p, i)?),
        ),
        Ln(p) => Div(b(derive(p, i)?), p.clone()),
        AbsSmooth(p) => Mul(b(SmoothSign(p.clone())), b(derive(p, i)?)),
        Step(_) => Const(0.0),
        SmoothSign(p) => Mul(b(SmoothSignSlope(p.clone())), b(derive(p, i)?)),
        SmoothSignSlope(_) => {
            return Err(Error::Capability(
                "third derivative of smoothed abs".into(),
            ))
        }
    })
}

fn simplify(n: Node) -> Node {
    use Node::*;
    let b = Box::new;
    match n {
        Add(p, q) => match (simplify(*p), simplify(*q)) {
            (Const(x), Const(y)) => Const(x + y),
            (Const(z), e) | (e, Const(z)) if z == 0.0 => e,
            (p, q) => Add(b(p), b(q)),
        },
        Sub(p, q) => match (simplify(*p), simplify(*q)) {
            (Const(x), Const(y)) => Const(x - y),
            (e, Const(z)) if z == 0.0 => e,
            (Const(z), e) if z == 0.0 => Neg(b(e)),
            (p, q) => Sub(b(p), b(q)),
        },
        Mul(p, q) => match (simplify(*p), simplify(*q)) {
            (Const(x), Const(y)) => Const(x * y),
            (Const(z), _) | (_, Const(z)) if z == 0.0 => Const(0.0),
            (Const(o), e) | (e, Const(o)) if o == 1.0 => e,
            (p, q) => Mul(b(p), b(q)),
        },
        Div(p, q) => match (simplify(*p), simplify(*q)) {
            (Const(z), _) if z == 0.0 => Const(0.0),
            (e, Const(o)) if o == 1.0 => e,
            (p, q) => Div(b(p), b(q)),
        },
        Neg(p) => match simplify(*p) {
            Const(x) => Const(-x),
            e => Neg(b(e)),
        },
        Powi(p, k) => match (simplify(*p), k) {
            (_, 0) => Const(1.0),
            (e, 1) => e,
            (Const(x), k) => Const(x.powi(k)),
            (e, k) => Powi(b(e), k),
        },
        Relu(p) => Relu(b(simplify(*p))),
        Sigmoid(p) => Sigmoid(b(simplify(*p))),
        Ln(p) => Ln(b(simplify(*p))),
        AbsSmooth(p) => AbsSmooth(b(simplify(*p))),
        Step(p) => Step(b(simplify(*p))),
        SmoothSign(p) => SmoothSign(b(simplify(*p))),
        SmoothSignSlope(p) => SmoothSignSlope(b(simplify(*p))),
        leaf => leaf,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn parse_err(message: String) -> Error {
    Error::Parse { line: 1, message }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| parse_err(format!("bad number `{s}`")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(parse_err(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_op('-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else if self.eat_op('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let neg = self.eat_op('-');
            match self.tokens.get(self.pos).cloned() {
                Some(Token::Num(v)) if v.fract() == 0.0 && v.abs() <= 64.0 => {
                    self.pos += 1;
                    let k = if neg { -(v as i32) } else { v as i32 };
                    Ok(Node::Powi(Box::new(base), k))
                }
                Some(Token::Num(v)) => Err(Error::Capability(format!(
                    "non-integer exponent {v}"
                ))),
                _ => Err(parse_err("exponent must be an integer literal".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Node> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(parse_err("missing `)`".into()));
                }
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.eat_op('(') {
                    let arg = Box::new(self.expr()?);
                    if !self.eat_op(')') {
                        return Err(parse_err("missing `)`".into()));
                    }
                    return match name.as_str() {
                        "relu" => Ok(Node::Relu(arg)),
                        "sigmoid" | "logistic" => Ok(Node::Sigmoid(arg)),
                        "log" | "ln" => Ok(Node::Ln(arg)),
                        "sq" => Ok(Node::Powi(arg, 2)),
                        "abs" => Ok(Node::AbsSmooth(arg)),
                        other => Err(Error::Capability(other.to_string())),
                    };
                }
                if name == "x" {
                    return Ok(Node::Var(0));
                }
                match name.strip_prefix('x').map(str::parse::<usize>) {
                    Some(Ok(k)) if k >= 1 => Ok(Node::Var(k - 1)),
                    _ => Err(parse_err(format!("unknown variable `{name}`"))),
                }
            }
            other => Err(parse_err(format!("unexpected token {other:?}"))),
        }
    }
}
