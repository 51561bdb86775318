//! Profile functions of the base coordinate.
//!
//! A profile is a small expression tree over `x`, numbers, `pi`, the four
//! arithmetic operators, `^` with a constant exponent and the functions
//! `sin`, `cos`, `exp`. Evaluation is forward-mode to second order, so the
//! derivatives are exact up to rounding.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Value and first two derivatives of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, d1: 0.0, d2: 0.0 }
    }

    pub fn variable(x: f64) -> Self {
        Jet { v: x, d1: 1.0, d2: 0.0 }
    }

    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        Jet { v: f, d1: f1 * self.d1, d2: f2 * self.d1 * self.d1 + f1 * self.d2 }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(self.v.ln(), r, -r * r)
    }

    pub fn powf(self, p: f64) -> Self {
        if p == 0.0 {
            return Jet::constant(1.0);
        }
        let pi = p.round();
        if pi == p && pi.abs() <= 64.0 {
            let n = pi as i32;
            let f2 = if n == 1 { 0.0 } else { p * (p - 1.0) * self.v.powi(n - 2) };
            return self.chain(self.v.powi(n), p * self.v.powi(n - 1), f2);
        }
        self.chain(self.v.powf(p), p * self.v.powf(p - 1.0), p * (p - 1.0) * self.v.powf(p - 2.0))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { v: -self.v, d1: -self.d1, d2: -self.d2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Const(f64),
    X,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn eval(&self, x: Jet) -> Jet {
        match self {
            Expr::Const(c) => Jet::constant(*c),
            Expr::X => x,
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, p) => a.eval(x).powf(*p),
            Expr::Call(f, a) => {
                let u = a.eval(x);
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                }
            }
        }
    }

    fn depends_on_x(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::X => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_x(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_x() || b.depends_on_x()
            }
        }
    }
}

/// Error raised while parsing a profile expression.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}: `{token}` at position {position}")]
pub struct ParseError {
    pub message: String,
    pub token: String,
    /// Character offset into the source, starting at 0.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize, String)>,
}

fn lex(src: &str) -> Result<Lexer, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
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
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError {
                message: "malformed number".into(),
                token: text.clone(),
                position: start,
            })?;
            toks.push((Tok::Num(value), start, text));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            toks.push((Tok::Ident(text.clone()), start, text));
        } else if "+-*/^()".contains(c) {
            toks.push((Tok::Op(c), i, c.to_string()));
            i += 1;
        } else {
            return Err(ParseError {
                message: "unexpected character".into(),
                token: c.to_string(),
                position: i,
            });
        }
    }
    toks.push((Tok::End, chars.len(), "<end of input>".into()));
    Ok(Lexer { toks })
}

struct Parser {
    lexer: Lexer,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.lexer.toks[self.pos].0
    }

    fn error(&self, message: &str) -> ParseError {
        let (_, position, text) = &self.lexer.toks[self.pos];
        ParseError { message: message.into(), token: text.clone(), position: *position }
    }

    fn bump(&mut self) {
        self.pos += 1;
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Op('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let at = self.pos;
            let exponent = self.unary()?;
            if exponent.depends_on_x() {
                self.pos = at;
                return Err(self.error("exponent must be a constant"));
            }
            let p = exponent.eval(Jet::constant(0.0)).v;
            return Ok(Expr::Pow(Box::new(base), p));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "x" => {
                        self.bump();
                        return Ok(Expr::X);
                    }
                    "pi" => {
                        self.bump();
                        return Ok(Expr::Const(std::f64::consts::PI));
                    }
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    _ => return Err(self.error("unknown identifier")),
                };
                self.bump();
                if self.peek() != &Tok::Op('(') {
                    return Err(self.error("expected `(` after function name"));
                }
                self.bump();
                let arg = self.expr()?;
                if self.peek() != &Tok::Op(')') {
                    return Err(self.error("expected `)`"));
                }
                self.bump();
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::Op('(') => {
                self.bump();
                let inner = self.expr()?;
                if self.peek() != &Tok::Op(')') {
                    return Err(self.error("expected `)`"));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error("expected a number, `x`, a function or `(`")),
        }
    }
}

/// A smooth function of one variable with exact derivatives.
#[derive(Clone, PartialEq)]
pub struct Profile {
    source: String,
    expr: Expr,
}

impl Profile {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut parser = Parser { lexer: lex(src)?, pos: 0 };
        let expr = parser.expr()?;
        if parser.peek() != &Tok::End {
            return Err(parser.error("unexpected token"));
        }
        Ok(Profile { source: src.trim().to_string(), expr })
    }

    pub fn constant(c: f64) -> Self {
        Profile { source: format!("{c:?}"), expr: Expr::Const(c) }
    }

    pub fn zero() -> Self {
        Profile::constant(0.0)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64) -> Jet {
        self.expr.eval(Jet::variable(x))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).v
    }

    pub fn is_constant(&self) -> bool {
        !self.expr.depends_on_x()
    }

    /// Identically zero as an expression (not merely numerically small).
    pub fn is_zero(&self) -> bool {
        self.expr == Expr::Const(0.0)
    }

    /// `self + c` as a new profile.
    pub fn shifted(&self, c: f64) -> Self {
        Profile {
            source: format!("{c:?} + ({})", self.source),
            expr: Expr::Add(Box::new(Expr::Const(c)), Box::new(self.expr.clone())),
        }
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({:?})", self.source)
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}
