//! Arithmetic expressions over probability components `t1..tM`.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'tN' | func '(' expr ')' | '(' expr ')'
//! func  := log | exp | sqrt | abs
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable t{index} at {pos} is out of range 1..={m}")]
    IndexOutOfRange { pos: usize, index: usize, m: usize },
}

impl ParseError {
    /// 1-based character position.
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownIdentifier { pos, .. }
            | ParseError::IndexOutOfRange { pos, .. } => *pos,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{func} of {value} is undefined")]
    Domain { func: Func, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("result is not finite")]
    NonFinite,
    #[error("expression needs {needed} components, got {given}")]
    Arity { needed: usize, given: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Log,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Func {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "log" => Ok(Func::Log),
            "exp" => Ok(Func::Exp),
            "sqrt" => Ok(Func::Sqrt),
            "abs" => Ok(Func::Abs),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// 0-based component index.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, theta: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(i) => theta[*i],
            Expr::Neg(a) => -a.eval(theta)?,
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(theta)?, b.eval(theta)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        x / y
                    }
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(func, a) => {
                let x = a.eval(theta)?;
                match func {
                    Func::Log if x <= 0.0 => return Err(EvalError::Domain { func: *func, value: x }),
                    Func::Sqrt if x < 0.0 => return Err(EvalError::Domain { func: *func, value: x }),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Exp => x.exp(),
                    Func::Abs => x.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }
}

/// Fully parenthesized, so printing and re-parsing is lossless.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(i) => write!(f, "t{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, a) => write!(f, "{func}({a})"),
        }
    }
}

/// A parsed functional bound to `M` components.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalExpr {
    source: String,
    ast: Expr,
    m: usize,
}

impl FunctionalExpr {
    pub fn parse(source: &str, m: usize) -> Result<Self, ParseError> {
        let ast = Parser::new(source, m).parse()?;
        Ok(FunctionalExpr {
            source: source.to_string(),
            ast,
            m,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64, EvalError> {
        if let Some(i) = self.ast.max_var() {
            if i >= theta.len() {
                return Err(EvalError::Arity {
                    needed: i + 1,
                    given: theta.len(),
                });
            }
        }
        self.ast.eval(theta)
    }
}

impl fmt::Display for FunctionalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

struct Parser {
    chars: Vec<char>,
    at: usize,
    m: usize,
}

impl Parser {
    fn new(source: &str, m: usize) -> Self {
        Parser {
            chars: source.chars().collect(),
            at: 0,
            m,
        }
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.at < self.chars.len() {
            return Err(self.error(format!("unexpected '{}'", self.chars[self.at])));
        }
        Ok(e)
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.at + 1,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.at < self.chars.len() && self.chars[self.at].is_whitespace() {
            self.at += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.at).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some('+') => BinOp::Add,
                Some('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some('*') => BinOp::Mul,
                Some('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('(') => {
                self.at += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.ident(),
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.at;
        let digits = |p: &mut Parser| {
            while p.at < p.chars.len() && p.chars[p.at].is_ascii_digit() {
                p.at += 1;
            }
        };
        digits(self);
        if self.chars.get(self.at) == Some(&'.') {
            self.at += 1;
            digits(self);
        }
        if matches!(self.chars.get(self.at), Some('e' | 'E')) {
            let save = self.at;
            self.at += 1;
            if matches!(self.chars.get(self.at), Some('+' | '-')) {
                self.at += 1;
            }
            let exp_start = self.at;
            digits(self);
            if self.at == exp_start {
                self.at = save;
            }
        }
        let text: String = self.chars[start..self.at].iter().collect();
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Expr::Num(x)),
            _ => Err(ParseError::Syntax {
                pos: start + 1,
                msg: format!("bad number '{text}'"),
            }),
        }
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.at;
        while self.at < self.chars.len()
            && (self.chars[self.at].is_ascii_alphanumeric() || self.chars[self.at] == '_')
        {
            self.at += 1;
        }
        let name: String = self.chars[start..self.at].iter().collect();
        if let Ok(func) = name.parse::<Func>() {
            if !self.eat('(') {
                return Err(self.error(format!("expected '(' after {name}")));
            }
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected ')'"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        let index = name
            .strip_prefix('t')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse::<usize>().ok());
        match index {
            Some(i) if i >= 1 && i <= self.m => Ok(Expr::Var(i - 1)),
            Some(i) => Err(ParseError::IndexOutOfRange {
                pos: start + 1,
                index: i,
                m: self.m,
            }),
            None => Err(ParseError::UnknownIdentifier { pos: start + 1, name }),
        }
    }
}
