//! Arithmetic expression parser and evaluator.
//!
//! Grammar: infix `+ - * /` with the usual precedence, unary minus,
//! parentheses, calls `exp(a)`, `min(a,b)`, `max(a,b)`, `pow(a,b)`, numeric
//! literals, and caller-defined variables. `pow` with a constant integer
//! exponent in `[-64, 64]` compiles to repeated multiplication so hot loops
//! avoid `f64::powf`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character {found:?} at byte {at}")]
    UnexpectedChar { found: char, at: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at byte {at}: expected {expected}")]
    UnexpectedToken { at: usize, expected: &'static str },
    #[error("unknown variable {name:?}")]
    UnknownVariable { name: String },
    #[error("function {name} takes {expected} argument(s), got {got}")]
    BadArity {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unknown function {name:?}")]
    UnknownFunction { name: String },
    #[error("malformed number at byte {at}")]
    BadNumber { at: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Exp(Box<Node>),
    Min(Box<Node>, Box<Node>),
    Max(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    /// `pow` specialized to a constant integer exponent.
    PowI(Box<Node>, i32),
}

impl Node {
    fn eval(&self, env: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => env[*i],
            Node::Add(a, b) => a.eval(env) + b.eval(env),
            Node::Sub(a, b) => a.eval(env) - b.eval(env),
            Node::Mul(a, b) => a.eval(env) * b.eval(env),
            Node::Div(a, b) => a.eval(env) / b.eval(env),
            Node::Neg(a) => -a.eval(env),
            Node::Exp(a) => a.eval(env).exp(),
            Node::Min(a, b) => a.eval(env).min(b.eval(env)),
            Node::Max(a, b) => a.eval(env).max(b.eval(env)),
            Node::Pow(a, b) => a.eval(env).powf(b.eval(env)),
            Node::PowI(a, k) => powi(a.eval(env), *k),
        }
    }
}

/// Exponentiation by squaring; exact repeated multiplication for small |k|.
fn powi(base: f64, k: i32) -> f64 {
    if k < 0 {
        return 1.0 / powi(base, -k);
    }
    let mut acc = 1.0;
    let mut b = base;
    let mut k = k as u32;
    while k > 0 {
        if k & 1 == 1 {
            acc *= b;
        }
        b *= b;
        k >>= 1;
    }
    acc
}

/// A parsed expression bound to a fixed variable table.
#[derive(Clone)]
pub struct ExprFn {
    root: Node,
    vars: Vec<String>,
    source: String,
}

impl fmt::Debug for ExprFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExprFn")
            .field("source", &self.source)
            .field("vars", &self.vars)
            .finish()
    }
}

impl ExprFn {
    /// Parse `src` with exactly the named variables available.
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self, ParseError> {
        let owned: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let mut resolver = |name: &str| owned.iter().position(|v| v == name);
        let root = Parser::new(src).parse_full(&mut resolver)?;
        Ok(ExprFn {
            root,
            vars: owned,
            source: src.to_string(),
        })
    }

    /// Parse `src`, admitting any variable `accept` recognizes. Slots are
    /// assigned in order of first appearance; the final table is returned
    /// through [`ExprFn::vars`].
    pub fn parse_dynamic(
        src: &str,
        mut accept: impl FnMut(&str) -> bool,
    ) -> Result<Self, ParseError> {
        let mut table: Vec<String> = Vec::new();
        let mut resolver = |name: &str| {
            if let Some(i) = table.iter().position(|v| v == name) {
                return Some(i);
            }
            if accept(name) {
                table.push(name.to_string());
                Some(table.len() - 1)
            } else {
                None
            }
        };
        let root = Parser::new(src).parse_full(&mut resolver)?;
        Ok(ExprFn {
            root,
            vars: table,
            source: src.to_string(),
        })
    }

    /// Variable names in slot order; `eval` expects `env` in this order.
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluate with `env[i]` bound to variable slot `i`.
    pub fn eval(&self, env: &[f64]) -> f64 {
        debug_assert_eq!(env.len(), self.vars.len());
        self.root.eval(env)
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
    LParen,
    RParen,
    Comma,
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn parse_full(
        &mut self,
        resolver: &mut dyn FnMut(&str) -> Option<usize>,
    ) -> Result<Node, ParseError> {
        let node = self.expr(0, resolver)?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(ParseError::UnexpectedToken {
                at: self.pos,
                expected: "end of expression",
            });
        }
        Ok(node)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_tok(&mut self) -> Result<Option<(Tok, usize)>, ParseError> {
        let save = self.pos;
        let tok = self.next_tok()?;
        let after = self.pos;
        self.pos = save;
        Ok(tok.map(|t| (t, after)))
    }

    fn next_tok(&mut self) -> Result<Option<Tok>, ParseError> {
        self.skip_ws();
        if self.pos >= self.bytes.len() {
            return Ok(None);
        }
        let at = self.pos;
        let c = self.bytes[at];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'0'..=b'9' | b'.' => {
                let start = at;
                let mut end = at;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_digit() || self.bytes[end] == b'.')
                {
                    end += 1;
                }
                // Exponent suffix: e or E, optional sign, digits.
                if end < self.bytes.len() && (self.bytes[end] == b'e' || self.bytes[end] == b'E') {
                    let mut j = end + 1;
                    if j < self.bytes.len() && (self.bytes[j] == b'+' || self.bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < self.bytes.len() && self.bytes[j].is_ascii_digit() {
                        while j < self.bytes.len() && self.bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        end = j;
                    }
                }
                let text = &self.src[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| ParseError::BadNumber { at: start })?;
                self.pos = end;
                Tok::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = at;
                let mut end = at;
                while end < self.bytes.len()
                    && (self.bytes[end].is_ascii_alphanumeric() || self.bytes[end] == b'_')
                {
                    end += 1;
                }
                self.pos = end;
                Tok::Ident(self.src[start..end].to_string())
            }
            _ => {
                return Err(ParseError::UnexpectedChar {
                    found: self.src[at..].chars().next().unwrap_or('?'),
                    at,
                })
            }
        };
        Ok(Some(tok))
    }

    fn expr(
        &mut self,
        min_prec: u8,
        resolver: &mut dyn FnMut(&str) -> Option<usize>,
    ) -> Result<Node, ParseError> {
        let mut lhs = self.prefix(resolver)?;
        loop {
            let Some((tok, after)) = self.peek_tok()? else {
                break;
            };
            let (prec, build): (u8, fn(Box<Node>, Box<Node>) -> Node) = match tok {
                Tok::Plus => (1, |a, b| Node::Add(a, b)),
                Tok::Minus => (1, |a, b| Node::Sub(a, b)),
                Tok::Star => (2, |a, b| Node::Mul(a, b)),
                Tok::Slash => (2, |a, b| Node::Div(a, b)),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.pos = after;
            let rhs = self.expr(prec + 1, resolver)?;
            lhs = build(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(
        &mut self,
        resolver: &mut dyn FnMut(&str) -> Option<usize>,
    ) -> Result<Node, ParseError> {
        let at = self.pos;
        let Some(tok) = self.next_tok()? else {
            return Err(ParseError::UnexpectedEnd);
        };
        match tok {
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Minus => {
                let inner = self.prefix(resolver)?;
                Ok(match inner {
                    Node::Const(c) => Node::Const(-c),
                    other => Node::Neg(Box::new(other)),
                })
            }
            Tok::Plus => self.prefix(resolver),
            Tok::LParen => {
                let inner = self.expr(0, resolver)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some((Tok::LParen, after)) = self.peek_tok()? {
                    self.pos = after;
                    let args = self.call_args(resolver)?;
                    return build_call(&name, args);
                }
                match resolver(&name) {
                    Some(slot) => Ok(Node::Var(slot)),
                    None => Err(ParseError::UnknownVariable { name }),
                }
            }
            _ => Err(ParseError::UnexpectedToken {
                at,
                expected: "a value",
            }),
        }
    }

    fn call_args(
        &mut self,
        resolver: &mut dyn FnMut(&str) -> Option<usize>,
    ) -> Result<Vec<Node>, ParseError> {
        let mut args = vec![self.expr(0, resolver)?];
        loop {
            let at = self.pos;
            match self.next_tok()? {
                Some(Tok::Comma) => args.push(self.expr(0, resolver)?),
                Some(Tok::RParen) => return Ok(args),
                Some(_) => {
                    return Err(ParseError::UnexpectedToken {
                        at,
                        expected: "`,` or `)`",
                    })
                }
                None => return Err(ParseError::UnexpectedEnd),
            }
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let at = self.pos;
        match self.next_tok()? {
            Some(Tok::RParen) => Ok(()),
            Some(_) => Err(ParseError::UnexpectedToken {
                at,
                expected: "`)`",
            }),
            None => Err(ParseError::UnexpectedEnd),
        }
    }
}

fn build_call(name: &str, mut args: Vec<Node>) -> Result<Node, ParseError> {
    fn two(name: &'static str, args: &mut Vec<Node>) -> Result<(Box<Node>, Box<Node>), ParseError> {
        if args.len() != 2 {
            return Err(ParseError::BadArity {
                name,
                expected: 2,
                got: args.len(),
            });
        }
        let b = Box::new(args.pop().unwrap());
        let a = Box::new(args.pop().unwrap());
        Ok((a, b))
    }
    match name {
        "exp" => {
            if args.len() != 1 {
                return Err(ParseError::BadArity {
                    name: "exp",
                    expected: 1,
                    got: args.len(),
                });
            }
            Ok(Node::Exp(Box::new(args.pop().unwrap())))
        }
        "min" => {
            let (a, b) = two("min", &mut args)?;
            Ok(Node::Min(a, b))
        }
        "max" => {
            let (a, b) = two("max", &mut args)?;
            Ok(Node::Max(a, b))
        }
        "pow" => {
            let (a, b) = two("pow", &mut args)?;
            if let Node::Const(e) = *b {
                if e.fract() == 0.0 && e.abs() <= 64.0 {
                    return Ok(Node::PowI(a, e as i32));
                }
            }
            Ok(Node::Pow(a, b))
        }
        _ => Err(ParseError::UnknownFunction {
            name: name.to_string(),
        }),
    }
}
