//! Arithmetic expression language used to write Lagrangians, constraint
//! functions and candidate submanifolds.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;
//! primary = number | ident | ident "(" expr ")" | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
//!         | "." digits [ exponent ] ;
//! ident   = letter { letter | digit | "_" } ;
//! ```
//!
//! Functions: `sin cos tan exp log sqrt`. There is no implicit
//! multiplication. `^` is right-associative and binds tighter than unary
//! minus, so `-x^2` is `-(x^2)`.

use std::collections::BTreeSet;
use std::fmt;

use crate::autodiff::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    fn function_name(self) -> Option<&'static str> {
        match self {
            UnaryOp::Neg => None,
            UnaryOp::Sin => Some("sin"),
            UnaryOp::Cos => Some("cos"),
            UnaryOp::Tan => Some("tan"),
            UnaryOp::Exp => Some("exp"),
            UnaryOp::Log => Some("log"),
            UnaryOp::Sqrt => Some("sqrt"),
        }
    }

    fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

pub const FUNCTIONS: [&str; 6] = ["sin", "cos", "tan", "exp", "log", "sqrt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Expression tree, generic over how variables are referenced.
///
/// Parsed expressions carry names ([`Expression`]); [`Compiled`] expressions
/// carry slot indices into a caller-provided value array.
#[derive(Debug, Clone, PartialEq)]
pub enum Node<V> {
    Const(f64),
    Var(V),
    Unary(UnaryOp, Box<Node<V>>),
    Binary(BinaryOp, Box<Node<V>>, Box<Node<V>>),
}

pub type Expression = Node<String>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    /// Byte offset into the source.
    pub offset: usize,
    /// 1-based line.
    pub line: usize,
    /// 1-based column (in characters).
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number `{x}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let end = tok == Tok::End;
            out.push((tok, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => {
                self.bump();
                Tok::Op(c)
            }
            '(' => {
                self.bump();
                Tok::LParen
            }
            ')' => {
                self.bump();
                Tok::RParen
            }
            c if c.is_ascii_digit() || c == '.' => self.number(start)?,
            c if c.is_ascii_alphabetic() => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    self.bump();
                }
                Tok::Ident(self.src[start..self.pos].to_string())
            }
            other => {
                return Err(error_at(
                    self.src,
                    start,
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        Ok((tok, start))
    }

    fn digits(&mut self) -> usize {
        let mut count = 0;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
            count += 1;
        }
        count
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let mut mantissa = self.digits();
        if self.peek() == Some('.') {
            self.bump();
            mantissa += self.digits();
        }
        if mantissa == 0 {
            return Err(error_at(self.src, start, "expected digits in number".into()));
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if self.digits() == 0 {
                // Not an exponent after all; leave `e` for the identifier lexer,
                // which then fails as "no implicit multiplication".
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text
            .parse()
            .map_err(|_| error_at(self.src, start, format!("malformed number `{text}`")))?;
        if !value.is_finite() {
            return Err(error_at(self.src, start, format!("number `{text}` overflows")));
        }
        Ok(Tok::Num(value))
    }
}

fn error_at(src: &str, offset: usize, message: String) -> ParseError {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let column = src[line_start..offset.min(src.len())].chars().count() + 1;
    ParseError {
        offset,
        line,
        column,
        message,
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expected(&self, what: &str) -> ParseError {
        error_at(
            self.src,
            self.offset(),
            format!("expected {what}, found {}", self.peek().describe()),
        )
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.advance();
            let inner = self.unary()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.advance();
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expression, ParseError> {
        let start = self.offset();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.advance();
                Ok(Node::Const(x))
            }
            Tok::Ident(name) => {
                self.advance();
                if *self.peek() == Tok::LParen {
                    let Some(op) = UnaryOp::from_function_name(&name) else {
                        return Err(error_at(
                            self.src,
                            start,
                            format!(
                                "unknown function `{name}` (known: {})",
                                FUNCTIONS.join(", ")
                            ),
                        ));
                    };
                    self.advance();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return Err(self.expected("`)`"));
                    }
                    self.advance();
                    return Ok(Node::Unary(op, Box::new(arg)));
                }
                Ok(Node::Var(name))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.expected("`)`"));
                }
                self.advance();
                Ok(inner)
            }
            _ => Err(self.expected("number, identifier, function call or `(`")),
        }
    }
}

/// Parses an expression.
pub fn parse(source: &str) -> Result<Expression, ParseError> {
    let toks = Lexer::tokenize(source)?;
    let mut p = Parser {
        src: source,
        toks,
        at: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.expected("operator or end of input"));
    }
    Ok(e)
}

impl std::str::FromStr for Expression {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

// ---------------------------------------------------------------------------
// Printing

fn precedence<V>(e: &Node<V>) -> u8 {
    match e {
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Node::Unary(UnaryOp::Neg, _) => 3,
        Node::Binary(BinaryOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_child<V: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    child: &Node<V>,
    parens: bool,
) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Prints with the minimum parentheses needed for the parser to rebuild the
/// identical tree.
impl<V: fmt::Display> fmt::Display for Node<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(x) => write!(f, "{x:?}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                write_child(f, a, precedence(a.as_ref()) < 3)
            }
            Node::Unary(op, a) => write!(f, "{}({a})", op.function_name().unwrap_or("?")),
            Node::Binary(BinaryOp::Pow, a, b) => {
                write_child(f, a, precedence(a.as_ref()) <= 4)?;
                write!(f, "^")?;
                write_child(f, b, precedence(b.as_ref()) < 3)
            }
            Node::Binary(op, a, b) => {
                let p = precedence(self);
                write_child(f, a, precedence(a.as_ref()) < p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, precedence(b.as_ref()) <= p)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Queries and transforms

impl<V> Node<V> {
    /// Rewrites every variable reference, failing on the first unresolved one.
    pub fn try_map_vars<W, E>(&self, f: &mut impl FnMut(&V) -> Result<W, E>) -> Result<Node<W>, E> {
        Ok(match self {
            Node::Const(x) => Node::Const(*x),
            Node::Var(v) => Node::Var(f(v)?),
            Node::Unary(op, a) => Node::Unary(*op, Box::new(a.try_map_vars(f)?)),
            Node::Binary(op, a, b) => Node::Binary(
                *op,
                Box::new(a.try_map_vars(f)?),
                Box::new(b.try_map_vars(f)?),
            ),
        })
    }

    fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a V)) {
        match self {
            Node::Const(_) => {}
            Node::Var(v) => f(v),
            Node::Unary(_, a) => a.visit_vars(f),
            Node::Binary(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    /// Subtree reached by following child indices from the root.
    fn at_path(&self, path: &[u8]) -> &Node<V> {
        let mut node = self;
        for &i in path {
            node = match (node, i) {
                (Node::Unary(_, a), 0) | (Node::Binary(_, a, _), 0) => a,
                (Node::Binary(_, _, b), 1) => b,
                _ => return node,
            };
        }
        node
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, a) => 1 + a.node_count(),
            Node::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }
}

impl Expression {
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_vars(&mut |v: &String| {
            out.insert(v.clone());
        });
        out
    }

    /// Evaluates with variables looked up by name.
    pub fn evaluate<S: Scalar>(&self, env: &impl Fn(&str) -> Option<S>) -> Result<S, EvalError> {
        eval_node(self, &mut |name: &String| env(name)).map_err(|fault| fault.resolve(self))
    }

    /// Binds variable names to slot indices.
    pub fn compile(&self, resolve: impl Fn(&str) -> Option<usize>) -> Result<Compiled, String> {
        let tree = self.try_map_vars(&mut |name: &String| resolve(name).ok_or_else(|| name.clone()))?;
        Ok(Compiled {
            tree,
            source: self.clone(),
        })
    }
}

/// Convenience: evaluate with a map environment.
pub fn evaluate<S: Scalar>(
    e: &Expression,
    env: &std::collections::HashMap<String, S>,
) -> Result<S, EvalError> {
    e.evaluate(&|name| env.get(name).copied())
}

pub fn free_vars(e: &Expression) -> BTreeSet<String> {
    e.free_vars()
}

/// An expression whose variables index a value slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    tree: Node<usize>,
    source: Expression,
}

impl Compiled {
    pub fn eval<S: Scalar>(&self, slots: &[S]) -> Result<S, EvalError> {
        eval_node(&self.tree, &mut |&i: &usize| slots.get(i).copied())
            .map_err(|fault| fault.resolve(&self.source))
    }

    pub fn source(&self) -> &Expression {
        &self.source
    }

    pub fn slots(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.tree.visit_vars(&mut |&i: &usize| {
            out.insert(i);
        });
        out
    }
}

// ---------------------------------------------------------------------------
// Evaluation

enum FaultKind {
    Unbound,
    Domain(String),
}

/// Evaluation failure located by its path from the root; resolved to names
/// against the source tree only when it escapes.
struct Fault {
    path: Vec<u8>,
    kind: FaultKind,
}

impl Fault {
    fn domain(reason: String) -> Self {
        Fault {
            path: Vec::new(),
            kind: FaultKind::Domain(reason),
        }
    }

    fn within(mut self, child: u8) -> Self {
        self.path.push(child);
        self
    }

    fn resolve(mut self, source: &Expression) -> EvalError {
        self.path.reverse();
        let sub = source.at_path(&self.path);
        match self.kind {
            FaultKind::Unbound => EvalError::Unbound(sub.to_string()),
            FaultKind::Domain(reason) => EvalError::Domain {
                subexpr: sub.to_string(),
                reason,
            },
        }
    }
}

/// Largest integer exponent expanded by repeated multiplication.
const MAX_INTEGER_EXPONENT: f64 = 64.0;

/// `x^n` by left-to-right repeated multiplication; negative `n` inverts.
pub fn integer_power<S: Scalar>(x: S, n: i32) -> S {
    if n == 0 {
        return S::from_f64(1.0);
    }
    let mut acc = x;
    for _ in 1..n.unsigned_abs() {
        acc = acc * x;
    }
    if n < 0 {
        S::from_f64(1.0) / acc
    } else {
        acc
    }
}

fn eval_node<V, S: Scalar>(
    node: &Node<V>,
    lookup: &mut impl FnMut(&V) -> Option<S>,
) -> Result<S, Fault> {
    match node {
        Node::Const(x) => Ok(S::from_f64(*x)),
        Node::Var(v) => lookup(v).ok_or(Fault {
            path: Vec::new(),
            kind: FaultKind::Unbound,
        }),
        Node::Unary(op, a) => {
            let x = eval_node(a, lookup).map_err(|f| f.within(0))?;
            apply_unary(*op, x).map_err(Fault::domain)
        }
        Node::Binary(op, a, b) => {
            let x = eval_node(a, lookup).map_err(|f| f.within(0))?;
            let y = eval_node(b, lookup).map_err(|f| f.within(1))?;
            apply_binary(*op, x, y).map_err(Fault::domain)
        }
    }
}

fn apply_unary<S: Scalar>(op: UnaryOp, x: S) -> Result<S, String> {
    let v = x.value();
    Ok(match op {
        UnaryOp::Neg => -x,
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Tan => x.tan(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Log => {
            if !(v > 0.0) {
                return Err(format!("log of non-positive value {v:e}"));
            }
            x.ln()
        }
        UnaryOp::Sqrt => {
            if v < 0.0 || v.is_nan() {
                return Err(format!("sqrt of negative value {v:e}"));
            }
            if v == 0.0 && !x.is_constant() {
                return Err("sqrt is not differentiable at 0".into());
            }
            x.sqrt()
        }
    })
}

fn apply_binary<S: Scalar>(op: BinaryOp, x: S, y: S) -> Result<S, String> {
    Ok(match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => {
            if y.value() == 0.0 {
                return Err("division by zero".into());
            }
            x / y
        }
        BinaryOp::Pow => {
            let e = y.value();
            if y.is_constant() && e.fract() == 0.0 && e.abs() <= MAX_INTEGER_EXPONENT {
                if e < 0.0 && x.value() == 0.0 {
                    return Err("zero raised to a negative power".into());
                }
                integer_power(x, e as i32)
            } else {
                if !(x.value() > 0.0) {
                    return Err(format!(
                        "non-integer power of non-positive base {:e}",
                        x.value()
                    ));
                }
                x.powf(y)
            }
        }
    })
}
