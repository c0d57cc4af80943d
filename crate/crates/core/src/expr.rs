//! Arithmetic expressions for coefficient fields and nonlinearities.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          // right-associative
//! primary := number | variable | name '(' sum (',' sum)* ')' | '(' sum ')'
//! ```
//!
//! Variables are `x1`, `x2`, `x3`, `r` (Euclidean norm of `x`) and `t`.
//! Functions: `exp log sqrt abs sin cos` (one argument), `min max pow` (two).
//! Columns in errors are 1-based character positions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },

    #[error("unknown identifier `{name}` at column {column}")]
    UnknownIdentifier { name: String, column: usize },

    #[error("`{name}` at column {column} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        column: usize,
        expected: usize,
        found: usize,
    },

    #[error("variable `{name}` at column {column} is not available here")]
    Unavailable { name: String, column: usize },

    #[error("domain error in columns {start}..{end}: {message}")]
    Domain {
        message: String,
        start: usize,
        end: usize,
    },
}

/// Half-open 1-based column range in the source text.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Coordinate `x_k`, 1-based.
    X(usize),
    R,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Min,
    Max,
    Pow,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Sin,
        Func::Cos,
        Func::Min,
        Func::Max,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// AST node. Equality ignores source spans.
#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub span: Span,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    pub fn new(kind: NodeKind) -> Self {
        Self {
            kind,
            span: Span::default(),
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Node)) {
        f(self);
        match &self.kind {
            NodeKind::Num(_) | NodeKind::Var(_) => {}
            NodeKind::Neg(a) => a.visit(f),
            NodeKind::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            NodeKind::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
        }
    }

    fn eval(&self, x: &[f64], t: Option<f64>) -> Result<f64, ExprError> {
        let v = match &self.kind {
            NodeKind::Num(v) => *v,
            NodeKind::Var(var) => match *var {
                Var::X(k) => *x.get(k - 1).ok_or_else(|| self.unavailable())?,
                Var::R => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
                Var::T => t.ok_or_else(|| self.unavailable())?,
            },
            NodeKind::Neg(a) => -a.eval(x, t)?,
            NodeKind::Binary(op, a, b) => {
                let (a, b) = (a.eval(x, t)?, b.eval(x, t)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            NodeKind::Call(func, args) => {
                let a = args[0].eval(x, t)?;
                match func {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(self.domain(&format!("log of {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.domain(&format!("sqrt of {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Min => a.min(args[1].eval(x, t)?),
                    Func::Max => a.max(args[1].eval(x, t)?),
                    Func::Pow => a.powf(args[1].eval(x, t)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.domain(&format!("result is {v}")))
        }
    }

    fn domain(&self, message: &str) -> ExprError {
        ExprError::Domain {
            message: message.to_owned(),
            start: self.span.start,
            end: self.span.end,
        }
    }

    fn unavailable(&self) -> ExprError {
        let name = match self.kind {
            NodeKind::Var(v) => var_name(v),
            _ => String::from("?"),
        };
        ExprError::Unavailable {
            name,
            column: self.span.start,
        }
    }
}

fn var_name(v: Var) -> String {
    match v {
        Var::X(k) => format!("x{k}"),
        Var::R => "r".into(),
        Var::T => "t".into(),
    }
}

/// Parsed expression. Printing yields a fully parenthesized form that parses
/// back to the same tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.sum()?;
        match p.peek() {
            Tok::End => Ok(Self { root }),
            _ => Err(p.unexpected("end of input")),
        }
    }

    pub fn from_node(root: Node) -> Self {
        Self { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Evaluates at spatial point `x` (length = grid dimension) and optional `t`.
    pub fn eval(&self, x: &[f64], t: Option<f64>) -> Result<f64, ExprError> {
        self.root.eval(x, t)
    }

    pub fn uses_t(&self) -> bool {
        let mut found = false;
        self.root.visit(&mut |n| {
            if matches!(n.kind, NodeKind::Var(Var::T)) {
                found = true;
            }
        });
        found
    }

    /// Largest coordinate index `k` referenced as `x_k` (0 when none).
    pub fn max_coordinate(&self) -> usize {
        let mut k = 0;
        self.root.visit(&mut |n| {
            if let NodeKind::Var(Var::X(j)) = n.kind {
                k = k.max(j);
            }
        });
        k
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            NodeKind::Num(v) => write!(f, "{v:?}"),
            NodeKind::Var(v) => write!(f, "{}", var_name(*v)),
            NodeKind::Neg(a) => write!(f, "(-{a})"),
            NodeKind::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            NodeKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize, usize)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let s: String = chars[i..j].iter().collect();
            let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                column: start,
                message: format!("malformed number `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(ExprError::Syntax {
                    column: start,
                    message: format!("number `{s}` overflows"),
                });
            }
            out.push((Tok::Num(v), start, j + 1));
            i = j;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            out.push((Tok::Ident(chars[i..j].iter().collect()), start, j + 1));
            i = j;
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    column: start,
                    message: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push((tok, start, start + 1));
        i += 1;
    }
    let end = chars.len() + 1;
    out.push((Tok::End, end, end));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn column(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn prev_end(&self) -> usize {
        self.tokens[self.pos.saturating_sub(1)].2
    }

    fn bump(&mut self) -> (Tok, usize, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        let found = match self.peek() {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        };
        ExprError::Syntax {
            column: self.column(),
            message: format!("expected {wanted}, found {found}"),
        }
    }

    fn binary(op: BinOp, a: Node, b: Node) -> Node {
        let span = Span {
            start: a.span.start,
            end: b.span.end,
        };
        Node {
            kind: NodeKind::Binary(op, Box::new(a), Box::new(b)),
            span,
        }
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Tok::Op('-') = self.peek() {
            let (_, start, _) = self.bump();
            let inner = self.unary()?;
            let end = inner.span.end;
            return Ok(Node {
                kind: NodeKind::Neg(Box::new(inner)),
                span: Span { start, end },
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Self::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let (start, _) = (self.column(), ());
        match self.peek().clone() {
            Tok::Num(v) => {
                let (_, s, e) = self.bump();
                Ok(Node {
                    kind: NodeKind::Num(v),
                    span: Span { start: s, end: e },
                })
            }
            Tok::LParen => {
                self.bump();
                let mut inner = self.sum()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                inner.span = Span {
                    start,
                    end: self.prev_end(),
                };
                Ok(inner)
            }
            Tok::Ident(name) => {
                let (_, s, e) = self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::lookup(&name).ok_or_else(|| ExprError::UnknownIdentifier {
                        name: name.clone(),
                        column: s,
                    })?;
                    self.bump();
                    let mut args = vec![self.sum()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.sum()?);
                    }
                    if *self.peek() != Tok::RParen {
                        return Err(self.unexpected("`,` or `)`"));
                    }
                    self.bump();
                    if args.len() != func.arity() {
                        return Err(ExprError::Arity {
                            name,
                            column: s,
                            expected: func.arity(),
                            found: args.len(),
                        });
                    }
                    return Ok(Node {
                        kind: NodeKind::Call(func, args),
                        span: Span {
                            start: s,
                            end: self.prev_end(),
                        },
                    });
                }
                let var = parse_var(&name).ok_or(ExprError::UnknownIdentifier {
                    name,
                    column: s,
                })?;
                Ok(Node {
                    kind: NodeKind::Var(var),
                    span: Span { start: s, end: e },
                })
            }
            _ => Err(self.unexpected("an operand")),
        }
    }
}

fn parse_var(name: &str) -> Option<Var> {
    match name {
        "r" => Some(Var::R),
        "t" => Some(Var::T),
        _ => {
            let k: usize = name.strip_prefix('x')?.parse().ok()?;
            (1..=crate::geometry::MAX_DIM).contains(&k).then_some(Var::X(k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(s: &str, x: &[f64], t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, Some(t)).unwrap()
    }

    #[test]
    fn decaying_density_at_unit_radius() {
        assert_eq!(eval("(1+r)^(-3)", &[1.0, 0.0, 0.0], 0.0), 0.125);
    }

    #[test]
    fn min_of_coordinate() {
        assert_eq!(eval("min(x1, 1-x1)", &[0.25], 0.0), 0.25);
    }

    #[test]
    fn malformed_operator_reports_column() {
        let err = Expr::parse("2*^3").unwrap_err();
        assert_eq!(
            err,
            ExprError::Syntax {
                column: 3,
                message: "expected an operand, found `^`".into()
            }
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("-2^2", &[], 0.0), -4.0);
        assert_eq!(eval("2^3^2", &[], 0.0), 512.0);
        assert_eq!(eval("2^-1", &[], 0.0), 0.5);
        assert_eq!(eval("1-2-3", &[], 0.0), -4.0);
        assert_eq!(eval("8/4/2", &[], 0.0), 1.0);
        assert_eq!(eval("1+2*3", &[], 0.0), 7.0);
        assert_eq!(eval("pow(t, 0.5)*2", &[], 4.0), 4.0);
        assert_eq!(eval("1.5e-1*2E1", &[], 0.0), 3.0);
    }

    #[test]
    fn identifier_and_arity_errors() {
        assert!(matches!(
            Expr::parse("foo(1)"),
            Err(ExprError::UnknownIdentifier { column: 1, .. })
        ));
        assert!(matches!(
            Expr::parse("1 + y"),
            Err(ExprError::UnknownIdentifier { column: 5, .. })
        ));
        assert!(matches!(
            Expr::parse("min(1)"),
            Err(ExprError::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            Expr::parse("(1+2"),
            Err(ExprError::Syntax { column: 5, .. })
        ));
        assert!(matches!(
            Expr::parse("1 2"),
            Err(ExprError::Syntax { column: 3, .. })
        ));
    }

    #[test]
    fn domain_errors_carry_spans() {
        let e = Expr::parse("1 + log(x1)").unwrap();
        match e.eval(&[-1.0], None) {
            Err(ExprError::Domain { start, end, .. }) => assert_eq!((start, end), (5, 12)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Expr::parse("1/(t-t)").unwrap().eval(&[], Some(1.0)),
            Err(ExprError::Domain { .. })
        ));
    }

    #[test]
    fn unavailable_variables() {
        let e = Expr::parse("x3 + t").unwrap();
        assert!(matches!(
            e.eval(&[1.0, 2.0], Some(0.0)),
            Err(ExprError::Unavailable { .. })
        ));
        assert!(matches!(
            e.eval(&[1.0, 2.0, 3.0], None),
            Err(ExprError::Unavailable { .. })
        ));
        assert!(e.uses_t());
        assert_eq!(e.max_coordinate(), 3);
    }

    #[test]
    fn print_parse_identity() {
        for s in ["-(x1+2)*3^t", "sqrt(abs(sin(r)))/max(1e-7, cos(x2))", "2^3^-x1"] {
            let e = Expr::parse(s).unwrap();
            let back = Expr::parse(&e.to_string()).unwrap();
            assert_eq!(e, back, "{s} -> {e}");
        }
    }
}
