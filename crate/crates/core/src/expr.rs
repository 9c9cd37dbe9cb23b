//! A small expression language for declaring vector fields and output maps.
//!
//! Grammar (fixed, no user-defined functions):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | variable | func '(' sum ')' | '(' sum ')'
//! ```
//!
//! Variables are `x1..xn`, `u1..up` and `t`. Functions are `sin`, `cos`,
//! `tan`, `exp`, `log`, `sqrt`, `abs` and `sign` (the last one appears in
//! derivatives of `abs`). `+ - * /` are left-associative; `^` binds tighter
//! than unary minus on its left and is right-associative.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable '{name}' at byte {offset} is out of range")]
    VariableOutOfRange { name: String, offset: usize },
    #[error("domain error in '{subexpr}': {reason}")]
    Domain { subexpr: String, reason: String },
    #[error("expected {expected} values for {what}, got {actual}")]
    Arity {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
}

impl From<ExprError> for crate::Error {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Domain { .. } => crate::Error::Domain(e.to_string()),
            other => crate::Error::InvalidArgument(other.to_string()),
        }
    }
}

/// Zero-based variable identifiers; printed one-based (`X(0)` is `x1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X(usize),
    U(usize),
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::T => f.write_str("t"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    const ALL: [Func; 8] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Sign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == s)
    }

    fn apply(self, v: f64) -> std::result::Result<f64, &'static str> {
        let r = match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => {
                if v <= 0.0 {
                    return Err("log of a non-positive number");
                }
                v.ln()
            }
            Func::Sqrt => {
                if v < 0.0 {
                    return Err("sqrt of a negative number");
                }
                v.sqrt()
            }
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        if r.is_finite() {
            Ok(r)
        } else {
            Err("non-finite result")
        }
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
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

const NEG_PREC: u8 = 3;
const ATOM_PREC: u8 = 5;

impl Node {
    fn precedence(&self) -> u8 {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 0,
            Node::Const(_) | Node::Var(_) | Node::Call(..) => ATOM_PREC,
            Node::Neg(_) => NEG_PREC,
            Node::Bin(op, ..) => op.precedence(),
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Node::Const(c) => {
                if self.precedence() == 0 {
                    out.push_str(&format!("({c})"));
                } else {
                    out.push_str(&format!("{c}"));
                }
            }
            Node::Var(v) => out.push_str(&v.to_string()),
            Node::Neg(a) => {
                out.push('-');
                a.write_wrapped(out, a.precedence() < NEG_PREC);
            }
            Node::Bin(op, a, b) => {
                let p = op.precedence();
                if *op == BinOp::Pow {
                    a.write_wrapped(out, a.precedence() <= p);
                    out.push('^');
                    b.write_wrapped(out, b.precedence() < ATOM_PREC);
                } else {
                    a.write_wrapped(out, a.precedence() < p);
                    out.push(' ');
                    out.push(op.symbol());
                    out.push(' ');
                    b.write_wrapped(out, b.precedence() <= p);
                }
            }
            Node::Call(func, a) => {
                out.push_str(func.name());
                out.push('(');
                a.write(out);
                out.push(')');
            }
        }
    }

    fn write_wrapped(&self, out: &mut String, wrap: bool) {
        if wrap && !matches!(self, Node::Const(_)) {
            out.push('(');
            self.write(out);
            out.push(')');
        } else {
            self.write(out);
        }
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Node::Const(c) if *c == v)
    }

    fn eval(&self, x: &[f64], u: &[f64], t: f64) -> Result<f64, ExprError> {
        let domain = |node: &Node, reason: &str| ExprError::Domain {
            subexpr: node.to_string(),
            reason: reason.to_string(),
        };
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(Var::X(i)) => Ok(x[*i]),
            Node::Var(Var::U(i)) => Ok(u[*i]),
            Node::Var(Var::T) => Ok(t),
            Node::Neg(a) => Ok(-a.eval(x, u, t)?),
            Node::Bin(op, a, b) => {
                let (va, vb) = (a.eval(x, u, t)?, b.eval(x, u, t)?);
                let r = match op {
                    BinOp::Add => va + vb,
                    BinOp::Sub => va - vb,
                    BinOp::Mul => va * vb,
                    BinOp::Div => {
                        if vb == 0.0 {
                            return Err(domain(self, "division by zero"));
                        }
                        va / vb
                    }
                    BinOp::Pow => va.powf(vb),
                };
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(domain(self, "non-finite result"))
                }
            }
            Node::Call(func, a) => func.apply(a.eval(x, u, t)?).map_err(|r| domain(self, r)),
        }
    }

    fn depends_on(&self, var: Var) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(v) => *v == var,
            Node::Neg(a) | Node::Call(_, a) => a.depends_on(var),
            Node::Bin(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        match self {
            Node::Const(_) => {}
            Node::Var(v) => f(*v),
            Node::Neg(a) | Node::Call(_, a) => a.visit_vars(f),
            Node::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    fn derivative(&self, var: Var) -> Node {
        if !self.depends_on(var) {
            return Node::Const(0.0);
        }
        match self {
            Node::Const(_) => Node::Const(0.0),
            Node::Var(v) => Node::Const(if *v == var { 1.0 } else { 0.0 }),
            Node::Neg(a) => neg(a.derivative(var)),
            Node::Bin(op, a, b) => {
                let (da, db) = (a.derivative(var), b.derivative(var));
                let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b), mul(a, db)),
                    BinOp::Div => div(sub(mul(da, b.clone()), mul(a, db)), pow(b, Node::Const(2.0))),
                    BinOp::Pow => {
                        if !b.depends_on(var) {
                            // b a^(b-1) a'
                            let exponent = sub(b.clone(), Node::Const(1.0));
                            mul(mul(b, pow(a, exponent)), da)
                        } else {
                            // a^b (b' log a + b a'/a)
                            let term = add(mul(db, call(Func::Log, a.clone())), div(mul(b.clone(), da), a.clone()));
                            mul(pow(a, b), term)
                        }
                    }
                }
            }
            Node::Call(func, a) => {
                let da = a.derivative(var);
                let a = a.as_ref().clone();
                let outer = match func {
                    Func::Sin => call(Func::Cos, a),
                    Func::Cos => neg(call(Func::Sin, a)),
                    Func::Tan => div(Node::Const(1.0), pow(call(Func::Cos, a), Node::Const(2.0))),
                    Func::Exp => call(Func::Exp, a),
                    Func::Log => div(Node::Const(1.0), a),
                    Func::Sqrt => div(Node::Const(1.0), mul(Node::Const(2.0), call(Func::Sqrt, a))),
                    // d|a|/da := sign(a), so the derivative at 0 is 0.
                    Func::Abs => call(Func::Sign, a),
                    Func::Sign => Node::Const(0.0),
                };
                mul(outer, da)
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write(&mut s);
        f.write_str(&s)
    }
}

// Simplifying constructors: constant folding plus zero/one elimination.

fn fold(node: Node) -> Node {
    if node.depends_on_any() {
        return node;
    }
    match node.eval(&[], &[], 0.0) {
        Ok(v) => Node::Const(v),
        Err(_) => node,
    }
}

impl Node {
    fn depends_on_any(&self) -> bool {
        let mut any = false;
        self.visit_vars(&mut |_| any = true);
        any
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    if a.is_const(0.0) {
        return b;
    }
    if b.is_const(0.0) {
        return a;
    }
    fold(Node::Bin(BinOp::Add, Box::new(a), Box::new(b)))
}

fn sub(a: Node, b: Node) -> Node {
    if b.is_const(0.0) {
        return a;
    }
    if a.is_const(0.0) {
        return neg(b);
    }
    fold(Node::Bin(BinOp::Sub, Box::new(a), Box::new(b)))
}

fn mul(a: Node, b: Node) -> Node {
    if a.is_const(0.0) || b.is_const(0.0) {
        return Node::Const(0.0);
    }
    if a.is_const(1.0) {
        return b;
    }
    if b.is_const(1.0) {
        return a;
    }
    if a.is_const(-1.0) {
        return neg(b);
    }
    if b.is_const(-1.0) {
        return neg(a);
    }
    fold(Node::Bin(BinOp::Mul, Box::new(a), Box::new(b)))
}

fn div(a: Node, b: Node) -> Node {
    if a.is_const(0.0) {
        return Node::Const(0.0);
    }
    if b.is_const(1.0) {
        return a;
    }
    fold(Node::Bin(BinOp::Div, Box::new(a), Box::new(b)))
}

fn pow(a: Node, b: Node) -> Node {
    if b.is_const(0.0) {
        return Node::Const(1.0);
    }
    if b.is_const(1.0) {
        return a;
    }
    fold(Node::Bin(BinOp::Pow, Box::new(a), Box::new(b)))
}

fn call(f: Func, a: Node) -> Node {
    fold(Node::Call(f, Box::new(a)))
}

/// A parsed expression over `x1..xn`, `u1..up` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    n: usize,
    p: usize,
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl Expression {
    pub fn parse(text: &str, n: usize, p: usize) -> Result<Self, ExprError> {
        let root = Parser::new(text, n, p)?.parse()?;
        Ok(Self { root, n, p })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    pub fn eval(&self, x: &[f64], u: &[f64], t: f64) -> Result<f64, ExprError> {
        if x.len() != self.n {
            return Err(ExprError::Arity {
                what: "state",
                expected: self.n,
                actual: x.len(),
            });
        }
        if u.len() != self.p {
            return Err(ExprError::Arity {
                what: "input",
                expected: self.p,
                actual: u.len(),
            });
        }
        self.root.eval(x, u, t)
    }

    /// Symbolic derivative with respect to `var`.
    ///
    /// # Panics
    /// If `var` is not declared in this expression's dimensions.
    pub fn differentiate(&self, var: Var) -> Expression {
        match var {
            Var::X(i) => assert!(i < self.n, "x{} not declared", i + 1),
            Var::U(i) => assert!(i < self.p, "u{} not declared", i + 1),
            Var::T => {}
        }
        Expression {
            root: self.root.derivative(var),
            n: self.n,
            p: self.p,
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        self.root.depends_on(var)
    }

    pub fn is_zero(&self) -> bool {
        self.root.is_const(0.0)
    }
}

/// Parses `text` with `n` state and `p` input variables.
pub fn parse(text: &str, n: usize, p: usize) -> Result<Expression, ExprError> {
    Expression::parse(text, n, p)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    n: usize,
    p: usize,
}

impl Parser {
    fn new(text: &str, n: usize, p: usize) -> Result<Self, ExprError> {
        let bytes = text.as_bytes();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || c == b'.' {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number '{s}'"),
                })?;
                toks.push((Tok::Num(v), start));
                continue;
            }
            if c.is_ascii_alphabetic() || c == b'_' {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            let tok = match c {
                b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
                b'(' => Tok::LParen,
                b')' => Tok::RParen,
                _ => {
                    let ch = text[start..].chars().next().unwrap_or('?');
                    return Err(ExprError::Syntax {
                        offset: start,
                        message: format!("unexpected character '{ch}'"),
                    });
                }
            };
            toks.push((tok, start));
            i += 1;
        }
        if toks.is_empty() {
            return Err(ExprError::Empty);
        }
        toks.push((Tok::End, text.len()));
        Ok(Self { toks, pos: 0, n, p })
    }

    fn peek(&self) -> &(Tok, usize) {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ExprError {
        let (tok, offset) = self.peek();
        let message = match tok {
            Tok::End => "unexpected end of input".to_string(),
            Tok::Num(v) => format!("unexpected number {v}"),
            Tok::Ident(s) => format!("unexpected identifier '{s}'"),
            Tok::Op(c) => format!("unexpected '{c}'"),
            Tok::LParen => "unexpected '('".to_string(),
            Tok::RParen => "unexpected ')'".to_string(),
        };
        ExprError::Syntax {
            offset: *offset,
            message,
        }
    }

    fn parse(mut self) -> Result<Node, ExprError> {
        let node = self.sum()?;
        if self.peek().0 != Tok::End {
            return Err(self.unexpected());
        }
        Ok(node)
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek().0 == Tok::Op('-') {
            self.bump();
            return Ok(match self.unary()? {
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek().0 == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let (tok, offset) = self.peek().clone();
        match tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(func) = Func::from_name(&name) {
                    if self.peek().0 != Tok::LParen {
                        return Err(ExprError::Syntax {
                            offset: self.peek().1,
                            message: format!("expected '(' after {name}"),
                        });
                    }
                    self.bump();
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                self.variable(&name, offset).map(Node::Var)
            }
            _ => Err(self.unexpected()),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.peek().0 != Tok::RParen {
            let (tok, offset) = self.peek();
            return Err(ExprError::Syntax {
                offset: *offset,
                message: if *tok == Tok::End {
                    "missing ')'".into()
                } else {
                    "expected ')'".into()
                },
            });
        }
        self.bump();
        Ok(())
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Var, ExprError> {
        if name == "t" {
            return Ok(Var::T);
        }
        let (kind, digits) = name.split_at(1);
        let index: Option<usize> = if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            digits.parse().ok()
        } else {
            None
        };
        let (limit, make): (usize, fn(usize) -> Var) = match (kind, index) {
            ("x", Some(_)) => (self.n, Var::X),
            ("u", Some(_)) => (self.p, Var::U),
            _ => {
                return Err(ExprError::UnknownIdentifier {
                    name: name.to_string(),
                    offset,
                })
            }
        };
        match index {
            Some(i) if i >= 1 && i <= limit => Ok(make(i - 1)),
            _ => Err(ExprError::VariableOutOfRange {
                name: name.to_string(),
                offset,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_fd(e: &Expression, x: &[f64], u: &[f64], var: Var, h: f64) -> f64 {
        let (mut xp, mut xm, mut up, mut um) = (x.to_vec(), x.to_vec(), u.to_vec(), u.to_vec());
        let (mut tp, mut tm) = (0.0, 0.0);
        match var {
            Var::X(i) => {
                xp[i] += h;
                xm[i] -= h;
            }
            Var::U(i) => {
                up[i] += h;
                um[i] -= h;
            }
            Var::T => {
                tp = h;
                tm = -h;
            }
        }
        (e.eval(&xp, &up, tp).unwrap() - e.eval(&xm, &um, tm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn bearing_map_parses_to_division() {
        let e = parse("x2/x1", 2, 0).unwrap();
        assert_eq!(
            e.root(),
            &Node::Bin(BinOp::Div, Box::new(Node::Var(Var::X(1))), Box::new(Node::Var(Var::X(0))))
        );
        assert_eq!(e.eval(&[-1.0, 2.0], &[], 0.0).unwrap(), -2.0);
    }

    #[test]
    fn zero_literal() {
        assert_eq!(parse("0", 1, 0).unwrap().root(), &Node::Const(0.0));
    }

    #[test]
    fn syntax_error_offset() {
        match parse("x1 + * 2", 1, 0) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_out_of_range_identifiers() {
        assert!(matches!(parse("y1 + 1", 2, 0), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("x3", 2, 0), Err(ExprError::VariableOutOfRange { .. })));
        assert!(matches!(parse("x0", 2, 0), Err(ExprError::VariableOutOfRange { .. })));
        assert!(matches!(parse("u1", 2, 0), Err(ExprError::VariableOutOfRange { .. })));
        assert!(matches!(parse("   ", 2, 0), Err(ExprError::Empty)));
        assert!(matches!(parse("sin x1", 2, 0), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(x1", 2, 0), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let ev = |s: &str| parse(s, 0, 0).unwrap().eval(&[], &[], 0.0).unwrap();
        assert_eq!(ev("1 + 2 * 3"), 7.0);
        assert_eq!(ev("8 - 3 - 2"), 3.0);
        assert_eq!(ev("8 / 4 / 2"), 1.0);
        assert_eq!(ev("2 * 3 ^ 2"), 18.0);
        assert_eq!(ev("-2 ^ 2"), -4.0);
        assert_eq!(ev("2 ^ -1"), 0.5);
        assert_eq!(ev("(1 + 2) * 3"), 9.0);
        assert_eq!(ev("1.5e2 + 1E-1"), 150.1);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(parse("sin(0)", 0, 0).unwrap().eval(&[], &[], 0.0).unwrap(), 0.0);
        let e = parse("x2/x1", 2, 0).unwrap();
        assert!(matches!(e.eval(&[0.0, 1.0], &[], 0.0), Err(ExprError::Domain { .. })));
        let e = parse("log(x1) + sqrt(x1)", 1, 0).unwrap();
        assert!(matches!(e.eval(&[0.0], &[], 0.0), Err(ExprError::Domain { .. })));
        let e = parse("sqrt(x1)", 1, 0).unwrap();
        assert!(matches!(e.eval(&[-1.0], &[], 0.0), Err(ExprError::Domain { .. })));
        assert!(matches!(e.eval(&[1.0, 2.0], &[], 0.0), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn domain_error_names_subexpression() {
        let e = parse("1 + x2/x1", 2, 0).unwrap();
        match e.eval(&[0.0, 1.0], &[], 0.0) {
            Err(ExprError::Domain { subexpr, .. }) => assert_eq!(subexpr, "x2 / x1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derivative_of_bearing_map() {
        let e = parse("x2/x1", 2, 0).unwrap();
        let d = e.differentiate(Var::X(0));
        let x = [-1.0, 2.0];
        let v = d.eval(&x, &[], 0.0).unwrap();
        let fd = central_fd(&e, &x, &[], Var::X(0), 1e-6);
        assert!((v - (-2.0)).abs() < 1e-12);
        assert!((v - fd).abs() <= 1e-6 * fd.abs());
    }

    #[test]
    fn simple_derivatives() {
        let e = parse("x2", 2, 0).unwrap();
        assert!(e.differentiate(Var::X(0)).is_zero());
        let e = parse("x1*u1", 1, 1).unwrap();
        assert_eq!(e.differentiate(Var::U(0)).eval(&[3.0], &[0.7], 0.0).unwrap(), 3.0);
        let e = parse("abs(x1)", 1, 0).unwrap();
        let d = e.differentiate(Var::X(0));
        assert_eq!(d.eval(&[0.0], &[], 0.0).unwrap(), 0.0);
        assert_eq!(d.eval(&[-2.0], &[], 0.0).unwrap(), -1.0);
        let e = parse("x1^x2", 2, 0).unwrap();
        let d = e.differentiate(Var::X(1));
        let expected = 2f64.powf(3.0) * 2f64.ln();
        assert!((d.eval(&[2.0, 3.0], &[], 0.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn printing_round_trips() {
        for s in [
            "x2/x1",
            "-x1^2",
            "(-x1)^2",
            "x1 - (x2 - 3)",
            "x1 / (x2 * 3)",
            "2^3^2",
            "(2^3)^2",
            "sin(x1) * -x2",
            "u1 * exp(-t)",
            "--x1",
        ] {
            let e = parse(s, 2, 1).unwrap();
            let back = parse(&e.to_string(), 2, 1).unwrap();
            assert_eq!(e, back, "{s} printed as {e}");
        }
        // Constant folding can produce negative literals.
        let d = parse("3 - 5*x1", 1, 0).unwrap().differentiate(Var::X(0));
        assert_eq!(parse(&d.to_string(), 1, 0).unwrap(), d);
    }
}
