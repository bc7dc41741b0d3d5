//! Scalar expression language used for metric, frame and curve components.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so `-x^2`
//! is `-(x^2)` and `2^3^2` is `2^(3^2)`.

use std::fmt;
use std::ops;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Cosh,
    Sinh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "cosh" => Func::Cosh,
            "sinh" => Func::Sinh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Cosh => "cosh",
            Func::Sinh => "sinh",
        }
    }

    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Cosh => v.cosh(),
            Func::Sinh => v.sinh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const PREC_NEG: u8 = 3;
const PREC_ATOM: u8 = 5;

/// Expression tree. Variables are indices into the evaluation slice.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    pub fn zero() -> Self {
        Expr::Num(0.0)
    }

    pub fn one() -> Self {
        Expr::Num(1.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn call(func: Func, arg: Expr) -> Self {
        match arg {
            Expr::Num(v) => Expr::Num(func.apply(v)),
            a => Expr::Call(func, Box::new(a)),
        }
    }

    pub fn pow(self, exponent: Expr) -> Self {
        match (&self, &exponent) {
            (_, e) if e.is_zero() => Expr::one(),
            (_, e) if e.is_one() => self,
            (Expr::Num(a), Expr::Num(b)) => Expr::Num(pow_fast(*a, *b)),
            _ => Expr::Bin(BinOp::Pow, Box::new(self), Box::new(exponent)),
        }
    }

    pub fn powi(self, k: i32) -> Self {
        self.pow(Expr::Num(f64::from(k)))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Bin(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, None) => x,
                (None, y) => y,
            },
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Bin(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Evaluate at `vars`. Indices beyond `vars.len()` panic; callers
    /// validate arity at parse/load time.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Call(f, a) => f.apply(a.eval(vars)),
            Expr::Bin(op, a, b) => {
                let x = a.eval(vars);
                match op {
                    BinOp::Add => x + b.eval(vars),
                    BinOp::Sub => x - b.eval(vars),
                    BinOp::Mul => x * b.eval(vars),
                    BinOp::Div => x / b.eval(vars),
                    BinOp::Pow => match **b {
                        Expr::Num(k) => pow_fast(x, k),
                        _ => x.powf(b.eval(vars)),
                    },
                }
            }
        }
    }

    /// Evaluate and reject NaN / infinite results.
    pub fn eval_checked(&self, vars: &[f64]) -> Result<f64> {
        let v = self.eval(vars);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("{v} at {vars:?}")))
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => -a.diff(var),
            Expr::Call(f, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                let a = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, a),
                    Func::Cos => -Expr::call(Func::Sin, a),
                    Func::Tan => Expr::one() + Expr::call(Func::Tan, a).powi(2),
                    Func::Exp => Expr::call(Func::Exp, a),
                    Func::Log => return da / a,
                    Func::Sqrt => return da / (Expr::num(2.0) * Expr::call(Func::Sqrt, a)),
                    Func::Cosh => Expr::call(Func::Sinh, a),
                    Func::Sinh => Expr::call(Func::Cosh, a),
                };
                outer * da
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (&**a, &**b);
                match op {
                    BinOp::Add => a.diff(var) + b.diff(var),
                    BinOp::Sub => a.diff(var) - b.diff(var),
                    BinOp::Mul => a.diff(var) * b.clone() + a.clone() * b.diff(var),
                    BinOp::Div => {
                        (a.diff(var) * b.clone() - a.clone() * b.diff(var)) / b.clone().powi(2)
                    }
                    BinOp::Pow => {
                        if !b.depends_on(var) {
                            let da = a.diff(var);
                            if da.is_zero() {
                                return Expr::zero();
                            }
                            let lowered = match b.as_constant() {
                                Some(k) => Expr::Num(k - 1.0),
                                None => b.clone() - Expr::one(),
                            };
                            b.clone() * a.clone().pow(lowered) * da
                        } else {
                            let whole = a.clone().pow(b.clone());
                            whole
                                * (b.diff(var) * Expr::call(Func::Log, a.clone())
                                    + b.clone() * a.diff(var) / a.clone())
                        }
                    }
                }
            }
        }
    }

    /// Rename variables through `map` (old index -> new index).
    pub fn remap_vars(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(i) => Expr::Var(map(*i)),
            Expr::Neg(a) => Expr::Neg(Box::new(a.remap_vars(map))),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.remap_vars(map))),
            Expr::Bin(op, a, b) => {
                Expr::Bin(*op, Box::new(a.remap_vars(map)), Box::new(b.remap_vars(map)))
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => PREC_NEG,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(..) => PREC_ATOM,
            Expr::Neg(_) => PREC_NEG,
            Expr::Bin(op, ..) => op.precedence(),
        }
    }

    /// Printable view with the given variable names.
    pub fn display<'a, S: AsRef<str>>(&'a self, names: &'a [S]) -> ExprDisplay<'a, S> {
        ExprDisplay { expr: self, names }
    }

    fn write<S: AsRef<str>>(&self, f: &mut fmt::Formatter<'_>, names: &[S]) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(i) => match names.get(*i) {
                Some(n) => f.write_str(n.as_ref()),
                None => write!(f, "v{i}"),
            },
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.write_child(f, names, a.precedence() < PREC_NEG)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names)?;
                f.write_str(")")
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                let (left_parens, right_parens) = if *op == BinOp::Pow {
                    (a.precedence() <= p, b.precedence() < PREC_NEG)
                } else {
                    (a.precedence() < p, b.precedence() <= p)
                };
                a.write_child(f, names, left_parens)?;
                if *op == BinOp::Pow {
                    f.write_str("^")?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                b.write_child(f, names, right_parens)
            }
        }
    }

    fn write_child<S: AsRef<str>>(
        &self,
        f: &mut fmt::Formatter<'_>,
        names: &[S],
        parens: bool,
    ) -> fmt::Result {
        if parens {
            f.write_str("(")?;
            self.write(f, names)?;
            f.write_str(")")
        } else {
            self.write(f, names)
        }
    }
}

#[inline]
fn pow_fast(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

pub struct ExprDisplay<'a, S> {
    expr: &'a Expr,
    names: &'a [S],
}

impl<S: AsRef<str>> fmt::Display for ExprDisplay<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.write(f, self.names)
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => b,
            (Expr::Num(a), Expr::Num(b)) => Expr::Num(a + b),
            (a, b) => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
        }
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => -b,
            (Expr::Num(a), Expr::Num(b)) => Expr::Num(a - b),
            (a, b) => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
        }
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (a, b) if a.is_zero() || b.is_zero() => Expr::zero(),
            (a, b) if a.is_one() => b,
            (a, b) if b.is_one() => a,
            (Expr::Num(a), Expr::Num(b)) => Expr::Num(a * b),
            (a, b) => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
        }
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self, rhs) {
            (a, _) if a.is_zero() => Expr::zero(),
            (a, b) if b.is_one() => a,
            (Expr::Num(a), Expr::Num(b)) => Expr::Num(a / b),
            (a, b) => Expr::Bin(BinOp::Div, Box::new(a), Box::new(b)),
        }
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Num(v) if v == 0.0 => Expr::zero(),
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(a) => *a,
            a => Expr::Neg(Box::new(a)),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, at) = lx.next()?;
            let done = tok == Tok::End;
            out.push((tok, at));
            if done {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok((Tok::Op(c as char), start));
        }
        Err(Error::Syntax {
            offset: start,
            message: format!("unexpected character `{}`", self.src[start..].chars().next().unwrap_or('?')),
        })
    }
}

struct Parser<'a, S> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    vars: &'a [S],
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, what: &str) -> Error {
        let found = match self.peek() {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::End => "end of input".to_string(),
        };
        Error::Syntax { offset: self.offset(), message: format!("expected {what}, found {found}") }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Op('(') => {
                self.bump();
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(i) = self.vars.iter().position(|v| v.as_ref() == name) {
                    return Ok(Expr::Var(i));
                }
                if let Some(func) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                Err(Error::UnknownIdentifier { name, offset })
            }
            _ => Err(self.unexpected("a number, identifier or `(`")),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if *self.peek() == Tok::Op(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{c}`")))
        }
    }
}

/// Parse `text` with variables resolved against `vars` (index = position).
pub fn parse_expr<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Expr> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, at: 0, vars };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const XYZ: [&str; 3] = ["x", "y", "z"];

    fn eval(text: &str, at: &[f64]) -> f64 {
        parse_expr(text, &XYZ).unwrap().eval(at)
    }

    #[test]
    fn evaluates_simple_expressions() {
        assert_eq!(eval("1 + y^2", &[0.0, 2.0, 0.0]), 5.0);
        assert_eq!(eval("sin(x)*cos(y)", &[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(eval("2^3^2", &[0.0; 3]), 512.0);
        assert_eq!(eval("-x^2", &[3.0, 0.0, 0.0]), -9.0);
        assert_eq!(eval("8 / 4 / 2", &[0.0; 3]), 1.0);
        assert_eq!(eval("10 - 4 - 3", &[0.0; 3]), 3.0);
        assert_eq!(eval("2^-1", &[0.0; 3]), 0.5);
        assert!((eval("2*pi", &[0.0; 3]) - std::f64::consts::TAU).abs() < 1e-15);
        assert_eq!(eval("1.5e2 + 2E-1", &[0.0; 3]), 150.2);
    }

    #[test]
    fn syntax_error_reports_offset() {
        match parse_expr("1 + * y", &XYZ) {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(matches!(parse_expr("(x", &XYZ), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("x y", &XYZ), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expr("x # 2", &XYZ), Err(Error::Syntax { offset: 2, .. })));
    }

    #[test]
    fn unknown_identifier() {
        match parse_expr("x + w", &XYZ) {
            Err(Error::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "w");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn printing_respects_precedence() {
        let cases = [
            ("-x^2", "-x^2"),
            ("(-x)^2", "(-x)^2"),
            ("(x^2)^3", "(x^2)^3"),
            ("x^2^3", "x^2^3"),
            ("x - (y - z)", "x - (y - z)"),
            ("(x - y) - z", "x - y - z"),
            ("x / (y * z)", "x / (y * z)"),
            ("x^-y", "x^-y"),
            ("--x", "--x"),
        ];
        for (src, want) in cases {
            let e = parse_expr(src, &XYZ).unwrap();
            assert_eq!(e.display(&XYZ).to_string(), want, "{src}");
        }
    }

    #[test]
    fn symbolic_derivatives_match_central_differences() {
        let srcs = [
            "x^3 * y - sin(x*z)",
            "exp(-x^2) / (1 + y^2)",
            "sqrt(1 + x^2 + y^2) * log(2 + z^2)",
            "tan(0.3 * x) + cosh(y) * sinh(z)",
            "(1 + x^2)^(0.5 + y^2)",
        ];
        let at = [0.4, -0.7, 0.9];
        for src in srcs {
            let e = parse_expr(src, &XYZ).unwrap();
            for var in 0..3 {
                let d = e.diff(var).eval(&at);
                let h = 1e-5;
                let mut p = at;
                let mut m = at;
                p[var] += h;
                m[var] -= h;
                let fd = (e.eval(&p) - e.eval(&m)) / (2.0 * h);
                assert!((d - fd).abs() < 1e-8, "{src} d/d{var}: {d} vs {fd}");
            }
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(|v| Expr::Num((v * 1000.0).round() / 1000.0)),
            (0usize..3).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                ])
                .prop_map(|(a, b, op)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (inner.clone(), 0i32..4).prop_map(|(a, k)| Expr::Bin(
                    BinOp::Pow,
                    Box::new(a),
                    Box::new(Expr::Num(f64::from(k)))
                )),
                inner.prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
            ]
        })
    }

    fn close(a: f64, b: f64) -> bool {
        if a.is_nan() && b.is_nan() {
            return true;
        }
        if a.is_infinite() || b.is_infinite() {
            return a == b;
        }
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn print_parse_round_trip(e in arb_expr(), x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let printed = e.display(&XYZ).to_string();
            let reparsed = parse_expr(&printed, &XYZ).unwrap();
            let at = [x, y, z];
            prop_assert!(close(reparsed.eval(&at), e.eval(&at)), "{printed}");
            let twice = reparsed.display(&XYZ).to_string();
            prop_assert_eq!(&twice, &printed);
            let again = parse_expr(&twice, &XYZ).unwrap();
            prop_assert!(close(again.eval(&at), parse_expr(&printed, &XYZ).unwrap().eval(&at)));
        }
    }
}
