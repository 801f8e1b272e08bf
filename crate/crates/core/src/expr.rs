//! A small closed-form expression grammar for coefficient fields.
//!
//! Coefficients `a`, `lambda0` and the boundary datum `g` are written as text so
//! that problem files stay self-contained:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | '|x|' | 'r' | 'x1' | 'x2' | '(' expr ')'
//! ```
//!
//! `|x|` and `r` both denote the Euclidean norm of the evaluation point. Exponents
//! must be constant so that `|x|^2.5` is a plain power law.

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Radius,
    Coord(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let mut parser = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let expr = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.src.len() {
            return Err(parser.err("unexpected trailing input"));
        }
        Ok(expr)
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    /// `coef * |x|^alpha`
    pub fn power_law(coef: f64, alpha: f64) -> Expr {
        Expr::Mul(
            Box::new(Expr::Const(coef)),
            Box::new(Expr::Pow(Box::new(Expr::Radius), alpha)),
        )
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Radius => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Expr::Coord(i) => x.get(*i).copied().unwrap_or(0.0),
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(base, e) => crate::model::pow(base.eval(x), *e),
        }
    }

    /// Value of the expression when it does not depend on the point.
    pub fn constant_value(&self) -> Option<f64> {
        if self.depends_on_point() {
            None
        } else {
            Some(self.eval(&[]))
        }
    }

    fn depends_on_point(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Radius | Expr::Coord(_) => true,
            Expr::Neg(e) | Expr::Pow(e, _) => e.depends_on_point(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_point() || b.depends_on_point()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(c) if *c < 0.0 => 3,
            _ => 5,
        }
    }
}

fn fmt_num(v: f64) -> String {
    // Debug formatting of f64 is the shortest round-trip representation.
    format!("{v:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |e: &Expr, min: u8| -> String {
            if e.precedence() < min {
                format!("({e})")
            } else {
                e.to_string()
            }
        };
        match self {
            Expr::Const(c) => write!(f, "{}", fmt_num(*c)),
            Expr::Radius => write!(f, "|x|"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "-{}", wrap(e, 4)),
            Expr::Add(a, b) => write!(f, "{} + {}", wrap(a, 1), wrap(b, 2)),
            Expr::Sub(a, b) => write!(f, "{} - {}", wrap(a, 1), wrap(b, 2)),
            Expr::Mul(a, b) => write!(f, "{} * {}", wrap(a, 2), wrap(b, 3)),
            Expr::Div(a, b) => write!(f, "{} / {}", wrap(a, 2), wrap(b, 3)),
            Expr::Pow(b, e) => {
                let exp = if *e < 0.0 {
                    format!("({})", fmt_num(*e))
                } else {
                    fmt_num(*e)
                };
                write!(f, "{}^{}", wrap(b, 5), exp)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let at = self.pos;
            let exponent = self.unary()?;
            let value = exponent.constant_value().ok_or(Error::Parse {
                offset: at,
                message: "exponent must be a constant".into(),
            })?;
            return Ok(Expr::Pow(Box::new(base), value));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(b'|') => {
                let rest = &self.src[self.pos..];
                if rest.starts_with(b"|x|") {
                    self.pos += 3;
                    Ok(Expr::Radius)
                } else {
                    Err(self.err("expected '|x|'"))
                }
            }
            Some(b'r') => {
                self.pos += 1;
                Ok(Expr::Radius)
            }
            Some(b'x') => {
                self.pos += 1;
                match self.src.get(self.pos) {
                    Some(b'1') => {
                        self.pos += 1;
                        Ok(Expr::Coord(0))
                    }
                    Some(b'2') => {
                        self.pos += 1;
                        Ok(Expr::Coord(1))
                    }
                    _ => Err(self.err("expected x1 or x2")),
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src;
        let mut end = start;
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
        let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| self.err("bad number"))?;
        let value: f64 = text.parse().map_err(|_| self.err("bad number"))?;
        self.pos = end;
        Ok(Expr::Const(value))
    }
}

/// A coefficient field `x -> factor * expr(center + scale * x)`.
///
/// The affine wrapper is what the rescaling maps produce; plain coefficients
/// have `factor = 1`, `center = 0`, `scale = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub expr: Expr,
    pub factor: f64,
    pub center: [f64; 2],
    pub scale: f64,
}

impl Coefficient {
    pub fn new(expr: Expr) -> Self {
        Self {
            expr,
            factor: 1.0,
            center: [0.0; 2],
            scale: 1.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Expr::Const(value))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::new(Expr::parse(text)?))
    }

    fn is_plain(&self) -> bool {
        self.factor == 1.0 && self.center == [0.0; 2] && self.scale == 1.0
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.is_plain() {
            return self.expr.eval(x);
        }
        let mut y = [0.0; 2];
        for (k, xi) in x.iter().enumerate().take(2) {
            y[k] = self.center[k] + self.scale * xi;
        }
        self.factor * self.expr.eval(&y[..x.len().min(2)])
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.expr.constant_value().map(|c| self.factor * c)
    }

    /// `x -> k * self(c + s x)`, composed with the existing affine wrapper.
    pub fn rescaled(&self, k: f64, c: [f64; 2], s: f64) -> Self {
        Self {
            expr: self.expr.clone(),
            factor: self.factor * k,
            center: [
                self.center[0] + self.scale * c[0],
                self.center[1] + self.scale * c[1],
            ],
            scale: self.scale * s,
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_plain() {
            write!(f, "{}", self.expr)
        } else {
            write!(
                f,
                "{} * [{}]({:?} + {} x)",
                self.factor, self.expr, self.center, self.scale
            )
        }
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_plain() {
            serializer.serialize_str(&self.expr.to_string())
        } else {
            let mut map = serializer.serialize_map(Some(4))?;
            map.serialize_entry("expr", &self.expr.to_string())?;
            map.serialize_entry("factor", &self.factor)?;
            map.serialize_entry("center", &self.center)?;
            map.serialize_entry("scale", &self.scale)?;
            map.end()
        }
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct CoefVisitor;

        impl<'de> Visitor<'de> for CoefVisitor {
            type Value = Coefficient;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an expression string, a number, or a table with `expr`")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Coefficient, E> {
                Coefficient::parse(v).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Coefficient, E> {
                Ok(Coefficient::constant(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Coefficient, E> {
                Ok(Coefficient::constant(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Coefficient, E> {
                Ok(Coefficient::constant(v as f64))
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Coefficient, A::Error> {
                let mut expr = None;
                let mut coef = Coefficient::constant(0.0);
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "expr" => {
                            let text: String = map.next_value()?;
                            expr = Some(Expr::parse(&text).map_err(de::Error::custom)?);
                        }
                        "factor" => coef.factor = map.next_value()?,
                        "center" => coef.center = map.next_value()?,
                        "scale" => coef.scale = map.next_value()?,
                        other => return Err(de::Error::unknown_field(other, &["expr", "factor", "center", "scale"])),
                    }
                }
                coef.expr = expr.ok_or_else(|| de::Error::missing_field("expr"))?;
                Ok(coef)
            }
        }

        deserializer.deserialize_any(CoefVisitor)
    }
}
