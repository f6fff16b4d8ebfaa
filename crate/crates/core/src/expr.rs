//! Small arithmetic-expression language over the coordinates
//! `x1, y1, x2, y2`, used to script the coefficient `a` of the `J_a` family
//! and analytic scalar fields.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numeric literals, the
//! constants `pi` and `e`, and the functions `exp log sqrt abs sin cos`
//! (one argument) and `max min` (two arguments).

use std::fmt;

use crate::error::AcxError;
use crate::jet::Jet;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sin,
    Cos,
    Max,
    Min,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "max" => Func::Max,
            "min" => Func::Min,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Max => "max",
            Func::Min => "min",
        }
    }
}

pub const VAR_NAMES: [&str; 4] = ["x1", "y1", "x2", "y2"];

/// Values an expression can be evaluated over.
pub trait ExprValue: Copy {
    fn lit(x: f64) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, e: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn max(self, o: Self) -> Self;
    fn min(self, o: Self) -> Self;
}

impl<R: Real> ExprValue for R {
    fn lit(x: f64) -> Self {
        R::lit(x)
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn powi(self, n: i32) -> Self {
        num_traits::Float::powi(self, n)
    }
    fn powf(self, e: f64) -> Self {
        num_traits::Float::powf(self, R::lit(e))
    }
    fn exp(self) -> Self {
        num_traits::Float::exp(self)
    }
    fn ln(self) -> Self {
        num_traits::Float::ln(self)
    }
    fn sqrt(self) -> Self {
        num_traits::Float::sqrt(self)
    }
    fn abs(self) -> Self {
        num_traits::Float::abs(self)
    }
    fn sin(self) -> Self {
        num_traits::Float::sin(self)
    }
    fn cos(self) -> Self {
        num_traits::Float::cos(self)
    }
    fn max(self, o: Self) -> Self {
        num_traits::Float::max(self, o)
    }
    fn min(self, o: Self) -> Self {
        num_traits::Float::min(self, o)
    }
}

impl<R: Real> ExprValue for Jet<R> {
    fn lit(x: f64) -> Self {
        Jet::constant(R::lit(x))
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn powi(self, n: i32) -> Self {
        Jet::powi(&self, n)
    }
    fn powf(self, e: f64) -> Self {
        Jet::powf(&self, R::lit(e))
    }
    fn exp(self) -> Self {
        Jet::exp(&self)
    }
    fn ln(self) -> Self {
        Jet::ln(&self)
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(&self)
    }
    fn abs(self) -> Self {
        Jet::abs(&self)
    }
    fn sin(self) -> Self {
        Jet::sin(&self)
    }
    fn cos(self) -> Self {
        Jet::cos(&self)
    }
    fn max(self, o: Self) -> Self {
        Jet::max(self, o)
    }
    fn min(self, o: Self) -> Self {
        Jet::min(self, o)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, AcxError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, src };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }

    pub fn eval<V: ExprValue>(&self, x: &[V; 4]) -> V {
        match self {
            Expr::Num(c) => V::lit(*c),
            Expr::Var(k) => x[*k],
            Expr::Neg(a) => a.eval(x).neg(),
            Expr::Bin(op, a, b) => {
                if *op == BinOp::Pow && !b.depends_on().contains(&true) {
                    let c: f64 = b.eval(&[0.0; 4]);
                    let base = a.eval(x);
                    return if c.fract() == 0.0 && c.abs() < 64.0 {
                        base.powi(c as i32)
                    } else {
                        base.powf(c)
                    };
                }
                let (u, v) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => u.add(v),
                    BinOp::Sub => u.sub(v),
                    BinOp::Mul => u.mul(v),
                    BinOp::Div => u.div(v),
                    BinOp::Pow => v.mul(u.ln()).exp(),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Max => a.max(args[1].eval(x)),
                    Func::Min => a.min(args[1].eval(x)),
                }
            }
        }
    }

    /// Variables the expression actually reads.
    pub fn depends_on(&self) -> [bool; 4] {
        let mut out = [false; 4];
        self.visit_vars(&mut |k| out[k] = true);
        out
    }

    fn visit_vars(&self, f: &mut impl FnMut(usize)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(k) => f(*k),
            Expr::Neg(a) => a.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_vars(f)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c}"),
            Expr::Var(k) => write!(f, "{}", VAR_NAMES[*k]),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a}{s}{b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, AcxError> {
    let chars: Vec<char> = src.chars().collect();
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
            // exponent part
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
                .map_err(|_| AcxError::Parse(format!("bad number '{s}' in '{src}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(AcxError::Parse(format!("unexpected character '{c}' in '{src}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn err(&self, what: &str) -> AcxError {
        AcxError::Parse(format!("{what} at token {} in '{}'", self.pos, self.src))
    }

    fn peek_op(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Tok::Op(o)) if *o == c)
    }

    fn expect_op(&mut self, c: char) -> Result<(), AcxError> {
        if self.peek_op(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr, AcxError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.peek_op('+') {
                BinOp::Add
            } else if self.peek_op('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, AcxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.peek_op('*') {
                BinOp::Mul
            } else if self.peek_op('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, AcxError> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    // right-associative, binds tighter than unary minus: -x^2 = -(x^2)
    fn power(&mut self) -> Result<Expr, AcxError> {
        let base = self.atom()?;
        if self.peek_op('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, AcxError> {
        let tok = self.tokens.get(self.pos).cloned();
        match tok {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(k) = VAR_NAMES.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(k));
                }
                match name.as_str() {
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => return Ok(Expr::Num(std::f64::consts::E)),
                    _ => {}
                }
                let func = Func::from_name(&name)
                    .ok_or_else(|| AcxError::Parse(format!("unknown identifier '{name}' in '{}'", self.src)))?;
                self.expect_op('(')?;
                let mut args = vec![self.expr()?];
                while self.peek_op(',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect_op(')')?;
                if args.len() != func.arity() {
                    return Err(self.err(&format!("{} takes {} argument(s)", func.name(), func.arity())));
                }
                Ok(Expr::Call(func, args))
            }
            _ => Err(self.err("expected a value")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::coordinate_jets;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("-x1^2 + 2*y1*x2 - exp(0) + max(y2, 1)/2").unwrap();
        let v: f64 = e.eval(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!(v, -9.0 + 4.0 - 1.0 + 2.0);
        let p = Expr::parse("2^3^2").unwrap();
        assert_eq!(p.eval(&[0.0f64; 4]), 512.0);
        let s = Expr::parse("1.5e-1*pi").unwrap();
        assert!((s.eval(&[0.0f64; 4]) - 0.15 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn jet_and_plain_evaluation_agree() {
        let e = Expr::parse("x1*x2 + sqrt(1 + y1^2) * cos(y2) - log(2 + x2)").unwrap();
        let p = [0.3, -0.2, 0.5, 0.9];
        let plain: f64 = e.eval(&p);
        let jet = e.eval(&coordinate_jets(&p, 2));
        assert!((plain - jet.value()).abs() < 1e-14);
        assert!((jet.grad(0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("x3 + 1").is_err());
        assert!(Expr::parse("max(x1)").is_err());
        assert!(Expr::parse("(x1").is_err());
        assert!(Expr::parse("x1 $ 2").is_err());
    }

    #[test]
    fn dependency_scan() {
        let e = Expr::parse("x1*y2 + 3").unwrap();
        assert_eq!(e.depends_on(), [true, false, false, true]);
    }
}
