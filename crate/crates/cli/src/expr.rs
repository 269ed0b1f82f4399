//! Small arithmetic language for scenario files.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '[' int ']' | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! Names are `t`, `pi`, indexed `q[i]`, `v[i]`, `a[i]`, or parameters
//! declared by the scenario. Functions: `sin cos exp sqrt`.

use std::collections::BTreeMap;
use std::fmt;

use nonholonomic::kernel::{constant, Args, DualNum, HD};

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// Byte offset into the expression.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.offset + 1, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Q,
    V,
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    Indexed(Var, usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(f64),
    Ident,
    Op(char),
    End,
}

struct Lexer<'s> {
    src: &'s str,
    pos: usize,
    tok: Tok,
    start: usize,
    end: usize,
}

impl<'s> Lexer<'s> {
    fn new(src: &'s str) -> Result<Self, ParseError> {
        let mut l = Lexer { src, pos: 0, tok: Tok::End, start: 0, end: 0 };
        l.bump()?;
        Ok(l)
    }

    fn text(&self) -> &'s str {
        &self.src[self.start..self.end]
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset: self.start, message: message.into() })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.start = self.pos;
        if self.pos == bytes.len() {
            self.tok = Tok::End;
            self.end = self.pos;
            return Ok(());
        }
        let c = bytes[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let mut p = self.pos;
            while p < bytes.len() && (bytes[p].is_ascii_digit() || bytes[p] == b'.') {
                p += 1;
            }
            if p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
                let mut r = p + 1;
                if r < bytes.len() && (bytes[r] == b'+' || bytes[r] == b'-') {
                    r += 1;
                }
                if r < bytes.len() && bytes[r].is_ascii_digit() {
                    while r < bytes.len() && bytes[r].is_ascii_digit() {
                        r += 1;
                    }
                    p = r;
                }
            }
            self.end = p;
            self.pos = p;
            match self.text().parse::<f64>() {
                Ok(x) => self.tok = Tok::Num(x),
                Err(_) => return self.error(format!("malformed number '{}'", self.text())),
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let mut p = self.pos;
            while p < bytes.len() && (bytes[p].is_ascii_alphanumeric() || bytes[p] == b'_') {
                p += 1;
            }
            self.end = p;
            self.pos = p;
            self.tok = Tok::Ident;
        } else if b"+-*/^()[],".contains(&c) {
            self.end = self.pos + 1;
            self.pos += 1;
            self.tok = Tok::Op(c as char);
        } else {
            let ch = self.src[self.pos..].chars().next().unwrap_or('?');
            self.end = self.pos + ch.len_utf8();
            return self.error(format!("unexpected character '{ch}'"));
        }
        Ok(())
    }

    fn expect(&mut self, op: char) -> Result<(), ParseError> {
        if self.tok != Tok::Op(op) {
            return self.error(format!("expected '{op}'"));
        }
        self.bump()
    }
}

/// Named constants available to an expression.
pub type Params = BTreeMap<String, f64>;

struct Parser<'s, 'p> {
    lex: Lexer<'s>,
    params: &'p Params,
}

impl Parser<'_, '_> {
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.lex.tok {
                Tok::Op('+') => {
                    self.lex.bump()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Op('-') => {
                    self.lex.bump()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.lex.tok {
                Tok::Op('*') => {
                    self.lex.bump()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Op('/') => {
                    self.lex.bump()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.lex.tok == Tok::Op('-') {
            self.lex.bump()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.lex.tok == Tok::Op('+') {
            self.lex.bump()?;
            return self.unary();
        }
        let base = self.atom()?;
        if self.lex.tok == Tok::Op('^') {
            self.lex.bump()?;
            // right associative, and binds tighter than a leading minus on
            // the base: -x^2 = -(x^2)
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.lex.tok {
            Tok::Num(x) => {
                self.lex.bump()?;
                Ok(Expr::Num(x))
            }
            Tok::Op('(') => {
                self.lex.bump()?;
                let e = self.expr()?;
                self.lex.expect(')')?;
                Ok(e)
            }
            Tok::Ident => {
                let name = self.lex.text();
                let at = self.lex.start;
                self.lex.bump()?;
                let func = match name {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    self.lex.expect('(')?;
                    let arg = self.expr()?;
                    self.lex.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let var = match name {
                    "q" => Some(Var::Q),
                    "v" => Some(Var::V),
                    "a" => Some(Var::A),
                    _ => None,
                };
                if let Some(var) = var {
                    self.lex.expect('[')?;
                    let index = match self.lex.tok {
                        Tok::Num(x) if x >= 0.0 && x.fract() == 0.0 && x < 1e6 => x as usize,
                        _ => return self.lex.error(format!("index of {name}[…] must be a non-negative integer")),
                    };
                    self.lex.bump()?;
                    self.lex.expect(']')?;
                    return Ok(Expr::Indexed(var, index));
                }
                match name {
                    "t" => Ok(Expr::Time),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    _ => match self.params.get(name) {
                        Some(&x) => Ok(Expr::Num(x)),
                        None => Err(ParseError { offset: at, message: format!("unknown name '{name}'") }),
                    },
                }
            }
            Tok::End => self.lex.error("unexpected end of expression"),
            Tok::Op(c) => self.lex.error(format!("unexpected '{c}'")),
        }
    }
}

pub fn parse(src: &str, params: &Params) -> Result<Expr, ParseError> {
    let mut p = Parser { lex: Lexer::new(src)?, params };
    let e = p.expr()?;
    if p.lex.tok != Tok::End {
        return p.lex.error(format!("unexpected '{}' after expression", p.lex.text()));
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, x: &Args<'_>) -> HD {
        match self {
            Expr::Num(c) => constant(*c),
            Expr::Time => x.t,
            Expr::Indexed(var, i) => {
                let slot = match var {
                    Var::Q => x.q,
                    Var::V => x.v,
                    Var::A => x.a,
                };
                // Acceleration slots are empty for fields that ignore them.
                slot.get(*i).copied().unwrap_or_else(|| constant(0.0))
            }
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(l, r) => l.eval(x) + r.eval(x),
            Expr::Sub(l, r) => l.eval(x) - r.eval(x),
            Expr::Mul(l, r) => l.eval(x) * r.eval(x),
            Expr::Div(l, r) => l.eval(x) / r.eval(x),
            Expr::Pow(base, exp) => {
                let b = base.eval(x);
                match exp.constant_value() {
                    Some(k) if k.fract() == 0.0 && k.abs() <= 64.0 => b.powi(k as i32),
                    Some(k) => b.powf(k),
                    None => b.powd(exp.eval(x)),
                }
            }
            Expr::Call(f, e) => {
                let y = e.eval(x);
                match f {
                    Func::Sin => y.sin(),
                    Func::Cos => y.cos(),
                    Func::Exp => y.exp(),
                    Func::Sqrt => y.sqrt(),
                }
            }
        }
    }

    /// Value when the expression has no free variables.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Num(c) => Some(*c),
            Expr::Time | Expr::Indexed(..) => None,
            Expr::Neg(e) => e.constant_value().map(|c| -c),
            Expr::Add(l, r) => Some(l.constant_value()? + r.constant_value()?),
            Expr::Sub(l, r) => Some(l.constant_value()? - r.constant_value()?),
            Expr::Mul(l, r) => Some(l.constant_value()? * r.constant_value()?),
            Expr::Div(l, r) => Some(l.constant_value()? / r.constant_value()?),
            Expr::Pow(b, e) => Some(b.constant_value()?.powf(e.constant_value()?)),
            Expr::Call(f, e) => {
                let y = e.constant_value()?;
                Some(match f {
                    Func::Sin => y.sin(),
                    Func::Cos => y.cos(),
                    Func::Exp => y.exp(),
                    Func::Sqrt => y.sqrt(),
                })
            }
        }
    }

    /// Largest index used with `var`, if any.
    pub fn max_index(&self, var: Var) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Time => None,
            Expr::Indexed(v, i) => (*v == var).then_some(*i),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_index(var),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) | Expr::Pow(l, r) => {
                match (l.max_index(var), r.max_index(var)) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_at(src: &str, q: &[f64], v: &[f64], t: f64) -> f64 {
        let e = parse(src, &Params::new()).unwrap();
        let q: Vec<HD> = q.iter().map(|&x| constant(x)).collect();
        let v: Vec<HD> = v.iter().map(|&x| constant(x)).collect();
        e.eval(&Args { q: &q, v: &v, a: &[], t: constant(t) }).re
    }

    #[test]
    fn precedence() {
        assert_eq!(eval_at("1 + 2 * 3", &[], &[], 0.0), 7.0);
        assert_eq!(eval_at("(1 + 2) * 3", &[], &[], 0.0), 9.0);
        assert_eq!(eval_at("2 ^ 3 ^ 2", &[], &[], 0.0), 512.0);
        assert_eq!(eval_at("-2 ^ 2", &[], &[], 0.0), -4.0);
        assert_eq!(eval_at("8 / 4 / 2", &[], &[], 0.0), 1.0);
        assert_eq!(eval_at("1 - 2 - 3", &[], &[], 0.0), -4.0);
        assert_eq!(eval_at("2e-1 * 10", &[], &[], 0.0), 2.0);
    }

    #[test]
    fn variables_and_functions() {
        let x = eval_at("0.5*(v[0]^2 + v[1]^2) - q[0]^2 + sin(t) + sqrt(4) + exp(0) + cos(pi)", &[3.0], &[1.0, 2.0], 0.0);
        assert!((x - (2.5 - 9.0 + 0.0 + 2.0 + 1.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn params_are_substituted() {
        let mut p = Params::new();
        p.insert("k".into(), 2.5);
        let e = parse("k * q[0]", &p).unwrap();
        assert_eq!(e, Expr::Mul(Box::new(Expr::Num(2.5)), Box::new(Expr::Indexed(Var::Q, 0))));
    }

    #[test]
    fn derivatives_flow_through() {
        let e = parse("q[0]^3 * v[0]", &Params::new()).unwrap();
        let q = [HD::new(2.0, 1.0, 0.0, 0.0)];
        let v = [HD::new(5.0, 0.0, 1.0, 0.0)];
        let y = e.eval(&Args { q: &q, v: &v, a: &[], t: constant(0.0) });
        assert_eq!(y.re, 40.0);
        assert_eq!(y.eps1, 60.0);
        assert_eq!(y.eps2, 8.0);
        assert_eq!(y.eps1eps2, 12.0);
    }

    #[test]
    fn errors_point_at_the_problem() {
        let p = Params::new();
        assert_eq!(parse("1 + ", &p).unwrap_err().offset, 4);
        assert_eq!(parse("q[0] + foo", &p).unwrap_err().offset, 7);
        assert!(parse("q[-1]", &p).unwrap_err().message.contains("index"));
        assert!(parse("sin q[0]", &p).is_err());
        assert!(parse("(1 + 2", &p).is_err());
        assert!(parse("1 2", &p).is_err());
        assert!(parse("q[0] $ 2", &p).unwrap_err().message.contains('$'));
    }

    #[test]
    fn index_scan() {
        let e = parse("q[3] * v[1] + a[0] + q[1]", &Params::new()).unwrap();
        assert_eq!(e.max_index(Var::Q), Some(3));
        assert_eq!(e.max_index(Var::V), Some(1));
        assert_eq!(e.max_index(Var::A), Some(0));
        assert_eq!(parse("t", &Params::new()).unwrap().max_index(Var::Q), None);
    }
}
