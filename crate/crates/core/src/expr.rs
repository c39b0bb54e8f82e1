//! A small arithmetic language for coefficient fields.
//!
//! Grammar:
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! var    := 'x' | 'x1' | 'x2' | ...
//! func   := exp | log | abs | min | max | sqrt
//! ```
//! `x` is an alias of `x1`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Abs,
    Sqrt,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression over `x1, ..., xd`.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    arity: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            src: source.as_bytes(),
            pos: 0,
            arity: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.trim().to_string(),
            root,
            arity: p.arity,
        })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            source: format!("{v}"),
            root: Node::Num(v),
            arity: 0,
        }
    }

    /// Highest variable index used; `x3` gives 3.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// The value if the expression uses no variables.
    pub fn as_constant(&self) -> Option<f64> {
        (self.arity == 0).then(|| eval(&self.root, &[]))
    }

    /// Evaluates at `x`; variables past `x.len()` read as 0.
    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }

    /// Fails unless the expression fits dimension `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.arity > dim {
            return Err(Error::Validation(format!(
                "expression {:?} uses x{} in dimension {dim}",
                self.source, self.arity
            )));
        }
        Ok(())
    }
}

fn eval(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => x.get(*i).copied().unwrap_or(0.0),
        Node::Neg(a) => -eval(a, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x), eval(b, x));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let mut vals = args.iter().map(|a| eval(a, x));
            match f {
                Func::Exp => vals.next().unwrap_or(f64::NAN).exp(),
                Func::Log => vals.next().unwrap_or(f64::NAN).ln(),
                Func::Abs => vals.next().unwrap_or(f64::NAN).abs(),
                Func::Sqrt => vals.next().unwrap_or(f64::NAN).sqrt(),
                Func::Min => vals.fold(f64::INFINITY, f64::min),
                Func::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    arity: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Validation(format!(
            "expression parse error at byte {}: {msg} in {:?}",
            self.pos,
            String::from_utf8_lossy(self.src)
        ))
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

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| self.error("malformed number"))
    }

    fn ident(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "abs" => Some(Func::Abs),
            "sqrt" => Some(Func::Sqrt),
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            _ => None,
        };
        if let Some(f) = func {
            if !self.eat(b'(') {
                return Err(self.error("expected '(' after function name"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected ')'"));
            }
            let variadic = matches!(f, Func::Min | Func::Max);
            if (variadic && args.len() < 2) || (!variadic && args.len() != 1) {
                return Err(self.error(&format!("wrong number of arguments to {name}")));
            }
            return Ok(Node::Call(f, args));
        }
        let index = match name {
            "x" => 1,
            _ => name
                .strip_prefix('x')
                .and_then(|d| d.parse::<usize>().ok())
                .filter(|i| *i >= 1)
                .ok_or_else(|| self.error(&format!("unknown identifier {name:?}")))?,
        };
        self.arity = self.arity.max(index);
        Ok(Node::Var(index - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[]), -4.0);
        assert_eq!(ev("2 ^ -1", &[]), 0.5);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
        assert_eq!(ev("1.5e2 + .5", &[]), 150.5);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("x1 + 2 * x2", &[1.0, 3.0]), 7.0);
        assert_eq!(ev("x", &[4.0]), 4.0);
        assert_eq!(ev("max(x1, 0.5, -1)", &[0.2]), 0.5);
        assert_eq!(ev("min(abs(x1), 1)", &[-0.3]), 0.3);
        assert!((ev("exp(log(2.5))", &[]) - 2.5).abs() < 1e-15);
        assert_eq!(ev("sqrt(9)", &[]), 3.0);
        let e = Expr::parse("1 + abs(x3)").unwrap();
        assert_eq!(e.arity(), 3);
        assert!(e.check_dim(2).is_err());
        assert_eq!(Expr::parse("1.5 * 2").unwrap().as_constant(), Some(3.0));
        assert_eq!(Expr::parse("x2").unwrap().as_constant(), None);
    }

    #[test]
    fn parse_errors() {
        for s in ["", "1 +", "(1", "foo", "x0", "exp(1, 2)", "min(1)", "1 2", "2 $ 3", "abs 1"] {
            assert!(Expr::parse(s).unwrap_err().is_validation(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn numbers_round_trip(v in -1e6f64..1e6) {
            let e = Expr::parse(&format!("{v}")).unwrap();
            prop_assert_eq!(e.eval(&[]), v);
        }

        #[test]
        fn affine_forms(a in -10f64..10.0, b in -10f64..10.0, x in -10f64..10.0) {
            let e = Expr::parse(&format!("({a}) * x1 + ({b})")).unwrap();
            prop_assert!((e.eval(&[x]) - (a * x + b)).abs() <= 1e-12 * (1.0 + (a * x).abs() + b.abs()));
        }
    }
}
