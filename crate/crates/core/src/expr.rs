//! Textual expression language for time-varying coefficients.
//!
//! Grammar (recursive descent, `^` right-associative and tighter than unary minus):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 't' | 'pi' | 'e' | param | func '(' expr ')' | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("zero raised to negative power {0}")]
    ZeroToNegative(f64),
    #[error("non-finite intermediate value in `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Negate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Abs,
    Log,
    Sqrt,
}

impl Function {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Function::Sin,
            "cos" => Function::Cos,
            "exp" => Function::Exp,
            "abs" => Function::Abs,
            "log" => Function::Log,
            "sqrt" => Function::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Exp => "exp",
            Function::Abs => "abs",
            Function::Log => "log",
            Function::Sqrt => "sqrt",
        }
    }
}

/// Expression tree. Named constants (`pi`, `e`, model parameters) are folded
/// into [`ExprNode::Constant`] at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Constant(f64),
    Time,
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
    Call(Function, Box<ExprNode>),
}

impl ExprNode {
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        let value = match self {
            ExprNode::Constant(c) => *c,
            ExprNode::Time => t,
            ExprNode::Unary(UnaryOp::Negate, child) => -child.eval(t)?,
            ExprNode::Binary(op, lhs, rhs) => {
                let a = lhs.eval(t)?;
                let b = rhs.eval(t)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinaryOp::Pow => {
                        if a == 0.0 && b < 0.0 {
                            return Err(EvalError::ZeroToNegative(b));
                        }
                        // small integer exponents take the exact path so that
                        // negative bases (e.g. cos(t)^2) stay well defined
                        if b.fract() == 0.0 && b.abs() <= 64.0 {
                            a.powi(b as i32)
                        } else {
                            a.powf(b)
                        }
                    }
                }
            }
            ExprNode::Call(f, child) => {
                let x = child.eval(t)?;
                match f {
                    Function::Sin => x.sin(),
                    Function::Cos => x.cos(),
                    Function::Exp => x.exp(),
                    Function::Abs => x.abs(),
                    Function::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::LogDomain(x));
                        }
                        x.ln()
                    }
                    Function::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::SqrtDomain(x));
                        }
                        x.sqrt()
                    }
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }

    /// True when the tree never references `t`.
    pub fn is_time_independent(&self) -> bool {
        match self {
            ExprNode::Constant(_) => true,
            ExprNode::Time => false,
            ExprNode::Unary(_, c) | ExprNode::Call(_, c) => c.is_time_independent(),
            ExprNode::Binary(_, a, b) => a.is_time_independent() && b.is_time_independent(),
        }
    }
}

/// Fully parenthesized printer; re-parsing the output reproduces the tree.
impl fmt::Display for ExprNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprNode::Constant(c) => {
                if *c < 0.0 {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            ExprNode::Time => write!(f, "t"),
            ExprNode::Unary(UnaryOp::Negate, c) => write!(f, "(-{c})"),
            ExprNode::Binary(op, a, b) => {
                let sym = match op {
                    BinaryOp::Add => "+",
                    BinaryOp::Sub => "-",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    BinaryOp::Pow => "^",
                };
                write!(f, "({a}{sym}{b})")
            }
            ExprNode::Call(func, c) => write!(f, "{}({c})", func.name()),
        }
    }
}

pub fn parse(source: &str) -> Result<ExprNode, ParseError> {
    parse_with_params(source, &BTreeMap::new())
}

/// Parses with extra named constants (model parameters) in scope.
pub fn parse_with_params(
    source: &str,
    params: &BTreeMap<String, f64>,
) -> Result<ExprNode, ParseError> {
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
        params,
    };
    parser.skip_ws();
    if parser.pos >= parser.src.len() {
        return Err(ParseError::Syntax {
            offset: parser.pos,
            message: "empty expression".into(),
        });
    }
    let node = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.src.len() {
        return Err(parser.syntax("unexpected trailing input"));
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
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

    fn expect(&mut self, byte: u8) -> Result<(), ParseError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", byte as char)))
        }
    }

    fn expr(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = ExprNode::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<ExprNode, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = ExprNode::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<ExprNode, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let child = self.unary()?;
            return Ok(ExprNode::Unary(UnaryOp::Negate, Box::new(child)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprNode, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(ExprNode::Binary(
                BinaryOp::Pow,
                Box::new(base),
                Box::new(exponent),
            ));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<ExprNode, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<ExprNode, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            // only treat as exponent when followed by digits (so `2e` is not swallowed)
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>()
            .map(ExprNode::Constant)
            .map_err(|_| ParseError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<ExprNode, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        if self.peek() == Some(b'(') {
            let func = Function::from_name(name).ok_or_else(|| ParseError::UnknownFunction {
                name: name.to_string(),
                offset: start,
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(ExprNode::Call(func, Box::new(arg)));
        }
        match name {
            "t" => Ok(ExprNode::Time),
            "pi" => Ok(ExprNode::Constant(std::f64::consts::PI)),
            "e" => Ok(ExprNode::Constant(std::f64::consts::E)),
            _ => match self.params.get(name) {
                Some(v) => Ok(ExprNode::Constant(*v)),
                None => Err(ParseError::UnknownIdentifier {
                    name: name.to_string(),
                    offset: start,
                }),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicityCheck {
    pub periodic: bool,
    pub max_discrepancy: f64,
    pub worst_t: f64,
}

/// Samples `t_k = k·omega/samples` over one period and compares `f(t+omega)` with `f(t)`.
pub fn check_periodicity(
    node: &ExprNode,
    omega: f64,
    samples: usize,
) -> Result<PeriodicityCheck, EvalError> {
    assert!(
        omega > 0.0 && samples >= 16,
        "omega > 0 and samples >= 16 required"
    );
    let mut periodic = true;
    let mut max_discrepancy = 0.0_f64;
    let mut worst_t = 0.0;
    for k in 0..samples {
        let t = k as f64 * omega / samples as f64;
        let a = node.eval(t)?;
        let b = node.eval(t + omega)?;
        let gap = (b - a).abs();
        if gap > 1e-9 * (1.0 + a.abs()) {
            periodic = false;
        }
        if gap > max_discrepancy {
            max_discrepancy = gap;
            worst_t = t;
        }
    }
    Ok(PeriodicityCheck {
        periodic,
        max_discrepancy,
        worst_t,
    })
}

/// An ω-periodic scalar coefficient `f(t)` with its source text.
#[derive(Debug, Clone)]
pub struct PeriodicExpr {
    source: String,
    ast: ExprNode,
    period: f64,
    constant: Option<f64>,
}

impl PeriodicExpr {
    pub fn new(source: &str, ast: ExprNode, period: f64) -> Result<Self, EvalError> {
        let constant = if ast.is_time_independent() {
            Some(ast.eval(0.0)?)
        } else {
            None
        };
        Ok(Self {
            source: source.to_string(),
            ast,
            period,
            constant,
        })
    }

    pub fn constant(value: f64, period: f64) -> Self {
        Self {
            source: value.to_string(),
            ast: ExprNode::Constant(value),
            period,
            constant: Some(value),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        match self.constant {
            Some(c) => Ok(c),
            None => self.ast.eval(t),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &ExprNode {
        &self.ast
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    pub fn check_periodicity(&self, samples: usize) -> Result<PeriodicityCheck, EvalError> {
        check_periodicity(&self.ast, self.period, samples)
    }

    /// Min and max over `samples` equispaced points of one period.
    pub fn range(&self, samples: usize) -> Result<(f64, f64), EvalError> {
        if let Some(c) = self.constant {
            return Ok((c, c));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..samples {
            let v = self.eval(k as f64 * self.period / samples as f64)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn ev(src: &str, t: f64) -> f64 {
        parse(src).unwrap().eval(t).unwrap()
    }

    #[test]
    fn grammar_cases() {
        assert!(parse("1+sin(t)^2").is_ok());
        assert!(parse("abs(cos(2*t))").is_ok());
        assert_eq!(
            parse("sin("),
            Err(ParseError::Syntax {
                offset: 4,
                message: "unexpected end of input".into()
            })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        assert_eq!(ev("2e-1 + 1.5E1", 0.0), 15.2);
        assert_eq!(ev("2*e", 0.0), 2.0 * E);
    }

    #[test]
    fn identifier_errors() {
        assert!(matches!(
            parse("1 + x"),
            Err(ParseError::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse("tan(t)"),
            Err(ParseError::UnknownFunction { offset: 0, .. })
        ));
        assert!(matches!(parse(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(
            parse("1 2"),
            Err(ParseError::Syntax { offset: 2, .. })
        ));
    }

    #[test]
    fn params_are_folded() {
        let mut params = BTreeMap::new();
        params.insert("eps1".to_string(), 0.25);
        let node = parse_with_params("eps1+sin(t)^2", &params).unwrap();
        assert_eq!(node.eval(0.0).unwrap(), 0.25);
    }

    #[test]
    fn eval_examples() {
        assert!((ev("sin(t)^2", PI / 2.0) - 1.0).abs() < 1e-15);
        assert!((ev("exp(cos(t)^2)", 0.0) - std::f64::consts::E).abs() < 1e-12);
        assert!(ev("abs(cos(2*t))", PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let err = |s: &str| parse(s).unwrap().eval(0.0).unwrap_err();
        assert_eq!(err("log(t)"), EvalError::LogDomain(0.0));
        assert_eq!(err("1/t"), EvalError::DivisionByZero);
        assert_eq!(err("t^(-1)"), EvalError::ZeroToNegative(-1.0));
        assert_eq!(err("sqrt(t-1)"), EvalError::SqrtDomain(-1.0));
        assert!(matches!(err("exp(1000)"), EvalError::NonFinite(_)));
    }

    #[test]
    fn periodicity_examples() {
        let sin2 = parse("sin(t)^2").unwrap();
        assert!(check_periodicity(&sin2, PI, 64).unwrap().periodic);
        let sin = parse("sin(t)").unwrap();
        let c = check_periodicity(&sin, PI, 64).unwrap();
        assert!(!c.periodic);
        assert!((c.max_discrepancy - 2.0).abs() < 1e-12);
        assert!((c.worst_t - PI / 2.0).abs() < 1e-12);
        let three = parse("3").unwrap();
        assert!(check_periodicity(&three, 1.0, 16).unwrap().periodic);
    }

    fn arb_expr() -> impl Strategy<Value = ExprNode> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(ExprNode::Constant),
            Just(ExprNode::Time),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner
                    .clone()
                    .prop_map(|c| ExprNode::Unary(UnaryOp::Negate, Box::new(c))),
                (
                    prop_oneof![
                        Just(BinaryOp::Add),
                        Just(BinaryOp::Sub),
                        Just(BinaryOp::Mul),
                        Just(BinaryOp::Div),
                        Just(BinaryOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| ExprNode::Binary(
                        op,
                        Box::new(a),
                        Box::new(b)
                    )),
                (
                    prop_oneof![
                        Just(Function::Sin),
                        Just(Function::Cos),
                        Just(Function::Exp),
                        Just(Function::Abs),
                        Just(Function::Log),
                        Just(Function::Sqrt)
                    ],
                    inner
                )
                    .prop_map(|(f, c)| ExprNode::Call(f, Box::new(c))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(node in arb_expr()) {
            let printed = node.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(reparsed, node);
        }

        #[test]
        fn periodic_stays_periodic_under_refinement(k in 1u32..5, a in 0.1f64..3.0) {
            let src = format!("{a}+sin({k}*t)^2*cos(2*{k}*t)");
            let node = parse(&src).unwrap();
            let coarse = check_periodicity(&node, PI, 64).unwrap();
            let fine = check_periodicity(&node, PI, 128).unwrap();
            prop_assert!(coarse.periodic);
            prop_assert!(fine.periodic);
        }
    }
}
