//! Immutable symbolic expressions.
//!
//! An [`Expr`] is the common currency between the network (which emits one via
//! [`crate::netcore::extract`]), the simplifier, and the evaluator. Signomials are
//! absolute-valued: `Signomial(b, p)` means `|b|^p`, with `0^0 = 1` and `0^p` for `p < 0`
//! reported as an evaluation error.

mod canon;
mod format;
mod parse;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canon::canonicalize;
pub use format::{format, format_number, Precision};
pub use parse::{parse, parse_system};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Sin,
    Abs,
    Exp,
    Sign,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 4] = [UnaryOp::Sin, UnaryOp::Abs, UnaryOp::Exp, UnaryOp::Sign];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }

    pub fn apply(self, z: f64) -> f64 {
        match self {
            UnaryOp::Sin => z.sin(),
            UnaryOp::Abs => z.abs(),
            UnaryOp::Exp => z.exp(),
            UnaryOp::Sign => sign(z),
        }
    }

    /// Derivative used by backpropagation. `abs` has derivative 0 at the origin and `sign` is
    /// flat everywhere.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            UnaryOp::Sin => z.cos(),
            UnaryOp::Abs => sign(z),
            UnaryOp::Exp => z.exp(),
            UnaryOp::Sign => 0.0,
        }
    }
}

impl fmt::Display for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `sign(0) = 0`, unlike `f64::signum`.
pub fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    /// `|base|^exponent`
    Signomial(Box<Expr>, f64),
    Op(UnaryOp, Box<Expr>),
}

impl Expr {
    pub fn signomial(base: Expr, exponent: f64) -> Expr {
        Expr::Signomial(Box::new(base), exponent)
    }

    pub fn op(op: UnaryOp, arg: Expr) -> Expr {
        Expr::Op(op, Box::new(arg))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn canonicalize(&self) -> Expr {
        canonicalize(self)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => match x.get(*i) {
                Some(v) => *v,
                None => {
                    return Err(self.eval_error(format!(
                        "variable index {i} out of range for a {}-dimensional state",
                        x.len()
                    )))
                }
            },
            Expr::Sum(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    acc += t.evaluate(x)?;
                }
                acc
            }
            Expr::Prod(factors) => {
                let mut acc = 1.0;
                for f in factors {
                    acc *= f.evaluate(x)?;
                }
                acc
            }
            Expr::Signomial(base, p) => {
                let b = base.evaluate(x)?.abs();
                if b == 0.0 {
                    if *p == 0.0 {
                        1.0
                    } else if *p < 0.0 {
                        return Err(self.eval_error("zero raised to a negative power".into()));
                    } else {
                        0.0
                    }
                } else {
                    b.powf(*p)
                }
            }
            Expr::Op(op, arg) => op.apply(arg.evaluate(x)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.eval_error("non-finite value".into()))
        }
    }

    fn eval_error(&self, reason: String) -> Error {
        Error::Evaluation {
            subexpr: format(self, Precision::Short),
            reason,
        }
    }

    /// Number of numeric-constant leaf positions (constants and signomial exponents).
    ///
    /// Structural constants are not counted: exponents 0 and 1, and coefficients 0 and ±1
    /// (a unit coefficient only carries the sign of its term).
    pub fn count_constants(&self) -> usize {
        match self {
            Expr::Const(c) => usize::from(*c != 0.0 && c.abs() != 1.0),
            Expr::Var(_) => 0,
            Expr::Sum(ts) | Expr::Prod(ts) => ts.iter().map(Expr::count_constants).sum(),
            Expr::Signomial(b, p) => b.count_constants() + usize::from(*p != 0.0 && *p != 1.0),
            Expr::Op(_, a) => a.count_constants(),
        }
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Sum(ts) | Expr::Prod(ts) => ts.iter().filter_map(Expr::max_var).max(),
            Expr::Signomial(b, _) | Expr::Op(_, b) => b.max_var(),
        }
    }

    /// Total number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Sum(ts) | Expr::Prod(ts) => 1 + ts.iter().map(Expr::size).sum::<usize>(),
            Expr::Signomial(b, _) | Expr::Op(_, b) => 1 + b.size(),
        }
    }

    /// Top-level additive terms (a non-sum is a single term).
    pub fn terms(&self) -> Vec<&Expr> {
        match self {
            Expr::Sum(ts) => ts.iter().collect(),
            Expr::Const(c) if *c == 0.0 => Vec::new(),
            e => vec![e],
        }
    }

    /// Splits a term into its leading numeric coefficient and the coefficient-free remainder.
    /// A pure constant has no remainder.
    pub fn split_coefficient(&self) -> (f64, Option<Expr>) {
        match self {
            Expr::Const(c) => (*c, None),
            Expr::Prod(fs) => match fs.first() {
                Some(Expr::Const(c)) => {
                    let rest: Vec<Expr> = fs[1..].to_vec();
                    let rest = match rest.len() {
                        0 => None,
                        1 => rest.into_iter().next(),
                        _ => Some(Expr::Prod(rest)),
                    };
                    (*c, rest)
                }
                _ => (1.0, Some(self.clone())),
            },
            e => (1.0, Some(e.clone())),
        }
    }

    /// Inverse of [`Expr::split_coefficient`].
    pub fn with_coefficient(coef: f64, rest: Option<Expr>) -> Expr {
        match rest {
            None => Expr::Const(coef),
            Some(r) if coef == 1.0 => r,
            Some(Expr::Prod(mut fs)) => {
                fs.insert(0, Expr::Const(coef));
                Expr::Prod(fs)
            }
            Some(r) => Expr::Prod(vec![Expr::Const(coef), r]),
        }
    }

    /// Applies `f` to every numeric constant: `Const` leaves and signomial exponents.
    pub fn map_constants(&self, f: &mut impl FnMut(f64) -> f64) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(f(*c)),
            Expr::Var(i) => Expr::Var(*i),
            Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| t.map_constants(f)).collect()),
            Expr::Prod(ts) => Expr::Prod(ts.iter().map(|t| t.map_constants(f)).collect()),
            Expr::Signomial(b, p) => {
                let b = b.map_constants(f);
                Expr::signomial(b, f(*p))
            }
            Expr::Op(op, a) => Expr::op(*op, a.map_constants(f)),
        }
    }

    /// Total structural order used to sort terms and factors.
    pub fn structural_cmp(&self, other: &Expr) -> Ordering {
        fn rank(e: &Expr) -> u8 {
            match e {
                Expr::Var(_) => 0,
                Expr::Signomial(..) => 1,
                Expr::Prod(_) => 2,
                Expr::Op(..) => 3,
                Expr::Sum(_) => 4,
                Expr::Const(_) => 5,
            }
        }
        fn slice_cmp(a: &[Expr], b: &[Expr]) -> Ordering {
            for (x, y) in a.iter().zip(b) {
                let o = x.structural_cmp(y);
                if o != Ordering::Equal {
                    return o;
                }
            }
            a.len().cmp(&b.len())
        }
        match (self, other) {
            (Expr::Const(a), Expr::Const(b)) => a.total_cmp(b),
            (Expr::Var(a), Expr::Var(b)) => a.cmp(b),
            (Expr::Sum(a), Expr::Sum(b)) | (Expr::Prod(a), Expr::Prod(b)) => slice_cmp(a, b),
            (Expr::Signomial(a, p), Expr::Signomial(b, q)) => {
                a.structural_cmp(b).then_with(|| p.total_cmp(q))
            }
            (Expr::Op(o1, a), Expr::Op(o2, b)) => o1.cmp(o2).then_with(|| a.structural_cmp(b)),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format(self, Precision::Short))
    }
}

/// One expression per output state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprSystem {
    pub components: Vec<Expr>,
}

impl ExprSystem {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|e| e.evaluate(x)).collect()
    }

    pub fn canonicalize(&self) -> ExprSystem {
        ExprSystem::new(self.components.iter().map(canonicalize).collect())
    }

    pub fn count_constants(&self) -> usize {
        self.components.iter().map(Expr::count_constants).sum()
    }

    /// One expression per line, in the parse grammar.
    pub fn to_text(&self, precision: Precision) -> String {
        let mut s = String::new();
        for e in &self.components {
            s.push_str(&format(e, precision));
            s.push('\n');
        }
        s
    }
}

impl fmt::Display for ExprSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .components
            .iter()
            .map(|e| format(e, Precision::Short))
            .collect();
        f.write_str(&parts.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn evaluates_logistic_expansion() {
        let v = p("3.9*x0 - 3.9*|x0|^2").evaluate(&[0.5]).unwrap();
        assert!((v - 0.975).abs() < 1e-15);
    }

    #[test]
    fn evaluates_gaussian_at_origin() {
        let v = p("exp(-12*|x0|^2) - 0.5").evaluate(&[0.0]).unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn signomial_of_negative_base() {
        // 2^1.7 = 3.2490095854249419 (computed with mpmath at 30 digits)
        let e = Expr::signomial(Expr::Var(0), 1.7);
        let v = e.evaluate(&[-2.0]).unwrap();
        assert!((v - 3.249_009_585_424_942).abs() < 1e-12, "{v}");
    }

    #[test]
    fn zero_power_conventions() {
        let zero_zero = Expr::signomial(Expr::Var(0), 0.0);
        assert_eq!(zero_zero.evaluate(&[0.0]).unwrap(), 1.0);
        let neg = Expr::signomial(Expr::Var(0), -1.0);
        assert!(matches!(neg.evaluate(&[0.0]), Err(Error::Evaluation { .. })));
        assert_eq!(Expr::op(UnaryOp::Sign, Expr::Var(0)).evaluate(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_variable_is_an_error() {
        assert!(Expr::Var(1).evaluate(&[0.3]).is_err());
    }

    #[test]
    fn constant_census() {
        assert_eq!(p("3.9*x0 - 3.9*|x0|^2").count_constants(), 3);
        assert_eq!(Expr::Var(0).count_constants(), 0);
        assert_eq!(
            p("3.7392*x0 - 3.7578*|x0|^2.044 + 0.016").count_constants(),
            4
        );
        assert_eq!(p("|x0|^1").count_constants(), 0);
    }

    #[test]
    fn constant_census_ignores_term_order() {
        let a = p("0.5*x1 + 2*x0*x1 + 1.3*|x0|^1.5");
        let b = Expr::Sum(match a.clone() {
            Expr::Sum(mut ts) => {
                ts.reverse();
                ts
            }
            _ => unreachable!(),
        });
        assert_eq!(a.count_constants(), b.count_constants());
    }

    #[test]
    fn coefficient_split_round_trips() {
        for s in ["x0", "-2*x0*x1", "0.5", "|x0|^2"] {
            let e = p(s);
            let (c, rest) = e.split_coefficient();
            assert_eq!(Expr::with_coefficient(c, rest), e, "{s}");
        }
    }
}
