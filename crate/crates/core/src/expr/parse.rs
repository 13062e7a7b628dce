//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := ('-' | '+') unary | power
//! power    := atom ('^' exponent)?
//! exponent := ('-' | '+')? number
//! atom     := number | 'x' digits | func '(' expr ')' | '(' expr ')' | '|' expr '|'
//! func     := 'sin' | 'abs' | 'exp' | 'sign'
//! ```
//!
//! `|e|^p` is a signomial. `e^p` is sugar: a repeated product when `p` is an integer in
//! `0..=4`, a signomial otherwise. A bare `|e|` is `abs(e)`. Division `a/b` is rewritten as
//! `a * sign(b) * |b|^-1`, so no division node exists.

use super::{canonicalize, Expr, ExprSystem, UnaryOp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Pipe,
    End,
}

fn err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'|' => Some(Tok::Pipe),
            _ => None,
        };
        if let Some(t) = single {
            toks.push((t, start));
            i += 1;
            continue;
        }
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
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s = &text[start..i];
            let v: f64 = s
                .parse()
                .map_err(|_| err(start, format!("malformed number `{s}`")))?;
            toks.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let tok = match word.strip_prefix('x') {
                Some(d) if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) => {
                    Tok::Var(d.parse().map_err(|_| err(start, "variable index too large"))?)
                }
                _ => Tok::Ident(word.to_string()),
            };
            toks.push((tok, start));
            continue;
        }
        let ch = text[start..].chars().next().unwrap_or('?');
        return Err(err(start, format!("unexpected character `{ch}`")));
    }
    toks.push((Tok::End, text.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn at(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(err(self.at(), format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    let t = self.term()?;
                    terms.push(Expr::Prod(vec![Expr::Const(-1.0), t]));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap_or(Expr::Const(0.0))
        } else {
            Expr::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<Expr> {
        let mut factors = vec![self.unary()?];
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    factors.push(self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    let d = self.unary()?;
                    factors.push(Expr::op(UnaryOp::Sign, d.clone()));
                    factors.push(Expr::signomial(d, -1.0));
                }
                _ => break,
            }
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap_or(Expr::Const(1.0))
        } else {
            Expr::Prod(factors)
        })
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                let e = self.unary()?;
                Ok(match e {
                    Expr::Const(c) => Expr::Const(-c),
                    e => Expr::Prod(vec![Expr::Const(-1.0), e]),
                })
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn exponent(&mut self) -> Result<f64> {
        let negative = match self.peek() {
            Tok::Minus => {
                self.bump();
                true
            }
            Tok::Plus => {
                self.bump();
                false
            }
            _ => false,
        };
        match self.bump() {
            Tok::Num(v) => Ok(if negative { -v } else { v }),
            _ => Err(err(self.toks[self.pos.saturating_sub(1)].1, "expected exponent")),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Pipe {
            self.bump();
            let inner = self.expr()?;
            self.expect(Tok::Pipe, "closing `|`")?;
            if *self.peek() == Tok::Caret {
                self.bump();
                let p = self.exponent()?;
                return Ok(Expr::signomial(inner, p));
            }
            return Ok(Expr::op(UnaryOp::Abs, inner));
        }
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let p = self.exponent()?;
        if p == p.trunc() && (0.0..=4.0).contains(&p) {
            let n = p as usize;
            if n == 0 {
                return Ok(Expr::Const(1.0));
            }
            if n == 1 {
                return Ok(base);
            }
            return Ok(Expr::Prod(vec![base; n]));
        }
        Ok(Expr::signomial(base, p))
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.at();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Var(i) => Ok(Expr::Var(i)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let op = UnaryOp::from_name(&name)
                    .ok_or_else(|| err(at, format!("unknown operator `{name}`")))?;
                self.expect(Tok::LParen, "`(` after operator name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::op(op, arg))
            }
            Tok::End => Err(err(at, "unexpected end of input")),
            t => Err(err(at, format!("unexpected token {t:?}"))),
        }
    }
}

/// Parses one expression and returns it in canonical form.
pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(err(p.at(), "unexpected trailing input"));
    }
    Ok(canonicalize(&e))
}

/// One expression per non-empty line; lines starting with `#` are comments.
pub fn parse_system(text: &str) -> Result<ExprSystem> {
    let mut components = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        components.push(parse(line)?);
    }
    if components.is_empty() {
        return Err(err(0, "no expressions found"));
    }
    Ok(ExprSystem::new(components))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable() {
        assert_eq!(parse("x0").unwrap(), Expr::Var(0));
    }

    #[test]
    fn tinkerbell_y_component_is_three_products() {
        let e = parse("2*x0*x1 + 2*x0 + 0.5*x1").unwrap();
        let Expr::Sum(ts) = &e else {
            panic!("expected a sum, got {e:?}")
        };
        assert_eq!(ts.len(), 3);
        assert!(ts.iter().all(|t| matches!(t, Expr::Prod(_))));
        let v = e.evaluate(&[0.3, -0.2]).unwrap();
        assert!((v - (2.0 * 0.3 * -0.2 + 0.6 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn signomial_literal() {
        assert_eq!(
            parse("|x0|^1.75").unwrap(),
            Expr::signomial(Expr::Var(0), 1.75)
        );
    }

    #[test]
    fn power_sugar() {
        assert_eq!(
            parse("x0^2").unwrap(),
            Expr::Prod(vec![Expr::Var(0), Expr::Var(0)])
        );
        assert_eq!(parse("x0^1.5").unwrap(), Expr::signomial(Expr::Var(0), 1.5));
        assert_eq!(parse("x0^0").unwrap(), Expr::Const(1.0));
    }

    #[test]
    fn scientific_literals_and_negative_exponents() {
        let e = parse("1.5e-3*|x0|^-2 + 2E2").unwrap();
        let v = e.evaluate(&[0.5]).unwrap();
        assert!((v - (1.5e-3 * 4.0 + 200.0)).abs() < 1e-12);
    }

    #[test]
    fn division_keeps_sign() {
        let e = parse("x0/x1").unwrap();
        assert!((e.evaluate(&[1.0, -4.0]).unwrap() + 0.25).abs() < 1e-15);
        assert_eq!(parse("x0/4").unwrap(), parse("0.25*x0").unwrap());
    }

    #[test]
    fn precedence() {
        let e = parse("1 + 2*x0 - -3").unwrap();
        assert_eq!(e.evaluate(&[1.0]).unwrap(), 6.0);
        let e = parse("-(x0 + 1)*2").unwrap();
        assert_eq!(e.evaluate(&[1.0]).unwrap(), -4.0);
    }

    #[test]
    fn bare_bars_are_abs() {
        let e = parse("|x0 - 1|").unwrap();
        assert_eq!(e.evaluate(&[0.25]).unwrap(), 0.75);
    }

    #[test]
    fn errors_carry_positions() {
        match parse("x0 + foo(x0)") {
            Err(Error::Parse { position, message }) => {
                assert_eq!(position, 5);
                assert!(message.contains("unknown operator"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("x0 +"), Err(Error::Parse { position: 4, .. })));
        assert!(matches!(parse("(x0"), Err(Error::Parse { .. })));
        assert!(matches!(parse("x0 $"), Err(Error::Parse { position: 3, .. })));
        assert!(matches!(parse("|x0|^"), Err(Error::Parse { .. })));
    }

    #[test]
    fn system_text() {
        let s = parse_system("# tinkerbell\nx0^2 - x1^2 + 0.9*x0 - 0.6013*x1\n2*x0*x1 + 2*x0 + 0.5*x1\n")
            .unwrap();
        assert_eq!(s.dim(), 2);
        let v = s.evaluate(&[-0.5, -0.5]).unwrap();
        assert!((v[0] + 0.14935).abs() < 1e-12);
        assert!((v[1] + 0.75).abs() < 1e-12);
    }
}
