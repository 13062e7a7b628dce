use super::{sign, Expr, UnaryOp};

const MAX_PASSES: usize = 32;
/// Products of sums are only expanded while the result stays below this many terms.
const MAX_EXPANSION: usize = 256;

/// Canonical form: nested sums and products flattened, constant subtrees folded, like terms
/// merged under a single leading coefficient, and terms/factors sorted structurally.
///
/// Idempotent: passes are repeated until the tree stops changing.
pub fn canonicalize(e: &Expr) -> Expr {
    let mut cur = pass(e);
    for _ in 0..MAX_PASSES {
        let next = pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn pass(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Signomial(b, p) => signomial(pass(b), *p),
        Expr::Op(op, a) => unary(*op, pass(a)),
        Expr::Sum(ts) => sum(ts.iter().map(pass).collect()),
        Expr::Prod(fs) => prod(fs.iter().map(pass).collect()),
    }
}

fn finite_const(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Const(v))
}

fn signomial(base: Expr, p: f64) -> Expr {
    if p == 0.0 {
        return Expr::Const(1.0);
    }
    match base {
        Expr::Const(c) if !(c == 0.0 && p < 0.0) => {
            let v = if c == 0.0 { 0.0 } else { c.abs().powf(p) };
            finite_const(v).unwrap_or_else(|| Expr::signomial(Expr::Const(c), p))
        }
        Expr::Signomial(inner, q) => Expr::signomial(*inner, p * q),
        Expr::Op(UnaryOp::Abs, inner) => Expr::signomial(*inner, p),
        Expr::Prod(fs) => Expr::Prod(fs.into_iter().map(|f| Expr::signomial(f, p)).collect()),
        b => Expr::signomial(b, p),
    }
}

fn unary(op: UnaryOp, arg: Expr) -> Expr {
    if let Expr::Const(c) = arg {
        if let Some(v) = finite_const(op.apply(c)) {
            return v;
        }
        return Expr::op(op, arg);
    }
    match (op, arg) {
        // exp(c + rest) = e^c * exp(rest)
        (UnaryOp::Exp, Expr::Sum(ts)) => {
            let (consts, rest): (Vec<Expr>, Vec<Expr>) =
                ts.into_iter().partition(|t| matches!(t, Expr::Const(_)));
            let c: f64 = consts
                .iter()
                .map(|t| match t {
                    Expr::Const(c) => *c,
                    _ => 0.0,
                })
                .sum();
            let scale = c.exp();
            let inner = if rest.len() == 1 {
                rest.into_iter().next().unwrap_or(Expr::Const(0.0))
            } else {
                Expr::Sum(rest)
            };
            if consts.is_empty() || !scale.is_finite() || scale == 0.0 {
                let mut ts = vec![inner];
                ts.extend(consts);
                return Expr::op(op, Expr::Sum(ts));
            }
            Expr::Prod(vec![Expr::Const(scale), Expr::op(UnaryOp::Exp, inner)])
        }
        (UnaryOp::Abs | UnaryOp::Sign, Expr::Prod(fs))
            if matches!(fs.first(), Some(Expr::Const(c)) if *c != 0.0) =>
        {
            let c = match fs[0] {
                Expr::Const(c) => c,
                _ => unreachable!(),
            };
            let rest = if fs.len() == 2 {
                fs[1].clone()
            } else {
                Expr::Prod(fs[1..].to_vec())
            };
            let k = if op == UnaryOp::Abs { c.abs() } else { sign(c) };
            Expr::Prod(vec![Expr::Const(k), Expr::op(op, rest)])
        }
        (UnaryOp::Abs, s @ Expr::Signomial(..)) => s,
        (UnaryOp::Abs, Expr::Op(UnaryOp::Abs, inner)) => Expr::op(UnaryOp::Abs, *inner),
        (op, a) => Expr::op(op, a),
    }
}

fn prod(factors: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        match f {
            Expr::Prod(inner) => flat.extend(inner),
            f => flat.push(f),
        }
    }

    let mut coef = 1.0;
    let mut rest: Vec<Expr> = Vec::new();
    for f in flat {
        match f {
            Expr::Const(c) => coef *= c,
            f => rest.push(f),
        }
    }
    if coef == 0.0 {
        return Expr::Const(0.0);
    }
    if !coef.is_finite() {
        // leave the overflow visible to evaluation rather than folding it away
        rest.insert(0, Expr::Const(coef));
        return Expr::Prod(rest);
    }

    let rest = merge_signomials(rest);

    if rest.iter().any(|f| matches!(f, Expr::Sum(_))) {
        if let Some(expanded) = expand(coef, &rest) {
            return expanded;
        }
    }

    let mut rest = rest;
    rest.sort_by(|a, b| a.structural_cmp(b));
    match (rest.len(), coef == 1.0) {
        (0, _) => Expr::Const(coef),
        (1, true) => rest.pop().unwrap_or(Expr::Const(1.0)),
        (_, true) => Expr::Prod(rest),
        (_, false) => {
            rest.insert(0, Expr::Const(coef));
            Expr::Prod(rest)
        }
    }
}

/// `|b|^p * |b|^q = |b|^(p+q)`
fn merge_signomials(factors: Vec<Expr>) -> Vec<Expr> {
    let mut out: Vec<Expr> = Vec::with_capacity(factors.len());
    for f in factors {
        if let Expr::Signomial(b, q) = &f {
            if let Some(Expr::Signomial(_, p)) = out
                .iter_mut()
                .find(|g| matches!(g, Expr::Signomial(b2, _) if b2 == b))
            {
                *p += q;
                continue;
            }
        }
        out.push(f);
    }
    out.retain(|f| !matches!(f, Expr::Signomial(_, p) if *p == 0.0));
    out
}

/// Distributes a product over its sum factors.
fn expand(coef: f64, factors: &[Expr]) -> Option<Expr> {
    let mut total = 1usize;
    for f in factors {
        if let Expr::Sum(ts) = f {
            total = total.checked_mul(ts.len())?;
            if total > MAX_EXPANSION {
                return None;
            }
        }
    }
    let mut terms: Vec<Vec<Expr>> = vec![vec![Expr::Const(coef)]];
    for f in factors {
        match f {
            Expr::Sum(ts) => {
                let mut next = Vec::with_capacity(terms.len() * ts.len());
                for partial in &terms {
                    for t in ts {
                        let mut p = partial.clone();
                        p.push(t.clone());
                        next.push(p);
                    }
                }
                terms = next;
            }
            f => terms.iter_mut().for_each(|p| p.push(f.clone())),
        }
    }
    Some(sum(terms.into_iter().map(prod).collect()))
}

fn sum(terms: Vec<Expr>) -> Expr {
    let mut flat = Vec::with_capacity(terms.len());
    for t in terms {
        match t {
            Expr::Sum(inner) => flat.extend(inner),
            t => flat.push(t),
        }
    }

    let mut constant = 0.0;
    let mut groups: Vec<(f64, Expr)> = Vec::new();
    for t in flat {
        match t.split_coefficient() {
            (c, None) => constant += c,
            (c, Some(rest)) => match groups.iter_mut().find(|(_, r)| *r == rest) {
                Some((acc, _)) => *acc += c,
                None => groups.push((c, rest)),
            },
        }
    }
    groups.retain(|(c, _)| *c != 0.0);
    groups.sort_by(|a, b| a.1.structural_cmp(&b.1));

    let mut out: Vec<Expr> = groups
        .into_iter()
        .map(|(c, r)| Expr::with_coefficient(c, Some(r)))
        .collect();
    if constant != 0.0 {
        out.push(Expr::Const(constant));
    }
    match out.len() {
        0 => Expr::Const(0.0),
        1 => out.pop().unwrap_or(Expr::Const(0.0)),
        _ => Expr::Sum(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: usize) -> Expr {
        Expr::Var(i)
    }

    #[test]
    fn flattens_nested_sums() {
        let e = Expr::Sum(vec![Expr::Sum(vec![v(0), v(1)]), v(2)]);
        assert_eq!(canonicalize(&e), Expr::Sum(vec![v(0), v(1), v(2)]));
    }

    #[test]
    fn folds_constant_factors() {
        let e = Expr::Prod(vec![Expr::Const(2.0), Expr::Const(3.0), v(0)]);
        assert_eq!(canonicalize(&e), Expr::Prod(vec![Expr::Const(6.0), v(0)]));
    }

    #[test]
    fn eliminates_zero_terms() {
        let e = Expr::Sum(vec![Expr::Prod(vec![Expr::Const(0.0), v(0)]), v(1)]);
        assert_eq!(canonicalize(&e), v(1));
    }

    #[test]
    fn merges_like_terms() {
        let e = Expr::Sum(vec![
            Expr::Prod(vec![Expr::Const(2.0), v(0)]),
            Expr::Prod(vec![v(0), Expr::Const(0.5)]),
        ]);
        assert_eq!(canonicalize(&e), Expr::Prod(vec![Expr::Const(2.5), v(0)]));
    }

    #[test]
    fn bias_signomials_fold_into_coefficients() {
        // |x0|^2 * |2|^0 -> |x0|^2 ; |x0|^2 * |2|^1 -> 2*|x0|^2
        let e = Expr::Prod(vec![
            Expr::signomial(v(0), 2.0),
            Expr::signomial(Expr::Const(2.0), 0.0),
        ]);
        assert_eq!(canonicalize(&e), Expr::signomial(v(0), 2.0));
        let e = Expr::Prod(vec![
            Expr::signomial(v(0), 2.0),
            Expr::signomial(Expr::Const(2.0), 1.0),
        ]);
        assert_eq!(
            canonicalize(&e),
            Expr::Prod(vec![Expr::Const(2.0), Expr::signomial(v(0), 2.0)])
        );
    }

    #[test]
    fn distributes_scalars_over_sums() {
        let e = Expr::Prod(vec![
            Expr::Const(3.0),
            Expr::Sum(vec![v(0), Expr::Const(1.0)]),
        ]);
        assert_eq!(
            canonicalize(&e),
            Expr::Sum(vec![Expr::Prod(vec![Expr::Const(3.0), v(0)]), Expr::Const(3.0)])
        );
    }

    #[test]
    fn pulls_constants_out_of_exp() {
        let e = Expr::op(
            UnaryOp::Exp,
            Expr::Sum(vec![Expr::Const(1.0), Expr::signomial(v(0), 2.0)]),
        );
        let c = canonicalize(&e);
        assert_eq!(
            c,
            Expr::Prod(vec![
                Expr::Const(1f64.exp()),
                Expr::op(UnaryOp::Exp, Expr::signomial(v(0), 2.0))
            ])
        );
    }

    #[test]
    fn signomial_of_scaled_base_splits() {
        let e = Expr::signomial(Expr::Prod(vec![Expr::Const(-4.0), v(0)]), 0.5);
        assert_eq!(
            canonicalize(&e),
            Expr::Prod(vec![Expr::Const(2.0), Expr::signomial(v(0), 0.5)])
        );
    }

    #[test]
    fn merges_same_base_signomials() {
        let e = Expr::Prod(vec![Expr::signomial(v(0), 1.5), Expr::signomial(v(0), 0.5)]);
        assert_eq!(canonicalize(&e), Expr::signomial(v(0), 2.0));
    }

    #[test]
    fn keeps_unfoldable_zero_to_negative_power() {
        let e = Expr::signomial(Expr::Const(0.0), -1.0);
        assert_eq!(canonicalize(&e), e);
    }
}
