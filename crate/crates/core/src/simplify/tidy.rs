use crate::expr::{Expr, ExprSystem, UnaryOp};
use crate::maps::Dataset;

/// Terms whose largest magnitude on the data stays below this fraction of the largest target
/// magnitude are dropped.
pub const NEGLIGIBLE_TERM: f64 = 1e-9;

/// Data-domain cleanup after refitting.
///
/// `abs(z)` and `sign(z)` become `±z` and `±1` when `z` has one strict sign on every input
/// of `ds`, and top-level terms that are numerically zero on `ds` are removed. Predictions on
/// `ds` are unchanged up to rounding; off the sampled domain they may differ.
pub fn tidy(expr: &ExprSystem, ds: &Dataset) -> ExprSystem {
    ExprSystem::new(
        expr.components
            .iter()
            .enumerate()
            .map(|(d, c)| tidy_component(c, ds, d))
            .collect(),
    )
}

fn tidy_component(e: &Expr, ds: &Dataset, d: usize) -> Expr {
    let resolved = resolve_signs(e, ds).canonicalize();
    let scale = ds.targets.iter().map(|t| t[d].abs()).fold(0.0, f64::max);
    let kept: Vec<Expr> = resolved
        .terms()
        .into_iter()
        .filter(|t| max_abs(t, ds).is_none_or(|m| m > NEGLIGIBLE_TERM * scale))
        .cloned()
        .collect();
    match kept.len() {
        0 => Expr::Const(0.0),
        1 => kept.into_iter().next().unwrap_or(Expr::Const(0.0)),
        _ => Expr::Sum(kept).canonicalize(),
    }
}

/// `None` when the term fails to evaluate somewhere.
fn max_abs(e: &Expr, ds: &Dataset) -> Option<f64> {
    let mut m = 0.0f64;
    for x in &ds.inputs {
        let v = e.evaluate(x).ok()?;
        if !v.is_finite() {
            return None;
        }
        m = m.max(v.abs());
    }
    Some(m)
}

/// `+1` or `-1` when `e` is strictly positive or strictly negative on every input.
fn fixed_sign(e: &Expr, ds: &Dataset) -> Option<f64> {
    let mut pos = true;
    let mut neg = true;
    for x in &ds.inputs {
        let v = e.evaluate(x).ok()?;
        pos &= v > 0.0;
        neg &= v < 0.0;
        if !pos && !neg {
            return None;
        }
    }
    if pos {
        Some(1.0)
    } else if neg {
        Some(-1.0)
    } else {
        None
    }
}

fn resolve_signs(e: &Expr, ds: &Dataset) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| resolve_signs(t, ds)).collect()),
        Expr::Prod(fs) => Expr::Prod(fs.iter().map(|f| resolve_signs(f, ds)).collect()),
        Expr::Signomial(b, p) => Expr::signomial(resolve_signs(b, ds), *p),
        Expr::Op(op, a) => {
            let a = resolve_signs(a, ds);
            match (op, fixed_sign(&a, ds)) {
                (UnaryOp::Abs, Some(s)) => Expr::Prod(vec![Expr::Const(s), a]),
                (UnaryOp::Sign, Some(s)) => Expr::Const(s),
                _ => Expr::op(*op, a),
            }
        }
    }
}
