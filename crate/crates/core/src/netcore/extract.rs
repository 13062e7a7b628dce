use super::{NetworkConfig, NetworkParams};
use crate::expr::{canonicalize, Expr, ExprSystem};

fn weighted_sum(weights: &[f64], inputs: &[Expr]) -> Expr {
    let terms: Vec<Expr> = weights
        .iter()
        .zip(inputs)
        .filter(|(w, u)| **w != 0.0 && !u.is_zero())
        .map(|(w, u)| Expr::Prod(vec![Expr::Const(*w), u.clone()]))
        .collect();
    canonicalize(&Expr::Sum(terms))
}

/// Propagates `(x0, …, x_{n-1}, bias)` symbolically through the same layer algebra as
/// [`super::forward`] and returns one canonical expression per output dimension.
pub fn extract(cfg: &NetworkConfig, params: &NetworkParams) -> ExprSystem {
    let w = cfg.widths;
    let mut outputs: Vec<Vec<Expr>> = vec![Vec::new(); cfg.n];
    for sp in &params.stacks {
        let mut u: Vec<Expr> = (0..cfg.n).map(Expr::Var).collect();
        u.push(Expr::Const(cfg.bias_value));
        for lp in &sp.layers {
            let mut next = Vec::with_capacity(cfg.layer_output_dim());
            for j in 0..w.linear {
                next.push(weighted_sum(lp.linear.row(j), &u));
            }
            for j in 0..w.signomial {
                let factors: Vec<Expr> = lp
                    .signomial
                    .row(j)
                    .iter()
                    .zip(&u)
                    .filter(|(e, _)| **e != 0.0)
                    .map(|(e, ui)| Expr::signomial(ui.clone(), *e))
                    .collect();
                next.push(canonicalize(&Expr::Prod(factors)));
            }
            for (p, op) in cfg.operators.iter().enumerate() {
                for j in 0..w.per_operator {
                    let arg = weighted_sum(lp.operators[p].row(j), &u);
                    next.push(canonicalize(&Expr::op(*op, arg)));
                }
            }
            next.push(Expr::Const(cfg.bias_value));
            u = next;
        }
        for (j, out) in outputs.iter_mut().enumerate() {
            out.push(weighted_sum(sp.readout.row(j), &u));
        }
    }
    ExprSystem::new(
        outputs
            .into_iter()
            .map(|terms| canonicalize(&Expr::Sum(terms)))
            .collect(),
    )
}
