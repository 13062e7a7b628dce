use nalgebra::{DMatrix, DVector};

use super::{check_dims, rss, tidy, SimplificationResult};
use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSystem};
use crate::maps::Dataset;

/// Design matrices with a larger 2-norm condition number keep their incoming coefficients.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedModel {
    pub expr: ExprSystem,
    /// Coefficients of the top-level terms, per output dimension.
    pub coefficients: Vec<Vec<f64>>,
    pub rss_before: f64,
    pub rss_after: f64,
    /// Set when some dimension's design matrix was too ill-conditioned (or failed to
    /// evaluate) and kept its original coefficients.
    pub condition_flag: bool,
}

/// Re-fits the chosen expression's linearly entering coefficients on the whole dataset.
pub fn ols_refine(sr: &SimplificationResult, ds: &Dataset) -> Result<RefinedModel> {
    refine_expr(sr.chosen_expr(), ds)
}

/// Least-squares fit of the outer coefficient of every top-level term; everything inside a
/// term stays fixed. Refitted components are then passed through [`tidy`].
pub fn refine_expr(expr: &ExprSystem, ds: &Dataset) -> Result<RefinedModel> {
    check_dims(expr, ds)?;
    let rss_before = rss(expr, ds)?;
    let mut components = Vec::with_capacity(expr.dim());
    let mut coefficients = Vec::with_capacity(expr.dim());
    let mut flagged = false;
    for (d, comp) in expr.components.iter().enumerate() {
        let (refit, coefs, flag) = refine_component(comp, ds, d);
        flagged |= flag;
        components.push(if flag {
            refit
        } else {
            tidy(&ExprSystem::new(vec![refit]), ds).components.remove(0)
        });
        coefficients.push(coefs);
    }
    let refined = ExprSystem::new(components);
    let rss_after = rss(&refined, ds)?;
    Ok(RefinedModel {
        expr: refined,
        coefficients,
        rss_before,
        rss_after,
        condition_flag: flagged,
    })
}

fn refine_component(comp: &Expr, ds: &Dataset, d: usize) -> (Expr, Vec<f64>, bool) {
    let split: Vec<(f64, Option<Expr>)> = comp.terms().iter().map(|t| t.split_coefficient()).collect();
    let original: Vec<f64> = split.iter().map(|(c, _)| *c).collect();
    if split.is_empty() {
        return (comp.clone(), original, false);
    }
    let m = ds.len();
    let j = split.len();
    let mut g = DMatrix::<f64>::zeros(m, j);
    for (row, x) in ds.inputs.iter().enumerate() {
        for (col, (_, basis)) in split.iter().enumerate() {
            let v = match basis {
                None => Ok(1.0),
                Some(b) => b.evaluate(x),
            };
            match v {
                Ok(v) => g[(row, col)] = v,
                Err(_) => return (comp.clone(), original, true),
            }
        }
    }
    let y = DVector::from_iterator(m, ds.targets.iter().map(|t| t[d]));
    match solve(g, &y) {
        Ok(c) => {
            let terms: Vec<Expr> = split
                .into_iter()
                .zip(&c)
                .map(|((_, basis), &c)| Expr::with_coefficient(c, basis))
                .collect();
            let e = if terms.len() == 1 {
                terms.into_iter().next().unwrap_or(Expr::Const(0.0))
            } else {
                Expr::Sum(terms)
            };
            (e.canonicalize(), c, false)
        }
        Err(_) => (comp.clone(), original, true),
    }
}

/// 2-norm condition number from singular values (`inf` when singular).
pub fn condition_number(singular_values: &[f64]) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    let min = singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn solve(g: DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    if g.nrows() < g.ncols() {
        return Err(Error::InvalidArgument("fewer samples than basis terms".into()));
    }
    let svd = g.svd(true, true);
    let cond = condition_number(svd.singular_values.as_slice());
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::InvalidArgument(format!("condition number {cond:e}")));
    }
    let c = svd.solve(y, 0.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite least-squares solution".into()));
    }
    Ok(c.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_system;
    use crate::maps::{sample_linspace, MapSpec};

    fn linear_data() -> Dataset {
        let spec = MapSpec::Custom(parse_system("2*x0").unwrap());
        sample_linspace(&spec, -1.0, 1.0, 21).unwrap()
    }

    #[test]
    fn exact_linear_fit() {
        let r = refine_expr(&parse_system("1.5*x0").unwrap(), &linear_data()).unwrap();
        assert!((r.coefficients[0][0] - 2.0).abs() < 1e-12);
        assert!(r.rss_after < 1e-24);
        assert!(!r.condition_flag);
    }

    #[test]
    fn singular_design_is_flagged() {
        let e = parse_system("1.5*x0 + 0.1*|x0|^1").unwrap();
        let spec = MapSpec::Custom(parse_system("2*x0").unwrap());
        let pos = sample_linspace(&spec, 0.1, 1.0, 21).unwrap();
        let r = refine_expr(&e, &pos).unwrap();
        assert!(r.condition_flag);
        assert_eq!(r.coefficients[0], vec![1.5, 0.1]);
        assert_eq!(r.expr, e);
    }

    #[test]
    fn refines_quadratic_logistic_form() {
        let ds = Dataset::from_trajectory(
            &MapSpec::logistic(),
            &crate::maps::StateVec::scalar(0.5).unwrap(),
            300,
        )
        .unwrap();
        let e = parse_system("3.874*x0 - 3.8735*|x0|^2").unwrap();
        let r = refine_expr(&e, &ds).unwrap();
        assert!(r.rss_after < r.rss_before);
        assert!(r.rss_after < 1e-20);
    }

    #[test]
    fn lone_term_refits_outer_coefficient() {
        let spec = MapSpec::gaussian();
        let ds = sample_linspace(&spec, -1.0, 1.0, 50).unwrap();
        let e = parse_system("1.2*exp(-12*|x0|^2) - 0.5").unwrap();
        let r = refine_expr(&e, &ds).unwrap();
        assert!((r.coefficients[0].iter().sum::<f64>() - 0.5).abs() < 1e-9);
        assert!(r.rss_after < 1e-20);
    }

    #[test]
    fn condition_numbers() {
        assert_eq!(condition_number(&[4.0, 2.0]), 2.0);
        assert_eq!(condition_number(&[1.0, 0.0]), f64::INFINITY);
    }
}
