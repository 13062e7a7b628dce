//! Threshold-swept constant snapping, AIC model selection, and least-squares refinement of
//! linearly entering coefficients.

mod ols;
mod tidy;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::ser_real;
use crate::expr::{Expr, ExprSystem};
use crate::maps::Dataset;
use crate::par::{self, ExecMode};

pub use ols::{condition_number, ols_refine, refine_expr, RefinedModel, CONDITION_LIMIT};
pub use tidy::{tidy, NEGLIGIBLE_TERM};

pub const THRESHOLD_COUNT: usize = 11;
pub const MAX_DENOMINATOR: i64 = 16;

/// `10^(-2 + 0.2 i)` for `i = 0..=10`.
pub fn thresholds() -> Vec<f64> {
    (0..THRESHOLD_COUNT)
        .map(|i| 10f64.powf(-2.0 + 0.2 * i as f64))
        .collect()
}

/// Closest `p/q` with `1 <= q <= 16`; ties keep the smaller denominator.
pub fn nearest_rational(c: f64) -> f64 {
    let mut best = c.round();
    let mut best_err = (c - best).abs();
    for q in 2..=MAX_DENOMINATOR {
        let qf = q as f64;
        let cand = (c * qf).round() / qf;
        let err = (c - cand).abs();
        if err < best_err {
            best = cand;
            best_err = err;
        }
    }
    best
}

fn snap_constant(c: f64, t: f64) -> f64 {
    if !c.is_finite() {
        return c;
    }
    let r = nearest_rational(c);
    if (c - r).abs() <= t * c.abs().max(1.0) {
        r
    } else {
        c
    }
}

fn snap_expr(e: &Expr, t: f64) -> Expr {
    let e = e.canonicalize();
    let kept: Vec<Expr> = e
        .terms()
        .into_iter()
        .filter(|term| term.split_coefficient().0.abs() > t)
        .cloned()
        .collect();
    let pruned = match kept.len() {
        0 => Expr::Const(0.0),
        1 => kept.into_iter().next().unwrap_or(Expr::Const(0.0)),
        _ => Expr::Sum(kept),
    };
    pruned.map_constants(&mut |c| snap_constant(c, t)).canonicalize()
}

/// Drops top-level terms with `|coefficient| <= t`, then moves every remaining constant
/// onto the nearest small-denominator rational when it lies within `t * max(1, |c|)`.
pub fn snap(e: &ExprSystem, t: f64) -> ExprSystem {
    ExprSystem::new(e.components.iter().map(|c| snap_expr(c, t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AicScore {
    #[serde(serialize_with = "ser_real")]
    pub aic: f64,
    #[serde(serialize_with = "ser_real")]
    pub rss: f64,
    pub k: usize,
}

/// Sum of squared residuals over all samples and output dimensions.
pub fn rss(expr: &ExprSystem, ds: &Dataset) -> Result<f64> {
    check_dims(expr, ds)?;
    let mut total = 0.0;
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        let p = expr.evaluate(x)?;
        total += p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total)
}

pub(crate) fn check_dims(expr: &ExprSystem, ds: &Dataset) -> Result<()> {
    if expr.dim() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            actual: expr.dim(),
        });
    }
    if let Some(v) = expr.components.iter().filter_map(Expr::max_var).max() {
        if v >= ds.dim() {
            return Err(Error::InvalidArgument(format!(
                "expression uses x{v} but data has {} state variables",
                ds.dim()
            )));
        }
    }
    Ok(())
}

/// `2k + M ln(RSS/M)` with `k` the constant count plus one noise parameter. A perfect fit
/// scores `-inf`; an expression that fails to evaluate anywhere scores `+inf`.
pub fn aic(expr: &ExprSystem, ds: &Dataset) -> Result<AicScore> {
    if ds.len() < 2 {
        return Err(Error::InvalidArgument("AIC needs at least 2 samples".into()));
    }
    check_dims(expr, ds)?;
    let k = expr.count_constants() + 1;
    let m = ds.len() as f64;
    Ok(match rss(expr, ds) {
        Ok(0.0) => AicScore {
            aic: f64::NEG_INFINITY,
            rss: 0.0,
            k,
        },
        Ok(r) if r.is_finite() => AicScore {
            aic: 2.0 * k as f64 + m * (r / m).ln(),
            rss: r,
            k,
        },
        _ => AicScore {
            aic: f64::INFINITY,
            rss: f64::INFINITY,
            k,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub threshold: f64,
    pub expr: ExprSystem,
    pub score: AicScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplificationResult {
    pub candidates: Vec<Candidate>,
    pub chosen: usize,
}

impl SimplificationResult {
    pub fn thresholds(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.threshold).collect()
    }

    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.chosen]
    }

    pub fn chosen_expr(&self) -> &ExprSystem {
        &self.candidates[self.chosen].expr
    }
}

/// Index of the smallest AIC; equal scores resolve to the later (larger-threshold) entry.
pub fn argmin_aic(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in scores.iter().enumerate() {
        if a == f64::INFINITY || a.is_nan() {
            continue;
        }
        if best.is_none_or(|b| a <= scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn select(e: &ExprSystem, ds: &Dataset) -> Result<SimplificationResult> {
    select_with(e, ds, ExecMode::default())
}

pub fn select_with(e: &ExprSystem, ds: &Dataset, mode: ExecMode) -> Result<SimplificationResult> {
    check_dims(e, ds)?;
    let ts = thresholds();
    let candidates = par::map(&ts, mode, |&t| {
        let expr = snap(e, t);
        aic(&expr, ds).map(|score| Candidate {
            threshold: t,
            expr,
            score,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = candidates.iter().map(|c| c.score.aic).collect();
    let chosen = argmin_aic(&scores).ok_or(Error::AllCandidatesDisqualified)?;
    Ok(SimplificationResult { candidates, chosen })
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateRecord {
    pub threshold: f64,
    pub expression_text: String,
    pub k: usize,
    #[serde(serialize_with = "ser_real")]
    pub rss: f64,
    #[serde(serialize_with = "ser_real")]
    pub aic: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplificationReport {
    pub candidates: Vec<CandidateRecord>,
    pub chosen_threshold: f64,
    pub refined_expression_text: String,
    #[serde(serialize_with = "ser_real")]
    pub rss_before: f64,
    #[serde(serialize_with = "ser_real")]
    pub rss_after: f64,
    pub condition_flag: bool,
}

impl SimplificationReport {
    pub fn new(sr: &SimplificationResult, refined: &RefinedModel) -> Self {
        Self {
            candidates: sr
                .candidates
                .iter()
                .map(|c| CandidateRecord {
                    threshold: c.threshold,
                    expression_text: c.expr.to_string(),
                    k: c.score.k,
                    rss: c.score.rss,
                    aic: c.score.aic,
                })
                .collect(),
            chosen_threshold: sr.chosen().threshold,
            refined_expression_text: refined.expr.to_string(),
            rss_before: refined.rss_before,
            rss_after: refined.rss_after,
            condition_flag: refined.condition_flag,
        }
    }
}
