//! Scoring identified expressions against data and against the generating map.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSystem};
use crate::maps::{Dataset, MapSpec, StateVec, DIVERGENCE_GUARD};

/// Gap used for shadowing counts unless configured otherwise.
pub const DEFAULT_SHADOW_GAP: f64 = 0.05;

/// JSON has no infinities; non-finite reals become the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn ser_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// RRMSE with the evaluation failure that forced an infinite score, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub value: f64,
    pub failure: Option<Error>,
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// `sqrt(sum ||expr(x) - y||^2 / sum ||y||^2)` over the dataset, with failure diagnostics.
pub fn rrmse_scored(expr: &ExprSystem, ds: &Dataset) -> Result<Scored> {
    crate::simplify::check_dims(expr, ds)?;
    let den: f64 = ds.targets.iter().map(|y| squared_norm(y)).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidArgument("RRMSE undefined for all-zero targets".into()));
    }
    let mut num = 0.0;
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        match expr.evaluate(x) {
            Ok(p) => num += p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            Err(e) => {
                return Ok(Scored {
                    value: f64::INFINITY,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(Scored {
        value: (num / den).sqrt(),
        failure: None,
    })
}

pub fn rrmse(expr: &ExprSystem, ds: &Dataset) -> Result<f64> {
    rrmse_scored(expr, ds).map(|s| s.value)
}

/// RRMSE of one output component against the matching target dimension.
pub fn component_rrmse(e: &Expr, ds: &Dataset, dim: usize) -> Result<f64> {
    if dim >= ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            actual: dim + 1,
        });
    }
    let den: f64 = ds.targets.iter().map(|y| y[dim] * y[dim]).sum();
    if !(den > 0.0) {
        return Err(Error::InvalidArgument("RRMSE undefined for all-zero targets".into()));
    }
    let mut num = 0.0;
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        match e.evaluate(x) {
            Ok(p) => num += (p - y[dim]) * (p - y[dim]),
            Err(_) => return Ok(f64::INFINITY),
        }
    }
    Ok((num / den).sqrt())
}

/// RRMSE floor: the generating map's own score on the (possibly noisy) dataset.
pub fn true_rrmse(spec: &MapSpec, ds: &Dataset) -> Result<f64> {
    rrmse(&spec.expr(), ds)
}

/// RRMSE of `expr` against the noise-free map outputs at the dataset's inputs.
pub fn clean_target_rrmse(expr: &ExprSystem, spec: &MapSpec, ds: &Dataset) -> Result<f64> {
    let mut clean = ds.clone();
    clean.targets = ds
        .inputs
        .iter()
        .map(|x| spec.step(x))
        .collect::<Result<_>>()?;
    rrmse(expr, &clean)
}

/// Mean over samples of `||expr(x) - y||_1`.
pub fn expr_mae(expr: &ExprSystem, ds: &Dataset) -> Result<f64> {
    crate::simplify::check_dims(expr, ds)?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut total = 0.0;
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        match expr.evaluate(x) {
            Ok(p) => total += p.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            Err(_) => return Ok(f64::INFINITY),
        }
    }
    Ok(total / ds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shadow {
    pub shadow_steps: usize,
    pub escaped: bool,
}

/// Paired iterates of the identified and true maps from the same start. Rows after the
/// identified model escapes (or fails to evaluate) are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub truth: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
    pub escaped: bool,
}

pub fn trajectory_pair(expr: &ExprSystem, spec: &MapSpec, x0: &StateVec, steps: usize) -> Result<TrajectoryPair> {
    if expr.dim() != spec.dim() || x0.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: expr.dim(),
        });
    }
    let mut truth = vec![x0.as_slice().to_vec()];
    let mut model = vec![x0.as_slice().to_vec()];
    let mut t = x0.clone();
    let mut escaped = false;
    let mut true_alive = true;
    for _ in 0..steps {
        if true_alive {
            match spec.step(&t) {
                Ok(next) if !next.escaped() => {
                    truth.push(next.as_slice().to_vec());
                    t = next;
                }
                _ => true_alive = false,
            }
        }
        if !escaped {
            let last = model.last().map(Vec::as_slice).unwrap_or_default();
            match expr.evaluate(last) {
                Ok(next) if next.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_GUARD) => {
                    model.push(next);
                }
                _ => escaped = true,
            }
        }
        if escaped && !true_alive {
            break;
        }
    }
    Ok(TrajectoryPair { truth, model, escaped })
}

/// Largest `s <= steps` with every iterate up to `s` within `gap` (infinity norm) of the
/// true trajectory, plus whether the identified trajectory left the divergence guard.
pub fn shadow(expr: &ExprSystem, spec: &MapSpec, x0: &StateVec, steps: usize, gap: f64) -> Result<Shadow> {
    if steps == 0 || !(gap > 0.0) {
        return Err(Error::InvalidArgument("shadowing needs steps >= 1 and gap > 0".into()));
    }
    let pair = trajectory_pair(expr, spec, x0, steps)?;
    let mut s = 0;
    for i in 1..=steps {
        let (Some(a), Some(b)) = (pair.truth.get(i), pair.model.get(i)) else {
            break;
        };
        let d = a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if !(d <= gap) {
            break;
        }
        s = i;
    }
    Ok(Shadow {
        shadow_steps: s,
        escaped: pair.escaped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitRow {
    pub x: Vec<f64>,
    pub output: usize,
    pub truth: f64,
    pub model: f64,
    pub failed: bool,
}

/// Grid evaluation of the true map and an identified expression over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Portrait {
    pub n: usize,
    pub rows: Vec<PortraitRow>,
}

impl Portrait {
    /// `x0[,x1...],output,true,model,failed`
    pub fn to_csv(&self, provenance: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(p) = provenance {
            let _ = writeln!(s, "# {p}");
        }
        for j in 0..self.n {
            let _ = write!(s, "x{j},");
        }
        s.push_str("output,true,model,failed\n");
        for r in &self.rows {
            for v in &r.x {
                let _ = write!(s, "{v:.16e},");
            }
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{}",
                r.output,
                r.truth,
                r.model,
                u8::from(r.failed)
            );
        }
        s
    }
}

fn grid_axis(lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    (0..grid)
        .map(|i| {
            if i + 1 == grid {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (grid - 1) as f64
            }
        })
        .collect()
}

/// Rows ordered by output dimension, then lexicographically over the grid (first
/// coordinate outermost).
pub fn export_portrait(expr: &ExprSystem, spec: &MapSpec, domain: &[(f64, f64)], grid: usize) -> Result<Portrait> {
    let n = spec.dim();
    if grid < 2 {
        return Err(Error::InvalidArgument("portrait grid needs at least 2 points".into()));
    }
    if domain.len() != n || expr.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: domain.len(),
        });
    }
    if domain.iter().any(|&(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidArgument("portrait domain must be finite with lo <= hi".into()));
    }
    let axes: Vec<Vec<f64>> = domain.iter().map(|&(lo, hi)| grid_axis(lo, hi, grid)).collect();
    let total = grid.pow(n as u32);
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut k| {
            let mut x = vec![0.0; n];
            for j in (0..n).rev() {
                x[j] = axes[j][k % grid];
                k /= grid;
            }
            x
        })
        .collect();
    let truth_expr = spec.expr();
    let mut rows = Vec::with_capacity(total * n);
    for d in 0..n {
        for x in &points {
            let t = truth_expr.components[d].evaluate(x);
            let m = expr.components[d].evaluate(x);
            let failed = t.is_err() || m.is_err();
            rows.push(PortraitRow {
                x: x.clone(),
                output: d,
                truth: t.unwrap_or(f64::NAN),
                model: m.unwrap_or(f64::NAN),
                failed,
            });
        }
    }
    Ok(Portrait { n, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(serialize_with = "ser_real")]
    pub rrmse: f64,
    #[serde(serialize_with = "ser_real")]
    pub true_rrmse: f64,
    #[serde(serialize_with = "ser_real")]
    pub val_mae: f64,
    pub shadow_steps: usize,
    pub escaped: bool,
}

/// Scores `expr` on `ds`, measures the floor of the generating map on the same data, and
/// shadows from `x0`.
pub fn evaluate(
    expr: &ExprSystem,
    spec: &MapSpec,
    ds: &Dataset,
    x0: &StateVec,
    steps: usize,
    gap: f64,
) -> Result<EvalReport> {
    let sh = shadow(expr, spec, x0, steps, gap)?;
    Ok(EvalReport {
        rrmse: rrmse(expr, ds)?,
        true_rrmse: true_rrmse(spec, ds)?,
        val_mae: expr_mae(expr, ds)?,
        shadow_steps: sh.shadow_steps,
        escaped: sh.escaped,
    })
}
