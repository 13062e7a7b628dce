//! Ground-truth iterated maps and the datasets sampled from them.

use std::fmt::Write as _;
use std::ops::Deref;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr, ExprSystem};
use crate::rng;

/// Iterates leaving `[-GUARD, GUARD]^n` are treated as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("state vector must be non-empty".into()));
        }
        if let Some(i) = components.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "state component {i} is not finite"
            )));
        }
        Ok(Self(components))
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![v])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// True when any component is non-finite or outside the divergence guard.
    pub fn escaped(&self) -> bool {
        self.0.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD)
    }
}

impl Deref for StateVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// `x' = r x (1 - x)`
    Logistic { r: f64 },
    /// `x' = exp(-alpha x^2) + beta`
    Gaussian { alpha: f64, beta: f64 },
    /// `x' = x^2 - y^2 + a x + b y`, `y' = 2 x y + c x + d y`
    Tinkerbell { a: f64, b: f64, c: f64, d: f64 },
    Custom(ExprSystem),
}

impl MapSpec {
    pub fn logistic() -> Self {
        MapSpec::Logistic { r: 3.9 }
    }

    pub fn gaussian() -> Self {
        MapSpec::Gaussian {
            alpha: 12.0,
            beta: -0.5,
        }
    }

    pub fn tinkerbell() -> Self {
        MapSpec::Tinkerbell {
            a: 0.9,
            b: -0.6013,
            c: 2.0,
            d: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSpec::Logistic { .. } | MapSpec::Gaussian { .. } => 1,
            MapSpec::Tinkerbell { .. } => 2,
            MapSpec::Custom(sys) => sys.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let params: Vec<f64> = match self {
            MapSpec::Logistic { r } => vec![*r],
            MapSpec::Gaussian { alpha, beta } => vec![*alpha, *beta],
            MapSpec::Tinkerbell { a, b, c, d } => vec![*a, *b, *c, *d],
            MapSpec::Custom(sys) => {
                if sys.dim() == 0 {
                    return Err(Error::InvalidArgument("custom map has no components".into()));
                }
                if let Some(v) = sys.components.iter().filter_map(Expr::max_var).max() {
                    if v >= sys.dim() {
                        return Err(Error::InvalidArgument(format!(
                            "custom map uses x{v} but has only {} components",
                            sys.dim()
                        )));
                    }
                }
                vec![]
            }
        };
        if params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("map parameters must be finite".into()))
        }
    }

    /// Applies the map once. Built-in maps are evaluated through their expression form, so a
    /// dataset generated here is reproduced exactly by [`MapSpec::expr`].
    pub fn step(&self, x: &StateVec) -> Result<StateVec> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        apply_system(&self.expr(), x)
    }

    /// The map written as an expression system.
    pub fn expr(&self) -> ExprSystem {
        let text = match self {
            MapSpec::Logistic { r } => vec![format!("{r:?}*x0 - {r:?}*x0^2")],
            MapSpec::Gaussian { alpha, beta } => {
                vec![format!("exp(-{alpha:?}*x0^2) + {beta:?}")]
            }
            MapSpec::Tinkerbell { a, b, c, d } => vec![
                format!("x0^2 - x1^2 + {a:?}*x0 + {b:?}*x1"),
                format!("2*x0*x1 + {c:?}*x0 + {d:?}*x1"),
            ],
            MapSpec::Custom(sys) => return sys.clone(),
        };
        ExprSystem::new(
            text.iter()
                .map(|t| expr::parse(t).expect("built-in map text parses"))
                .collect(),
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapSpec::Logistic { .. } => "logistic",
            MapSpec::Gaussian { .. } => "gaussian",
            MapSpec::Tinkerbell { .. } => "tinkerbell",
            MapSpec::Custom(_) => "custom",
        }
    }
}

fn apply_system(sys: &ExprSystem, x: &StateVec) -> Result<StateVec> {
    let out = sys.components.iter().map(|c| c.evaluate(x)).collect::<Result<_>>()?;
    Ok(StateVec(out))
}

/// `[x0, f(x0), f(f(x0)), ...]`, `steps + 1` states long.
pub fn generate_trajectory(spec: &MapSpec, x0: &StateVec, steps: usize) -> Result<Vec<StateVec>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if x0.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            actual: x0.dim(),
        });
    }
    let sys = spec.expr();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for step in 1..=steps {
        let next = apply_system(&sys, &out[step - 1])?;
        if next.escaped() {
            return Err(Error::TrajectoryEscaped { step });
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise standard deviation relative to the per-dimension RMS of the clean states.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    Trajectory { x0: StateVec, steps: usize },
    LinSpace { lo: f64, hi: f64, m: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<StateVec>,
    pub targets: Vec<StateVec>,
    pub fold_ids: Vec<usize>,
    pub folds: usize,
    pub sampling: Sampling,
    pub noise: NoiseConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, StateVec::dim)
    }

    /// Consecutive pairs `(x_t, x_{t+1})` of a trajectory of `steps + 1` states.
    pub fn from_trajectory(spec: &MapSpec, x0: &StateVec, steps: usize) -> Result<Self> {
        let traj = generate_trajectory(spec, x0, steps)?;
        let inputs = traj[..steps].to_vec();
        let targets = traj[1..].to_vec();
        Ok(Self {
            fold_ids: vec![0; inputs.len()],
            inputs,
            targets,
            folds: 1,
            sampling: Sampling::Trajectory {
                x0: x0.clone(),
                steps,
            },
            noise: NoiseConfig::none(),
        })
    }

    /// Consecutive pairs of an already generated (possibly noisy) state sequence.
    pub fn from_states(states: &[StateVec]) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::InvalidArgument("need at least two states".into()));
        }
        let n = states[0].dim();
        if let Some(bad) = states.iter().find(|s| s.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.dim(),
            });
        }
        let steps = states.len() - 1;
        Ok(Self {
            inputs: states[..steps].to_vec(),
            targets: states[1..].to_vec(),
            fold_ids: vec![0; steps],
            folds: 1,
            sampling: Sampling::Trajectory {
                x0: states[0].clone(),
                steps,
            },
            noise: NoiseConfig::none(),
        })
    }

    /// Indices of the points in `fold`.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_ids[i] == fold).collect()
    }

    /// Indices of the points outside `fold`.
    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_ids[i] != fold).collect()
    }

    /// Per-dimension root mean square of the inputs.
    pub fn input_rms(&self) -> Vec<f64> {
        rms(&self.inputs)
    }

    /// A copy restricted to `indices` (fold assignment collapses to a single fold).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            fold_ids: vec![0; indices.len()],
            folds: 1,
            sampling: self.sampling.clone(),
            noise: self.noise,
        }
    }
}

fn rms(states: &[StateVec]) -> Vec<f64> {
    let n = states.first().map_or(0, StateVec::dim);
    let m = states.len() as f64;
    (0..n)
        .map(|j| (states.iter().map(|s| s[j] * s[j]).sum::<f64>() / m).sqrt())
        .collect()
}

/// `m` evenly spaced inputs over `[lo, hi]` (both endpoints included) with exact targets.
pub fn sample_linspace(spec: &MapSpec, lo: f64, hi: f64, m: usize) -> Result<Dataset> {
    if spec.dim() != 1 {
        return Err(Error::InvalidArgument(
            "linspace sampling is only supported for one-dimensional maps".into(),
        ));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "linspace needs finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    if m < 2 {
        return Err(Error::InvalidArgument("linspace needs at least 2 points".into()));
    }
    let step = (hi - lo) / (m - 1) as f64;
    let mut inputs = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for i in 0..m {
        let x = if i == m - 1 { hi } else { lo + step * i as f64 };
        let x = StateVec::scalar(x)?;
        targets.push(spec.step(&x)?);
        inputs.push(x);
    }
    Ok(Dataset {
        fold_ids: vec![0; m],
        inputs,
        targets,
        folds: 1,
        sampling: Sampling::LinSpace { lo, hi, m },
        noise: NoiseConfig::none(),
    })
}

/// Perturbs every state component with `N(0, sigma * RMS_j)`, `RMS_j` taken over the clean
/// inputs per dimension.
///
/// Trajectory datasets perturb the underlying state stream once, so `inputs[m + 1]` and
/// `targets[m]` stay the same noisy state. Linspace datasets perturb inputs and targets
/// independently.
pub fn add_noise(ds: &Dataset, cfg: NoiseConfig) -> Result<Dataset> {
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and non-negative, got {}",
            cfg.sigma
        )));
    }
    if cfg.sigma == 0.0 {
        return Ok(ds.clone());
    }
    let scale: Vec<f64> = ds.input_rms().iter().map(|r| r * cfg.sigma).collect();
    let mut g = rng::Gaussian::new(cfg.seed);
    let mut perturb = |s: &StateVec| -> StateVec {
        StateVec(
            s.iter()
                .zip(&scale)
                .map(|(v, sd)| v + g.sample(0.0, *sd))
                .collect(),
        )
    };
    let mut out = ds.clone();
    let is_stream = matches!(ds.sampling, Sampling::Trajectory { .. })
        && ds.inputs.windows(2).zip(&ds.targets).all(|(w, t)| w[1] == *t);
    if is_stream {
        let mut stream: Vec<StateVec> = ds.inputs.iter().map(&mut perturb).collect();
        if let Some(last) = ds.targets.last() {
            stream.push(perturb(last));
        }
        out.inputs = stream[..ds.len()].to_vec();
        out.targets = stream[1..].to_vec();
    } else {
        out.inputs = ds.inputs.iter().map(&mut perturb).collect();
        out.targets = ds.targets.iter().map(&mut perturb).collect();
    }
    out.noise = cfg;
    Ok(out)
}

/// Shuffles the points and cuts the permutation into `folds` contiguous, balanced blocks.
pub fn assign_folds(ds: &Dataset, folds: usize, seed: u64) -> Result<Dataset> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let m = ds.len();
    if m < folds {
        return Err(Error::InvalidArgument(format!(
            "{m} points cannot fill {folds} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng::stream(seed));
    let mut fold_ids = vec![0; m];
    for (rank, &i) in perm.iter().enumerate() {
        // block boundaries at floor(k m / folds) give sizes floor(m/folds) or ceil(m/folds)
        fold_ids[i] = (rank * folds) / m;
    }
    let mut out = ds.clone();
    out.fold_ids = fold_ids;
    out.folds = folds;
    Ok(out)
}

fn full(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t,x0[,x1,...]` rows, one per state.
pub fn trajectory_csv(states: &[StateVec], provenance: Option<&str>) -> String {
    let n = states.first().map_or(0, StateVec::dim);
    let mut s = String::new();
    if let Some(p) = provenance {
        let _ = writeln!(s, "# {p}");
    }
    s.push('t');
    for j in 0..n {
        let _ = write!(s, ",x{j}");
    }
    s.push('\n');
    for (t, x) in states.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in x.iter() {
            let _ = write!(s, ",{}", full(*v));
        }
        s.push('\n');
    }
    s
}

/// `x0_in[,x1_in],x0_out[,x1_out],fold` rows, one per pair.
pub fn dataset_csv(ds: &Dataset, provenance: Option<&str>) -> String {
    let n = ds.dim();
    let mut s = String::new();
    if let Some(p) = provenance {
        let _ = writeln!(s, "# {p}");
    }
    let mut cols: Vec<String> = (0..n).map(|j| format!("x{j}_in")).collect();
    cols.extend((0..n).map(|j| format!("x{j}_out")));
    cols.push("fold".into());
    s.push_str(&cols.join(","));
    s.push('\n');
    for m in 0..ds.len() {
        let row: Vec<String> = ds.inputs[m]
            .iter()
            .chain(ds.targets[m].iter())
            .map(|v| full(*v))
            .collect();
        let _ = writeln!(s, "{},{}", row.join(","), ds.fold_ids[m]);
    }
    s
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_row(lineno: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("line {}: bad number `{f}`", lineno + 1))
            })
        })
        .collect()
}

/// Reads a dataset pair CSV. The sampling is recorded as a trajectory when consecutive pairs
/// chain, and as a linspace otherwise.
pub fn read_dataset_csv(text: &str) -> Result<Dataset> {
    let mut lines = data_lines(text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty dataset file".into()))?;
    let cols = header.split(',').count();
    if cols < 3 || (cols - 1) % 2 != 0 || !header.trim_end().ends_with("fold") {
        return Err(Error::InvalidArgument(format!(
            "unexpected dataset header `{header}`"
        )));
    }
    let n = (cols - 1) / 2;
    let mut ds = Dataset {
        inputs: Vec::new(),
        targets: Vec::new(),
        fold_ids: Vec::new(),
        folds: 1,
        sampling: Sampling::LinSpace {
            lo: 0.0,
            hi: 0.0,
            m: 0,
        },
        noise: NoiseConfig::none(),
    };
    for (lineno, line) in lines {
        let row = parse_row(lineno, line)?;
        if row.len() != cols {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected {cols} fields",
                lineno + 1
            )));
        }
        ds.inputs.push(StateVec::new(row[..n].to_vec())?);
        ds.targets.push(StateVec::new(row[n..2 * n].to_vec())?);
        ds.fold_ids.push(row[2 * n] as usize);
    }
    if ds.is_empty() {
        return Err(Error::InvalidArgument("dataset file has no rows".into()));
    }
    ds.folds = ds.fold_ids.iter().max().map_or(1, |m| m + 1);
    let chained = ds.inputs.windows(2).zip(&ds.targets).all(|(w, t)| w[1] == *t);
    ds.sampling = if chained {
        Sampling::Trajectory {
            x0: ds.inputs[0].clone(),
            steps: ds.len(),
        }
    } else {
        let lo = ds.inputs.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
        let hi = ds.inputs.iter().map(|x| x[0]).fold(f64::NEG_INFINITY, f64::max);
        Sampling::LinSpace { lo, hi, m: ds.len() }
    };
    Ok(ds)
}

/// Reads a trajectory CSV (`t,x0,...`) into states.
pub fn read_trajectory_csv(text: &str) -> Result<Vec<StateVec>> {
    let mut lines = data_lines(text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory file".into()))?;
    if !header.starts_with("t,") {
        return Err(Error::InvalidArgument(format!(
            "unexpected trajectory header `{header}`"
        )));
    }
    lines
        .map(|(lineno, line)| {
            let row = parse_row(lineno, line)?;
            StateVec::new(row[1..].to_vec())
        })
        .collect()
}
