use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::{parse, ExprSystem, Precision, UnaryOp};
use crate::maps::{MapSpec, Sampling, StateVec};
use crate::netcore::{NetworkConfig, PenaltyScale};
use crate::train::TrainConfig;

/// Preset names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 4] = ["logistic", "gaussian", "gaussian-wide", "tinkerbell"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    /// Run least-squares refinement after AIC selection.
    pub refine: bool,
    /// Refine only the instance that wins selection; otherwise every instance is refined
    /// and selection ranks refined expressions.
    pub refine_best_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub shadow_x0: StateVec,
    pub shadow_steps: usize,
    pub shadow_gap: f64,
    /// Points per axis of the exported portrait.
    pub portrait_grid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub map: MapSpec,
    pub sampling: Sampling,
    pub sigmas: Vec<f64>,
    pub network: NetworkConfig,
    /// Carries the base seed.
    pub train: TrainConfig,
    pub stages: Stages,
    pub eval: EvalSettings,
    pub output_dir: Option<PathBuf>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Full-scale defaults for one of [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let traj = |x0: Vec<f64>| -> Result<Sampling> {
            Ok(Sampling::Trajectory {
                x0: StateVec::new(x0)?,
                steps: 1000,
            })
        };
        let (map, sampling, network, lr) = match name {
            "logistic" => (
                MapSpec::logistic(),
                traj(vec![0.5])?,
                NetworkConfig::logistic(),
                (28e-3, 36e-3),
            ),
            "gaussian" => (
                MapSpec::gaussian(),
                traj(vec![0.0])?,
                NetworkConfig::gaussian(),
                (36e-3, 48e-3),
            ),
            "gaussian-wide" => (
                MapSpec::gaussian(),
                Sampling::LinSpace {
                    lo: -1.0,
                    hi: 1.0,
                    m: 1000,
                },
                NetworkConfig::gaussian(),
                (36e-3, 48e-3),
            ),
            "tinkerbell" => (
                MapSpec::tinkerbell(),
                traj(vec![-0.5, -0.5])?,
                NetworkConfig::tinkerbell(),
                (36e-3, 48e-3),
            ),
            other => {
                return Err(cfg_err(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let shadow_x0 = match &sampling {
            Sampling::Trajectory { x0, .. } => x0.clone(),
            Sampling::LinSpace { .. } => StateVec::new(vec![0.0; map.dim()])?,
        };
        Ok(Self {
            preset: name.to_string(),
            map,
            sampling,
            sigmas: vec![0.0, 0.01, 0.05],
            network,
            train: TrainConfig {
                lr_min: lr.0,
                lr_max: lr.1,
                ..TrainConfig::default()
            },
            stages: Stages {
                refine: true,
                refine_best_only: false,
            },
            eval: EvalSettings {
                shadow_x0,
                shadow_steps: 100,
                shadow_gap: crate::eval::DEFAULT_SHADOW_GAP,
                portrait_grid: 201,
            },
            output_dir: None,
        })
    }

    pub fn base_seed(&self) -> u64 {
        self.train.base_seed
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        if self.sigmas.is_empty() {
            return Err(cfg_err("sigma list is empty"));
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(cfg_err("every sigma must be finite and non-negative"));
        }
        if self.network.n != self.map.dim() {
            return Err(cfg_err(format!(
                "network state dimension {} does not match the {}-dimensional map",
                self.network.n,
                self.map.dim()
            )));
        }
        if self.eval.shadow_x0.dim() != self.map.dim() {
            return Err(cfg_err("eval.shadow_x0 has the wrong dimension"));
        }
        match &self.sampling {
            Sampling::Trajectory { x0, steps } => {
                if x0.dim() != self.map.dim() {
                    return Err(cfg_err("sampling.x0 has the wrong dimension"));
                }
                if *steps < self.train.folds {
                    return Err(cfg_err("too few samples for the fold count"));
                }
            }
            Sampling::LinSpace { lo, hi, m } => {
                if self.map.dim() != 1 {
                    return Err(cfg_err("linspace sampling needs a one-dimensional map"));
                }
                if !(lo < hi) || *m < self.train.folds {
                    return Err(cfg_err("linspace needs lo < hi and enough points"));
                }
            }
        }
        if self.eval.shadow_steps == 0 || !(self.eval.shadow_gap > 0.0) {
            return Err(cfg_err("shadowing needs steps >= 1 and gap > 0"));
        }
        if self.eval.portrait_grid < 2 {
            return Err(cfg_err("portrait grid needs at least 2 points"));
        }
        Ok(())
    }

    /// Parses flat `key = value` text. A `preset` key (default `logistic`) supplies every
    /// value not set explicitly; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", lineno + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key '{k}'", lineno + 1)));
            }
        }
        let preset = entries.remove("preset").unwrap_or_else(|| "logistic".into());
        let mut cfg = Self::preset(&preset)?;
        // the map choice decides which parameter keys are valid, so apply it first
        if let Some(v) = entries.remove("map") {
            cfg.set("map", &v)?;
        }
        if let Some(v) = entries.remove("sampling") {
            cfg.set("sampling", &v)?;
        }
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| cfg_err(format!("{key}: '{v}' is not a number")))
        };
        let count = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| cfg_err(format!("{key}: '{v}' is not a count")))
        };
        let flag = |v: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(cfg_err(format!("{key}: expected true or false"))),
            }
        };
        let list = |v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|p| num(p.trim())).collect()
        };
        match key {
            "map" => {
                self.map = match value {
                    "logistic" => MapSpec::logistic(),
                    "gaussian" => MapSpec::gaussian(),
                    "tinkerbell" => MapSpec::tinkerbell(),
                    "custom" => MapSpec::Custom(ExprSystem::new(vec![crate::Expr::Var(0)])),
                    _ => return Err(cfg_err(format!("unknown map '{value}'"))),
                }
            }
            "map.r" | "map.alpha" | "map.beta" | "map.a" | "map.b" | "map.c" | "map.d" => {
                let v = num(value)?;
                let slot = match (&mut self.map, key) {
                    (MapSpec::Logistic { r }, "map.r") => r,
                    (MapSpec::Gaussian { alpha, .. }, "map.alpha") => alpha,
                    (MapSpec::Gaussian { beta, .. }, "map.beta") => beta,
                    (MapSpec::Tinkerbell { a, .. }, "map.a") => a,
                    (MapSpec::Tinkerbell { b, .. }, "map.b") => b,
                    (MapSpec::Tinkerbell { c, .. }, "map.c") => c,
                    (MapSpec::Tinkerbell { d, .. }, "map.d") => d,
                    _ => return Err(cfg_err(format!("{key} does not apply to this map"))),
                };
                *slot = v;
            }
            "map.expr" => {
                let comps = value
                    .split(';')
                    .map(|p| parse(p.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.map = MapSpec::Custom(ExprSystem::new(comps));
            }
            "sampling" => {
                self.sampling = match value {
                    "trajectory" => match &self.sampling {
                        s @ Sampling::Trajectory { .. } => s.clone(),
                        Sampling::LinSpace { m, .. } => Sampling::Trajectory {
                            x0: StateVec::new(vec![0.0; self.map.dim()])?,
                            steps: *m,
                        },
                    },
                    "linspace" => match &self.sampling {
                        s @ Sampling::LinSpace { .. } => s.clone(),
                        Sampling::Trajectory { steps, .. } => Sampling::LinSpace {
                            lo: -1.0,
                            hi: 1.0,
                            m: *steps,
                        },
                    },
                    _ => return Err(cfg_err(format!("unknown sampling '{value}'"))),
                }
            }
            "sampling.x0" | "sampling.steps" => match &mut self.sampling {
                Sampling::Trajectory { x0, steps } => {
                    if key == "sampling.x0" {
                        *x0 = StateVec::new(list(value)?)?;
                    } else {
                        *steps = count(value)?;
                    }
                }
                _ => return Err(cfg_err(format!("{key} needs sampling = trajectory"))),
            },
            "sampling.lo" | "sampling.hi" | "sampling.m" => match &mut self.sampling {
                Sampling::LinSpace { lo, hi, m } => match key {
                    "sampling.lo" => *lo = num(value)?,
                    "sampling.hi" => *hi = num(value)?,
                    _ => *m = count(value)?,
                },
                _ => return Err(cfg_err(format!("{key} needs sampling = linspace"))),
            },
            "sigmas" => self.sigmas = list(value)?,
            "seed" => {
                self.train.base_seed = value
                    .parse()
                    .map_err(|_| cfg_err(format!("seed: '{value}' is not an integer")))?
            }
            "network.n" => self.network.n = count(value)?,
            "network.stacks" => self.network.stacks = count(value)?,
            "network.layers" => self.network.layers = count(value)?,
            "network.operators" => {
                self.network.operators = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        UnaryOp::from_name(s).ok_or_else(|| cfg_err(format!("unknown operator '{s}'")))
                    })
                    .collect::<Result<_>>()?
            }
            "network.width.linear" => self.network.widths.linear = count(value)?,
            "network.width.signomial" => self.network.widths.signomial = count(value)?,
            "network.width.operator" => self.network.widths.per_operator = count(value)?,
            "network.bias" => self.network.bias_value = num(value)?,
            "train.epochs" => self.train.epochs = count(value)?,
            "train.folds" => self.train.folds = count(value)?,
            "train.instances" => self.train.instances = count(value)?,
            "train.lr_min" => self.train.lr_min = num(value)?,
            "train.lr_max" => self.train.lr_max = num(value)?,
            "train.cycle_epochs" => self.train.cycle_epochs = count(value)?,
            "train.alpha.half" => self.train.alphas.half = num(value)?,
            "train.alpha.poly" => self.train.alphas.poly = num(value)?,
            "train.alpha.ops" => self.train.alphas.ops = num(value)?,
            "train.penalty_scale" => self.train.penalty_scale = value.parse()?,
            "train.adam.beta1" => self.train.adam.beta1 = num(value)?,
            "train.adam.beta2" => self.train.adam.beta2 = num(value)?,
            "train.adam.eps" => self.train.adam.eps = num(value)?,
            "stages.refine" => self.stages.refine = flag(value)?,
            "stages.refine_best_only" => self.stages.refine_best_only = flag(value)?,
            "eval.shadow_x0" => self.eval.shadow_x0 = StateVec::new(list(value)?)?,
            "eval.shadow_steps" => self.eval.shadow_steps = count(value)?,
            "eval.shadow_gap" => self.eval.shadow_gap = num(value)?,
            "eval.portrait_grid" => self.eval.portrait_grid = count(value)?,
            "output.dir" => self.output_dir = Some(PathBuf::from(value)),
            _ => return Err(cfg_err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every setting as `key = value` lines in a fixed order. Parsing the text gives back an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        kv("preset", self.preset.clone());
        match &self.map {
            MapSpec::Logistic { r } => {
                kv("map", "logistic".into());
                kv("map.r", r.to_string());
            }
            MapSpec::Gaussian { alpha, beta } => {
                kv("map", "gaussian".into());
                kv("map.alpha", alpha.to_string());
                kv("map.beta", beta.to_string());
            }
            MapSpec::Tinkerbell { a, b, c, d } => {
                kv("map", "tinkerbell".into());
                kv("map.a", a.to_string());
                kv("map.b", b.to_string());
                kv("map.c", c.to_string());
                kv("map.d", d.to_string());
            }
            MapSpec::Custom(sys) => {
                kv("map", "custom".into());
                let text = sys.to_text(Precision::Exact);
                kv("map.expr", text.lines().collect::<Vec<_>>().join("; "));
            }
        }
        match &self.sampling {
            Sampling::Trajectory { x0, steps } => {
                kv("sampling", "trajectory".into());
                kv("sampling.x0", join(x0));
                kv("sampling.steps", steps.to_string());
            }
            Sampling::LinSpace { lo, hi, m } => {
                kv("sampling", "linspace".into());
                kv("sampling.lo", lo.to_string());
                kv("sampling.hi", hi.to_string());
                kv("sampling.m", m.to_string());
            }
        }
        kv("sigmas", join(&self.sigmas));
        kv("seed", self.train.base_seed.to_string());
        let n = &self.network;
        kv("network.n", n.n.to_string());
        kv("network.stacks", n.stacks.to_string());
        kv("network.layers", n.layers.to_string());
        kv(
            "network.operators",
            n.operators.iter().map(|o| o.name()).collect::<Vec<_>>().join(", "),
        );
        kv("network.width.linear", n.widths.linear.to_string());
        kv("network.width.signomial", n.widths.signomial.to_string());
        kv("network.width.operator", n.widths.per_operator.to_string());
        kv("network.bias", n.bias_value.to_string());
        let t = &self.train;
        kv("train.epochs", t.epochs.to_string());
        kv("train.folds", t.folds.to_string());
        kv("train.instances", t.instances.to_string());
        kv("train.lr_min", t.lr_min.to_string());
        kv("train.lr_max", t.lr_max.to_string());
        kv("train.cycle_epochs", t.cycle_epochs.to_string());
        kv("train.alpha.half", t.alphas.half.to_string());
        kv("train.alpha.poly", t.alphas.poly.to_string());
        kv("train.alpha.ops", t.alphas.ops.to_string());
        kv(
            "train.penalty_scale",
            match t.penalty_scale {
                PenaltyScale::Sum => "sum",
                PenaltyScale::Mean => "mean",
            }
            .into(),
        );
        kv("train.adam.beta1", t.adam.beta1.to_string());
        kv("train.adam.beta2", t.adam.beta2.to_string());
        kv("train.adam.eps", t.adam.eps.to_string());
        kv("stages.refine", self.stages.refine.to_string());
        kv("stages.refine_best_only", self.stages.refine_best_only.to_string());
        kv("eval.shadow_x0", join(&self.eval.shadow_x0));
        kv("eval.shadow_steps", self.eval.shadow_steps.to_string());
        kv("eval.shadow_gap", self.eval.shadow_gap.to_string());
        kv("eval.portrait_grid", self.eval.portrait_grid.to_string());
        if let Some(d) = &self.output_dir {
            kv("output.dir", d.display().to_string());
        }
        s
    }

    /// SHA-256 of [`ExperimentConfig::to_text`] without the output directory, so moving the
    /// outputs does not change the hash.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
