//! Full-batch Adam training with a triangular cyclic learning rate, k-fold validation, and
//! multi-instance restarts.

mod adam;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{assign_folds, Dataset};
use crate::netcore::{init_params, loss_and_gradient, mae, Batch, LossBreakdown, NetworkConfig, NetworkParams};
pub use crate::netcore::PenaltyScale;
use crate::par::{self, ExecMode};
use crate::rng::derive_seed;

pub use adam::{Adam, AdamConfig};

/// Regularization weights of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphas {
    pub half: f64,
    pub poly: f64,
    pub ops: f64,
}

impl Default for Alphas {
    fn default() -> Self {
        Self {
            half: 0.05,
            poly: 0.01,
            ops: 0.0375,
        }
    }
}

impl Alphas {
    pub const ZERO: Alphas = Alphas {
        half: 0.0,
        poly: 0.0,
        ops: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub folds: usize,
    pub instances: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Length of one full triangle of the learning-rate wave.
    pub cycle_epochs: usize,
    pub alphas: Alphas,
    /// Network-wide aggregation of each penalty family.
    pub penalty_scale: PenaltyScale,
    pub adam: AdamConfig,
    pub base_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            folds: 5,
            instances: 20,
            lr_min: 28e-3,
            lr_max: 36e-3,
            cycle_epochs: 1000,
            alphas: Alphas::default(),
            penalty_scale: PenaltyScale::default(),
            adam: AdamConfig::default(),
            base_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.lr_min > 0.0) || self.lr_min > self.lr_max || !self.lr_max.is_finite() {
            return bad("need 0 < lr_min <= lr_max");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.instances == 0 {
            return bad("need at least 1 instance");
        }
        if self.cycle_epochs < 2 {
            return bad("cycle_epochs must be at least 2");
        }
        Ok(())
    }
}

/// Triangular wave: `lr_min` at the start of each cycle, `lr_max` at its midpoint.
pub fn cyclic_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let cycle = cfg.cycle_epochs.max(2) as f64;
    let half = cycle / 2.0;
    let pos = (epoch as f64) % cycle;
    let frac = if pos <= half {
        pos / half
    } else {
        (cycle - pos) / half
    };
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Regularized loss on the training folds, before this epoch's update.
    pub train: LossBreakdown,
    /// Unregularized MAE on the validation fold, before this epoch's update.
    pub val_mae: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Snapshot with the lowest validation MAE seen.
    pub params: NetworkParams,
    pub best_val_mae: f64,
    /// Epoch whose parameters produced `best_val_mae` (`epochs` means after the last update).
    pub convergence_epoch: usize,
    pub fold_id: usize,
    pub instance_id: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    /// `epoch,train_mae,val_mae,l_half,l_poly,l_ops,total,lr`
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_mae,val_mae,l_half,l_poly,l_ops,total,lr\n");
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.epoch,
                r.train.mae,
                r.val_mae,
                r.train.l_half,
                r.train.l_poly,
                r.train.l_ops,
                r.train.total,
                r.lr
            );
        }
        s
    }
}

/// Trains on every fold except `fold`, validating on `fold` each epoch, from fresh weights
/// drawn with `seed`.
pub fn train_fold(
    cfg_net: &NetworkConfig,
    cfg_train: &TrainConfig,
    ds: &Dataset,
    fold: usize,
    seed: u64,
) -> Result<TrainedModel> {
    train_fold_from(cfg_net, cfg_train, ds, fold, init_params(cfg_net, seed), seed)
}

/// As [`train_fold`] but starting from the given weights.
pub fn train_fold_from(
    cfg_net: &NetworkConfig,
    cfg_train: &TrainConfig,
    ds: &Dataset,
    fold: usize,
    init: NetworkParams,
    seed: u64,
) -> Result<TrainedModel> {
    if fold >= ds.folds {
        return Err(Error::InvalidArgument(format!(
            "fold {fold} out of range for {} folds",
            ds.folds
        )));
    }
    let train_idx = ds.complement_indices(fold);
    let val_idx = ds.fold_indices(fold);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidArgument(format!("fold {fold} leaves an empty split")));
    }
    let train = Batch::from_indices(ds, &train_idx);
    let val = Batch::from_indices(ds, &val_idx);

    let mut params = init;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(cfg_train.adam, flat.len());
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut history = Vec::with_capacity(cfg_train.epochs);

    for epoch in 0..cfg_train.epochs {
        let val_mae = mae(cfg_net, &params, &val)?;
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params.clone_from(&params);
        }
        let (loss, grad) = loss_and_gradient(cfg_net, &params, &train, cfg_train.alphas, cfg_train.penalty_scale)?;
        let lr = cyclic_lr(epoch, cfg_train);
        history.push(EpochRecord {
            epoch,
            train: loss,
            val_mae,
            lr,
        });
        adam.step(&mut flat, &grad.to_flat(), lr);
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { stack: 0, layer: 0 });
        }
        params.set_flat(&flat);
    }
    let final_val = mae(cfg_net, &params, &val)?;
    if final_val < best_val {
        best_val = final_val;
        best_epoch = cfg_train.epochs;
        best_params = params;
    }

    Ok(TrainedModel {
        params: best_params,
        best_val_mae: best_val,
        convergence_epoch: best_epoch,
        fold_id: fold,
        instance_id: 0,
        seed,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFailure {
    pub instance_id: usize,
    pub reason: String,
}

/// Outcome of a multi-instance run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Best fold model of every instance that produced one, by ascending validation MAE.
    pub models: Vec<TrainedModel>,
    pub failures: Vec<InstanceFailure>,
}

/// Folds are reshuffled with `base_seed + instance`.
pub fn instance_dataset(ds: &Dataset, cfg_train: &TrainConfig, instance: usize) -> Result<Dataset> {
    assign_folds(ds, cfg_train.folds, cfg_train.base_seed.wrapping_add(instance as u64))
}

/// Seed of the initial weights for one `(instance, fold)` work unit.
pub fn unit_seed(cfg_train: &TrainConfig, instance: usize, fold: usize) -> u64 {
    derive_seed(cfg_train.base_seed, &[instance as u64, fold as u64])
}

pub fn sweep(
    cfg_net: &NetworkConfig,
    cfg_train: &TrainConfig,
    ds: &Dataset,
    mode: ExecMode,
) -> Result<Sweep> {
    cfg_net.validate()?;
    cfg_train.validate()?;
    let datasets: Vec<Dataset> = (0..cfg_train.instances)
        .map(|i| instance_dataset(ds, cfg_train, i))
        .collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> = (0..cfg_train.instances)
        .flat_map(|i| (0..cfg_train.folds).map(move |f| (i, f)))
        .collect();
    let results = par::map(&units, mode, |&(i, f)| {
        train_fold(cfg_net, cfg_train, &datasets[i], f, unit_seed(cfg_train, i, f)).map(|mut m| {
            m.instance_id = i;
            m
        })
    });

    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (i, chunk) in results.chunks(cfg_train.folds).enumerate() {
        let mut best: Option<&TrainedModel> = None;
        let mut first_err = None;
        for r in chunk {
            match r {
                Ok(m) => {
                    if best.is_none_or(|b| m.best_val_mae < b.best_val_mae) {
                        best = Some(m);
                    }
                }
                Err(e) => {
                    first_err.get_or_insert_with(|| e.to_string());
                }
            }
        }
        match best {
            Some(m) => models.push(m.clone()),
            None => failures.push(InstanceFailure {
                instance_id: i,
                reason: first_err.unwrap_or_default(),
            }),
        }
    }
    models.sort_by(|a, b| {
        a.best_val_mae
            .total_cmp(&b.best_val_mae)
            .then(a.instance_id.cmp(&b.instance_id))
    });
    Ok(Sweep { models, failures })
}

/// One best-fold model per successful instance, sorted by validation MAE.
pub fn run_instances(
    cfg_net: &NetworkConfig,
    cfg_train: &TrainConfig,
    ds: &Dataset,
) -> Result<Vec<TrainedModel>> {
    let s = sweep(cfg_net, cfg_train, ds, ExecMode::default())?;
    if s.models.is_empty() {
        return Err(Error::AllInstancesFailed);
    }
    Ok(s.models)
}
