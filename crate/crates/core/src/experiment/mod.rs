//! End-to-end experiments: data generation, training sweeps, simplification, scoring, and
//! report files.
//!
//! For each noise level the driver trains every instance, keeps each instance's best fold by
//! validation MAE, simplifies and (optionally) refines every survivor, and then picks the
//! instance whose finished expression has the lowest RRMSE on that instance's validation fold.

mod config;
pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Serialize, Serializer};

pub use config::{EvalSettings, ExperimentConfig, Stages, PRESETS};

use crate::error::{Error, Result};
use crate::eval::{self, ser_real};
use crate::expr::{ExprSystem, Precision};
use crate::maps::{self, add_noise, Dataset, MapSpec, NoiseConfig, Sampling};
use crate::netcore::extract;
use crate::par::{self, ExecMode};
use crate::rng::derive_seed;
use crate::simplify::{self, refine_expr};
use crate::train::{self, TrainedModel};
use svg::{Plot, Series, Style};

/// Stream tag separating noise seeds from every other use of the base seed.
const NOISE_TAG: u64 = 0x006e_6f69_7365;

fn ser_opt_real<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_real(x, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
    pub base_seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!(
            "{} config_hash={} seed={}",
            self.tool, self.config_hash, self.base_seed
        )
    }
}

/// Per-instance outcome, including instances excluded from selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceDiagnostic {
    pub instance_id: usize,
    pub fold_id: Option<usize>,
    #[serde(serialize_with = "ser_opt_real")]
    pub val_mae: Option<f64>,
    pub convergence_epoch: Option<usize>,
    pub expression_aic: Option<String>,
    pub expression_refined: Option<String>,
    #[serde(serialize_with = "ser_opt_real")]
    pub rrmse_aic: Option<f64>,
    #[serde(serialize_with = "ser_opt_real")]
    pub rrmse_refined: Option<f64>,
    /// Selection score: RRMSE of the finished expression on the instance's validation fold.
    #[serde(serialize_with = "ser_opt_real")]
    pub val_rrmse: Option<f64>,
    pub failure: Option<String>,
}

impl InstanceDiagnostic {
    fn failed(instance_id: usize, reason: String) -> Self {
        Self {
            instance_id,
            fold_id: None,
            val_mae: None,
            convergence_epoch: None,
            expression_aic: None,
            expression_refined: None,
            rrmse_aic: None,
            rrmse_refined: None,
            val_rrmse: None,
            failure: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestModel {
    pub instance_id: usize,
    pub fold_id: usize,
    pub chosen_threshold: f64,
    pub expression_aic: String,
    pub expression_refined: String,
    #[serde(serialize_with = "ser_real")]
    pub val_mae: f64,
    #[serde(serialize_with = "ser_real")]
    pub val_rrmse: f64,
    #[serde(serialize_with = "ser_real")]
    pub rrmse: f64,
    pub convergence_epoch: usize,
    pub shadow_steps: usize,
    pub escaped: bool,
    #[serde(serialize_with = "ser_real")]
    pub rss_before: f64,
    #[serde(serialize_with = "ser_real")]
    pub rss_after: f64,
    pub condition_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRecord {
    pub sigma: f64,
    pub noise_seed: u64,
    #[serde(serialize_with = "ser_opt_real")]
    pub true_rrmse: Option<f64>,
    pub best: Option<BestModel>,
    pub error: Option<String>,
    pub instances: Vec<InstanceDiagnostic>,
    /// Instances that failed to train, simplify, or score and so took no part in selection.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub preset: String,
    pub map: String,
    pub records: Vec<SigmaRecord>,
}

impl ExperimentReport {
    pub fn all_failed(&self) -> bool {
        self.records.iter().all(|r| r.best.is_none())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// `sigma,expression,val_mae,rrmse,true_rrmse,convergence_epoch`, one row per noise level;
    /// failed levels leave the result columns empty.
    pub fn results_csv(&self) -> String {
        let mut s = format!("# {}\n", self.provenance.header());
        s.push_str("sigma,expression,val_mae,rrmse,true_rrmse,convergence_epoch\n");
        for r in &self.records {
            let tr = r.true_rrmse.map(|v| v.to_string()).unwrap_or_default();
            match &r.best {
                Some(b) => {
                    let _ = writeln!(
                        s,
                        "{},\"{}\",{},{},{},{}",
                        r.sigma,
                        b.expression_refined,
                        b.val_mae,
                        b.rrmse,
                        tr,
                        b.convergence_epoch
                    );
                }
                None => {
                    let _ = writeln!(s, "{},,,,{},", r.sigma, tr);
                }
            }
        }
        s
    }
}

/// The winning expressions and data of one noise level, kept for file output.
#[derive(Debug, Clone)]
pub struct SigmaArtifacts {
    pub dataset: Dataset,
    pub expr_aic: ExprSystem,
    pub expr_refined: ExprSystem,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub report: ExperimentReport,
    pub artifacts: Vec<Option<SigmaArtifacts>>,
}

/// Clean dataset described by the config's sampling.
pub fn clean_dataset(map: &MapSpec, sampling: &Sampling) -> Result<Dataset> {
    match sampling {
        Sampling::Trajectory { x0, steps } => Dataset::from_trajectory(map, x0, *steps),
        Sampling::LinSpace { lo, hi, m } => maps::sample_linspace(map, *lo, *hi, *m),
    }
}

/// Seed of the single noise realization used at position `index` of the sigma list.
pub fn noise_seed(base_seed: u64, index: usize) -> u64 {
    derive_seed(base_seed, &[NOISE_TAG, index as u64])
}

struct Scored {
    diag: InstanceDiagnostic,
    threshold: f64,
    aic: ExprSystem,
    finished: ExprSystem,
}

fn score_instance(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    m: &TrainedModel,
    refine_each: bool,
) -> std::result::Result<Scored, String> {
    let raw = extract(&cfg.network, &m.params);
    let sr = simplify::select(&raw, ds).map_err(|e| e.to_string())?;
    let aic = sr.chosen_expr().clone();
    let finished = if refine_each {
        refine_expr(&aic, ds).map_err(|e| e.to_string())?.expr
    } else {
        aic.clone()
    };
    let folds = train::instance_dataset(ds, &cfg.train, m.instance_id).map_err(|e| e.to_string())?;
    let val = folds.subset(&folds.fold_indices(m.fold_id));
    let val_rrmse = eval::rrmse(&finished, &val).map_err(|e| e.to_string())?;
    let rrmse_aic = eval::rrmse(&aic, ds).map_err(|e| e.to_string())?;
    let rrmse_refined = if refine_each {
        Some(eval::rrmse(&finished, ds).map_err(|e| e.to_string())?)
    } else {
        None
    };
    if !val_rrmse.is_finite() {
        return Err("validation RRMSE is not finite".into());
    }
    Ok(Scored {
        diag: InstanceDiagnostic {
            instance_id: m.instance_id,
            fold_id: Some(m.fold_id),
            val_mae: Some(m.best_val_mae),
            convergence_epoch: Some(m.convergence_epoch),
            expression_aic: Some(aic.to_string()),
            expression_refined: refine_each.then(|| finished.to_string()),
            rrmse_aic: Some(rrmse_aic),
            rrmse_refined,
            val_rrmse: Some(val_rrmse),
            failure: None,
        },
        threshold: sr.chosen().threshold,
        aic,
        finished,
    })
}

fn run_sigma(
    cfg: &ExperimentConfig,
    clean: &Dataset,
    index: usize,
    mode: ExecMode,
) -> (SigmaRecord, Option<SigmaArtifacts>) {
    let sigma = cfg.sigmas[index];
    let seed = noise_seed(cfg.base_seed(), index);
    let mut rec = SigmaRecord {
        sigma,
        noise_seed: seed,
        true_rrmse: None,
        best: None,
        error: None,
        instances: Vec::new(),
        excluded: 0,
    };
    let ds = match add_noise(clean, NoiseConfig { sigma, seed }) {
        Ok(d) => d,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.true_rrmse = eval::true_rrmse(&cfg.map, &ds).ok();

    let sweep = match train::sweep(&cfg.network, &cfg.train, &ds, mode) {
        Ok(s) => s,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    let refine_each = cfg.stages.refine && !cfg.stages.refine_best_only;
    let scored = par::map(&sweep.models, mode, |m| score_instance(cfg, &ds, m, refine_each));

    let mut ok: Vec<(&TrainedModel, Scored)> = Vec::new();
    for (m, s) in sweep.models.iter().zip(scored) {
        match s {
            Ok(s) => ok.push((m, s)),
            Err(reason) => rec.instances.push(InstanceDiagnostic::failed(m.instance_id, reason)),
        }
    }
    for f in &sweep.failures {
        rec.instances
            .push(InstanceDiagnostic::failed(f.instance_id, f.reason.clone()));
    }
    rec.excluded = rec.instances.len();
    rec.instances.extend(ok.iter().map(|(_, s)| s.diag.clone()));
    rec.instances.sort_by_key(|d| d.instance_id);

    let winner = ok.iter().min_by(|(ma, a), (mb, b)| {
        let v = |s: &Scored| s.diag.val_rrmse.unwrap_or(f64::INFINITY);
        v(a).total_cmp(&v(b)).then(ma.instance_id.cmp(&mb.instance_id))
    });
    let Some((model, chosen)) = winner else {
        rec.error = Some(if sweep.models.is_empty() {
            Error::AllInstancesFailed.to_string()
        } else {
            "no instance produced a usable expression".into()
        });
        return (rec, None);
    };

    let (finished, rss_before, rss_after, flag) = if cfg.stages.refine {
        match refine_expr(&chosen.aic, &ds) {
            Ok(r) => (r.expr, r.rss_before, r.rss_after, r.condition_flag),
            Err(e) => {
                rec.error = Some(e.to_string());
                return (rec, None);
            }
        }
    } else {
        let r = simplify::rss(&chosen.aic, &ds).unwrap_or(f64::INFINITY);
        (chosen.aic.clone(), r, r, false)
    };
    debug_assert!(!refine_each || finished == chosen.finished);

    let scores = eval::rrmse(&finished, &ds).and_then(|r| {
        eval::shadow(
            &finished,
            &cfg.map,
            &cfg.eval.shadow_x0,
            cfg.eval.shadow_steps,
            cfg.eval.shadow_gap,
        )
        .map(|sh| (r, sh))
    });
    let (rrmse, sh) = match scores {
        Ok(x) => x,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.best = Some(BestModel {
        instance_id: model.instance_id,
        fold_id: model.fold_id,
        chosen_threshold: chosen.threshold,
        expression_aic: chosen.aic.to_string(),
        expression_refined: finished.to_string(),
        val_mae: model.best_val_mae,
        val_rrmse: chosen.diag.val_rrmse.unwrap_or(f64::NAN),
        rrmse,
        convergence_epoch: model.convergence_epoch,
        shadow_steps: sh.shadow_steps,
        escaped: sh.escaped,
        rss_before,
        rss_after,
        condition_flag: flag,
    });
    let art = SigmaArtifacts {
        dataset: ds,
        expr_aic: chosen.aic.clone(),
        expr_refined: finished,
    };
    (rec, Some(art))
}

/// Runs every noise level of `cfg`. Failures are recorded per level; only an invalid config
/// or unusable sampling is an error.
pub fn run_experiment(cfg: &ExperimentConfig, mode: ExecMode) -> Result<ExperimentRun> {
    cfg.validate()?;
    let clean = clean_dataset(&cfg.map, &cfg.sampling)?;
    let mut records = Vec::with_capacity(cfg.sigmas.len());
    let mut artifacts = Vec::with_capacity(cfg.sigmas.len());
    for i in 0..cfg.sigmas.len() {
        let (r, a) = run_sigma(cfg, &clean, i, mode);
        records.push(r);
        artifacts.push(a);
    }
    let report = ExperimentReport {
        provenance: Provenance {
            tool: format!("mapid {}", env!("CARGO_PKG_VERSION")),
            config_hash: cfg.config_hash(),
            base_seed: cfg.base_seed(),
        },
        preset: cfg.preset.clone(),
        map: cfg.map.name().to_string(),
        records,
    };
    Ok(ExperimentRun {
        config: cfg.clone(),
        report,
        artifacts,
    })
}

/// File-name fragment for one noise level.
pub fn sigma_tag(sigma: f64) -> String {
    format!("sigma_{sigma}")
}

fn data_bounds(ds: &Dataset) -> Vec<(f64, f64)> {
    (0..ds.dim())
        .map(|j| {
            ds.inputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x[j]), b.max(x[j]))
            })
        })
        .map(|(a, b)| if b > a { (a, b) } else { (a - 0.5, b + 0.5) })
        .collect()
}

fn trajectory_pair_csv(pair: &eval::TrajectoryPair, n: usize, header: &str) -> String {
    let mut s = format!("# {header}\nt");
    for j in 0..n {
        let _ = write!(s, ",true_x{j}");
    }
    for j in 0..n {
        let _ = write!(s, ",model_x{j}");
    }
    s.push('\n');
    for t in 0..pair.truth.len().max(pair.model.len()) {
        let _ = write!(s, "{t}");
        for row in [&pair.truth, &pair.model] {
            match row.get(t) {
                Some(v) => v.iter().for_each(|x| {
                    let _ = write!(s, ",{x:.16e}");
                }),
                None => (0..n).for_each(|_| s.push(',')),
            }
        }
        s.push('\n');
    }
    s
}

fn state_space_plot(cfg: &ExperimentConfig, a: &SigmaArtifacts, pair: &eval::TrajectoryPair, portrait: &eval::Portrait, sigma: f64) -> Plot {
    let title = format!("{} state space, sigma = {sigma}", cfg.map.name());
    if cfg.map.dim() == 1 {
        let data = a.dataset.inputs.iter().zip(&a.dataset.targets).map(|(x, y)| (x[0], y[0]));
        let curve = |model: bool| {
            portrait
                .rows
                .iter()
                .map(|r| (r.x[0], if model { r.model } else { r.truth }))
                .collect()
        };
        Plot::new(&title, "x_t", "x_t+1")
            .with(Series::new("data", Style::Dots, data.collect()))
            .with(Series::new("true map", Style::Line, curve(false)))
            .with(Series::new("identified", Style::Line, curve(true)))
    } else {
        let xy = |rows: &[Vec<f64>]| rows.iter().map(|v| (v[0], v[1])).collect();
        Plot::new(&title, "x", "y")
            .with(Series::new("true map", Style::Dots, xy(&pair.truth)))
            .with(Series::new("identified", Style::Dots, xy(&pair.model)))
    }
}

/// Writes the report, results table, expressions, portraits, trajectories, and plots into
/// `dir`. Returns the written paths in order.
pub fn write_outputs(run: &ExperimentRun, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let header = run.report.provenance.header();
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("report.json", &run.report.to_json()?)?;
    put("results.csv", &run.report.results_csv())?;
    put("config.txt", &format!("# {header}\n{}", run.config.to_text()))?;

    let cfg = &run.config;
    for (rec, art) in run.report.records.iter().zip(&run.artifacts) {
        let tag = sigma_tag(rec.sigma);
        let strip = |refined: bool| -> Vec<(f64, f64)> {
            rec.instances
                .iter()
                .filter_map(|d| {
                    let v = if refined { d.rrmse_refined } else { d.rrmse_aic };
                    v.map(|v| (d.instance_id as f64, v))
                })
                .collect()
        };
        let mut strip_csv = format!("# {header}\ninstance,rrmse_aic,rrmse_refined,excluded\n");
        for d in &rec.instances {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                strip_csv,
                "{},{},{},{}",
                d.instance_id,
                f(d.rrmse_aic),
                f(d.rrmse_refined),
                u8::from(d.failure.is_some())
            );
        }
        put(&format!("rrmse_instances_{tag}.csv"), &strip_csv)?;
        let mut plot = Plot::new(&format!("RRMSE by instance, sigma = {}", rec.sigma), "instance", "RRMSE")
            .with(Series::new("AIC stage", Style::Dots, strip(false)));
        if cfg.stages.refine && !cfg.stages.refine_best_only {
            plot = plot.with(Series::new("refined", Style::Dots, strip(true)));
        }
        put(&format!("rrmse_{tag}.svg"), &plot.render())?;

        let Some(a) = art else { continue };
        put(
            &format!("expression_{tag}.txt"),
            &format!("# {header}\n{}", a.expr_refined.to_text(Precision::Exact)),
        )?;
        put(
            &format!("expression_aic_{tag}.txt"),
            &format!("# {header}\n{}", a.expr_aic.to_text(Precision::Exact)),
        )?;
        let grid = if cfg.map.dim() == 1 {
            cfg.eval.portrait_grid
        } else {
            cfg.eval.portrait_grid.min(101)
        };
        let portrait = eval::export_portrait(&a.expr_refined, &cfg.map, &data_bounds(&a.dataset), grid)?;
        put(&format!("portrait_{tag}.csv"), &portrait.to_csv(Some(&header)))?;
        let pair = eval::trajectory_pair(&a.expr_refined, &cfg.map, &cfg.eval.shadow_x0, cfg.eval.shadow_steps)?;
        put(
            &format!("trajectory_{tag}.csv"),
            &trajectory_pair_csv(&pair, cfg.map.dim(), &header),
        )?;
        put(
            &format!("state_space_{tag}.svg"),
            &state_space_plot(cfg, a, &pair, &portrait, rec.sigma).render(),
        )?;
        let series = |rows: &[Vec<f64>]| rows.iter().enumerate().map(|(t, v)| (t as f64, v[0])).collect();
        let traj = Plot::new(&format!("trajectories from x0, sigma = {}", rec.sigma), "t", "x0")
            .with(Series::new("true map", Style::Line, series(&pair.truth)))
            .with(Series::new("identified", Style::Line, series(&pair.model)));
        put(&format!("trajectory_{tag}.svg"), &traj.render())?;
    }
    Ok(written)
}
