use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapid::eval::{self, EvalReport};
use mapid::experiment::{self, ExperimentConfig};
use mapid::expr::{parse, parse_system, ExprSystem, Precision};
use mapid::maps::{self, add_noise, Dataset, MapSpec, NoiseConfig, StateVec};
use mapid::netcore::{self, Checkpoint};
use mapid::par::ExecMode;
use mapid::simplify::{self, SimplificationReport};
use mapid::train;

/// Identify closed-form iterated-map expressions with a sparse symbolic network.
#[derive(Parser)]
#[command(name = "mapid", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a trajectory or dataset CSV for a map.
    Generate(GenerateArgs),
    /// Run a full experiment from a config file or preset.
    Experiment(ExperimentArgs),
    /// Score an expression file against data.
    Evaluate(EvaluateArgs),
    /// Simplify and refine the network stored in a checkpoint.
    Simplify(SimplifyArgs),
    /// Train a single instance and save its best fold.
    Train(TrainArgs),
}

#[derive(Args, Clone)]
struct MapArgs {
    /// logistic, gaussian, tinkerbell, or custom (with --expr)
    #[arg(long)]
    map: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    d: Option<f64>,
    /// Components of a custom map, separated by ';'
    #[arg(long)]
    expr: Option<String>,
}

#[derive(Args, Clone)]
struct SampleArgs {
    /// Initial state, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Sample inputs evenly over [LO, HI] instead of following a trajectory
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_hyphen_values = true)]
    linspace: Option<Vec<f64>>,
    /// Number of linspace points
    #[arg(long, default_value_t = 1000)]
    m: usize,
    /// Noise level relative to the per-dimension RMS of the states
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Noise seed (defaults to MAPID_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    map: MapArgs,
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Flat key = value config file
    config: Option<PathBuf>,
    /// Start from a preset instead of a config file
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every work unit on the calling thread
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset pair CSV; otherwise data is generated from the map arguments
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    map: MapArgs,
    #[command(flatten)]
    sample: SampleArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// File with one expression per state dimension
    expr_file: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    shadow_steps: usize,
    #[arg(long, default_value_t = eval::DEFAULT_SHADOW_GAP)]
    gap: f64,
    /// Also score against noise-free targets
    #[arg(long)]
    clean: bool,
}

#[derive(Args)]
struct SimplifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Skip least-squares refinement
    #[arg(long)]
    no_refine: bool,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Preset supplying map, sampling, network, and learning rates
    #[arg(long, default_value = "logistic")]
    preset: String,
    /// Config file (takes precedence over --preset)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint of the best fold
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log CSV
    #[arg(long)]
    log: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mapid::Error> for Failure {
    fn from(e: mapid::Error) -> Self {
        match e {
            mapid::Error::Parse { .. } | mapid::Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var("MAPID_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("MAPID_SEED must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, body: &str) -> CliResult {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

impl MapArgs {
    fn spec(&self) -> CliResult<Option<MapSpec>> {
        let Some(name) = self.map.as_deref() else {
            return Ok(None);
        };
        let mut spec = match name {
            "logistic" => MapSpec::logistic(),
            "gaussian" => MapSpec::gaussian(),
            "tinkerbell" => MapSpec::tinkerbell(),
            "custom" => {
                let text = self
                    .expr
                    .as_deref()
                    .ok_or_else(|| usage("--map custom needs --expr"))?;
                let comps = text.split(';').map(|p| parse(p.trim())).collect::<Result<Vec<_>, _>>()?;
                MapSpec::Custom(ExprSystem::new(comps))
            }
            other => return Err(usage(format!("unknown map '{other}'"))),
        };
        let misplaced = |flag: &str| usage(format!("--{flag} does not apply to the {name} map"));
        match &mut spec {
            MapSpec::Logistic { r } => {
                if let Some(v) = self.r {
                    *r = v;
                }
                if self.alpha.or(self.beta).or(self.a).or(self.b).or(self.c).or(self.d).is_some() {
                    return Err(misplaced("alpha/beta/a/b/c/d"));
                }
            }
            MapSpec::Gaussian { alpha, beta } => {
                if let Some(v) = self.alpha {
                    *alpha = v;
                }
                if let Some(v) = self.beta {
                    *beta = v;
                }
                if self.r.or(self.a).or(self.b).or(self.c).or(self.d).is_some() {
                    return Err(misplaced("r/a/b/c/d"));
                }
            }
            MapSpec::Tinkerbell { a, b, c, d } => {
                for (slot, v) in [(a, self.a), (b, self.b), (c, self.c), (d, self.d)] {
                    if let Some(v) = v {
                        *slot = v;
                    }
                }
                if self.r.or(self.alpha).or(self.beta).is_some() {
                    return Err(misplaced("r/alpha/beta"));
                }
            }
            MapSpec::Custom(_) => {}
        }
        spec.validate().map_err(|e| usage(e.to_string()))?;
        Ok(Some(spec))
    }
}

fn default_x0(spec: &MapSpec) -> Vec<f64> {
    match spec {
        MapSpec::Logistic { .. } => vec![0.5],
        MapSpec::Tinkerbell { .. } => vec![-0.5, -0.5],
        _ => vec![0.0; spec.dim()],
    }
}

impl SampleArgs {
    fn x0(&self, spec: &MapSpec) -> CliResult<StateVec> {
        let v = self.x0.clone().unwrap_or_else(|| default_x0(spec));
        if v.len() != spec.dim() {
            return Err(usage(format!(
                "--x0 has {} components but the map has {}",
                v.len(),
                spec.dim()
            )));
        }
        StateVec::new(v).map_err(|e| usage(e.to_string()))
    }

    fn noise(&self) -> CliResult<NoiseConfig> {
        let seed = match self.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        };
        Ok(NoiseConfig {
            sigma: self.sigma,
            seed,
        })
    }

    fn dataset(&self, spec: &MapSpec) -> CliResult<Dataset> {
        let clean = match &self.linspace {
            Some(b) => maps::sample_linspace(spec, b[0], b[1], self.m)?,
            None => Dataset::from_trajectory(spec, &self.x0(spec)?, self.steps)?,
        };
        Ok(add_noise(&clean, self.noise()?)?)
    }
}

impl DataArgs {
    /// The dataset and, when a map was named, its spec.
    fn load(&self) -> CliResult<(Dataset, Option<MapSpec>)> {
        let spec = self.map.spec()?;
        let ds = match (&self.data, &spec) {
            (Some(p), _) => read_data_csv(&read(p)?).map_err(|e| usage(e.to_string()))?,
            (None, Some(s)) => self.sample.dataset(s)?,
            (None, None) => return Err(usage("give --data or --map to describe the data")),
        };
        Ok((ds, spec))
    }
}

/// Dataset pair CSV, or a trajectory CSV turned into consecutive pairs.
fn read_data_csv(text: &str) -> mapid::Result<Dataset> {
    let header = text.lines().find(|l| !l.trim().is_empty() && !l.starts_with('#'));
    if header.is_some_and(|h| h.trim_start().starts_with("t,")) {
        Dataset::from_states(&maps::read_trajectory_csv(text)?)
    } else {
        maps::read_dataset_csv(text)
    }
}

fn rms_summary(ds: &Dataset) -> String {
    let rms: Vec<String> = ds.input_rms().iter().map(|v| format!("{v:.6}")).collect();
    format!("M={} dim={} rms=[{}]", ds.len(), ds.dim(), rms.join(", "))
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let spec = args.map.spec()?.ok_or_else(|| usage("--map is required"))?;
    let ds = args.sample.dataset(&spec)?;
    let prov = format!(
        "mapid {} map={} sigma={} seed={}",
        env!("CARGO_PKG_VERSION"),
        spec.name(),
        ds.noise.sigma,
        ds.noise.seed
    );
    let body = if args.sample.linspace.is_some() {
        maps::dataset_csv(&ds, Some(&prov))
    } else {
        let mut states = ds.inputs.clone();
        states.extend(ds.targets.last().cloned());
        maps::trajectory_csv(&states, Some(&prov))
    };
    write(&args.out, &body)?;
    println!("{}", rms_summary(&ds));
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(_), Some(_)) => return Err(usage("give either a config file or --preset, not both")),
        (Some(p), None) => ExperimentConfig::parse(&read(p)?)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Err(usage("give a config file or --preset")),
    };
    if let Some(s) = env_seed()? {
        cfg.train.base_seed = s;
    }
    if let Some(n) = args.instances {
        cfg.train.instances = n;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(o) = args.out {
        cfg.output_dir = Some(o);
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mode = if args.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let run = experiment::run_experiment(&cfg, mode)?;
    if let Some(dir) = &cfg.output_dir {
        experiment::write_outputs(&run, dir)?;
    }
    for r in &run.report.records {
        match &r.best {
            Some(b) => println!(
                "sigma={} rrmse={:.5} val_mae={:.5} shadow={} excluded={} expr: {}",
                r.sigma, b.rrmse, b.val_mae, b.shadow_steps, r.excluded, b.expression_refined
            ),
            None => println!(
                "sigma={} failed: {}",
                r.sigma,
                r.error.as_deref().unwrap_or("unknown error")
            ),
        }
    }
    if cfg.output_dir.is_none() {
        print!("{}", run.report.to_json()?);
    }
    if run.report.all_failed() {
        return Err(Failure::Runtime("every noise level failed".into()));
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let expr = parse_system(&read(&args.expr_file)?).map_err(|e| usage(e.to_string()))?;
    let (ds, spec) = args.data.load()?;
    if expr.dim() != ds.dim() {
        return Err(usage(format!(
            "expression has {} components but the data has {} dimensions",
            expr.dim(),
            ds.dim()
        )));
    }
    let out = match &spec {
        Some(spec) => {
            let x0 = args.data.sample.x0(spec)?;
            let report: EvalReport =
                eval::evaluate(&expr, spec, &ds, &x0, args.shadow_steps, args.gap)?;
            let mut v = serde_json::to_value(report).map_err(|e| Failure::Runtime(e.to_string()))?;
            if args.clean {
                v["clean_rrmse"] = serde_json::json!(eval::clean_target_rrmse(&expr, spec, &ds)?);
            }
            v
        }
        None => serde_json::json!({
            "rrmse": eval::rrmse(&expr, &ds)?,
            "val_mae": eval::expr_mae(&expr, &ds)?,
        }),
    };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}

fn cmd_simplify(args: SimplifyArgs) -> CliResult {
    let ck = netcore::load_checkpoint(&args.checkpoint)?;
    let (ds, _) = args.data.load()?;
    if ds.dim() != ck.config.n {
        return Err(usage("data dimension does not match the checkpoint"));
    }
    let raw = netcore::extract(&ck.config, &ck.params);
    let sr = simplify::select(&raw, &ds)?;
    let refined = if args.no_refine {
        let r = simplify::rss(sr.chosen_expr(), &ds)?;
        simplify::RefinedModel {
            expr: sr.chosen_expr().clone(),
            coefficients: Vec::new(),
            rss_before: r,
            rss_after: r,
            condition_flag: false,
        }
    } else {
        simplify::ols_refine(&sr, &ds)?
    };
    let report = SimplificationReport::new(&sr, &refined);
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    match &args.out {
        Some(p) => {
            write(p, &format!("{text}\n"))?;
            print!("{}", refined.expr.to_text(Precision::Exact));
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&read(p)?)?,
        None => ExperimentConfig::preset(&args.preset)?,
    };
    if let Some(s) = env_seed()? {
        cfg.train.base_seed = s;
    }
    if let Some(s) = args.seed {
        cfg.train.base_seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.instances = 1;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let clean = experiment::clean_dataset(&cfg.map, &cfg.sampling)?;
    let ds = add_noise(
        &clean,
        NoiseConfig {
            sigma: args.sigma,
            seed: experiment::noise_seed(cfg.base_seed(), 0),
        },
    )?;
    let models = train::run_instances(&cfg.network, &cfg.train, &ds)?;
    let best = &models[0];
    let ck = Checkpoint::new(cfg.network.clone(), best.params.clone(), best.seed);
    netcore::save_checkpoint(&args.out, &ck)?;
    if let Some(p) = &args.log {
        write(p, &best.log_csv())?;
    }
    println!(
        "fold={} val_mae={:.6} convergence_epoch={}",
        best.fold_id, best.best_val_mae, best.convergence_epoch
    );
    println!("{}", netcore::extract(&cfg.network, &best.params));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Simplify(a) => cmd_simplify(a),
        Command::Train(a) => cmd_train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nRun `mapid --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
