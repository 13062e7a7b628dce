//! End-to-end acceptance checks at desk scale.
//!
//! Every criterion is its own test; run with `--nocapture` to see the measured values. Runs
//! shared between criteria (the logistic and Gaussian sweeps) are computed once per process.

use std::sync::OnceLock;

use mapid::eval::{component_rrmse, rrmse, shadow, true_rrmse, DEFAULT_SHADOW_GAP};
use mapid::experiment::{run_experiment, ExperimentConfig, ExperimentRun};
use mapid::maps::{add_noise, sample_linspace, Dataset, MapSpec, NoiseConfig, StateVec};
use mapid::netcore::{
    extract, forward, loss_and_gradient, Batch, NetworkConfig, NetworkParams, PenaltyScale,
    WeightKind,
};
use mapid::par::ExecMode;
use mapid::rng::Gaussian;
use mapid::simplify::{aic, refine_expr, select, snap, thresholds};
use mapid::train::Alphas;
use mapid::{Expr, ExprSystem, UnaryOp};

const ATTEMPTS: u64 = 3;
const INSTANCES: usize = 5;
const EPOCHS: usize = 2000;

fn desk_run(preset: &str, seed: u64) -> ExperimentRun {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.sigmas = vec![0.0];
    cfg.train.instances = INSTANCES;
    cfg.train.epochs = EPOCHS;
    cfg.train.base_seed = seed;
    run_experiment(&cfg, ExecMode::default()).unwrap()
}

fn refined(run: &ExperimentRun) -> &ExprSystem {
    &run.artifacts[0].as_ref().expect("sigma 0 produced a model").expr_refined
}

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} {detail}");
}

// ---------------------------------------------------------------- logistic (1, 8c, 9)

fn logistic_runs() -> &'static Vec<ExperimentRun> {
    static RUNS: OnceLock<Vec<ExperimentRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..ATTEMPTS).map(|s| desk_run("logistic", s)).collect())
}

/// `c1*x + c2*|x|^e (+ k)`, as `(c1, c2, e, k)`.
fn logistic_form(e: &Expr) -> Option<(f64, f64, f64, f64)> {
    let (mut c1, mut c2, mut p, mut k) = (None, None, None, 0.0);
    for t in e.canonicalize().terms() {
        match t.split_coefficient() {
            (c, None) => k += c,
            (c, Some(Expr::Var(0))) if c1.is_none() => c1 = Some(c),
            (c, Some(Expr::Signomial(b, q))) if c2.is_none() && *b == Expr::Var(0) => {
                c2 = Some(c);
                p = Some(q);
            }
            _ => return None,
        }
    }
    Some((c1?, c2?, p?, k))
}

fn logistic_pass(run: &ExperimentRun) -> bool {
    let best = run.report.records[0].best.as_ref().unwrap();
    matches!(
        logistic_form(&refined(run).components[0]),
        Some((c1, c2, e, k)) if (3.6..=4.1).contains(&c1)
            && (-4.1..=-3.6).contains(&c2)
            && (1.9..=2.1).contains(&e)
            && k.abs() < 0.05
    ) && best.rrmse <= 0.02
}

/// The first passing attempt, or the attempt with the lowest RRMSE.
fn logistic_pick() -> &'static ExperimentRun {
    let runs = logistic_runs();
    runs.iter().find(|r| logistic_pass(r)).unwrap_or_else(|| {
        runs.iter()
            .min_by(|a, b| {
                let r = |x: &ExperimentRun| x.report.records[0].best.as_ref().unwrap().rrmse;
                r(a).total_cmp(&r(b))
            })
            .unwrap()
    })
}

#[test]
fn criterion_01_logistic_recovery() {
    let runs = logistic_runs();
    for (s, run) in runs.iter().enumerate() {
        let best = run.report.records[0].best.as_ref().unwrap();
        println!(
            "  attempt {s}: rrmse {:.5} form {:?} expr {}",
            best.rrmse,
            logistic_form(&refined(run).components[0]),
            best.expression_refined
        );
    }
    let passed = runs.iter().filter(|r| logistic_pass(r)).count();
    report(1, passed >= 1, &format!("{passed} of {ATTEMPTS} attempts"));
    assert!(passed >= 1);
}

#[test]
fn criterion_09_shadowing() {
    let run = logistic_pick();
    let s = shadow(
        refined(run),
        &MapSpec::logistic(),
        &StateVec::scalar(0.5).unwrap(),
        100,
        DEFAULT_SHADOW_GAP,
    )
    .unwrap();
    report(9, s.shadow_steps >= 8, &format!("{} steps", s.shadow_steps));
    assert!(s.shadow_steps >= 8);
}

// ---------------------------------------------------------------- noise floors (2)

fn mean_true_rrmse(clean: &Dataset, spec: &MapSpec, sigma: f64) -> f64 {
    let total: f64 = (0..20)
        .map(|seed| {
            let ds = add_noise(clean, NoiseConfig { sigma, seed }).unwrap();
            true_rrmse(spec, &ds).unwrap()
        })
        .sum();
    total / 20.0
}

#[test]
fn criterion_02_true_rrmse_baselines() {
    let logistic = MapSpec::logistic();
    let traj = Dataset::from_trajectory(&logistic, &StateVec::scalar(0.5).unwrap(), 1000).unwrap();
    let gaussian = MapSpec::gaussian();
    let wide = sample_linspace(&gaussian, -1.0, 1.0, 1000).unwrap();
    let cases = [
        ("logistic 0.01", mean_true_rrmse(&traj, &logistic, 0.01), 0.0233, 0.007),
        ("logistic 0.05", mean_true_rrmse(&traj, &logistic, 0.05), 0.1202, 0.03),
        ("gaussian 0.05", mean_true_rrmse(&wide, &gaussian, 0.05), 0.1125, 0.03),
    ];
    let mut ok = true;
    for (name, got, want, tol) in cases {
        let hit = (got - want).abs() <= tol;
        ok &= hit;
        println!("  {name}: {got:.4} (target {want} +- {tol})");
    }
    report(2, ok, "");
    assert!(ok);
}

// ---------------------------------------------------------------- Gaussian (3, 4)

fn gaussian_wide_runs() -> &'static Vec<ExperimentRun> {
    static RUNS: OnceLock<Vec<ExperimentRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..ATTEMPTS).map(|s| desk_run("gaussian-wide", s)).collect())
}

/// `k*exp(-a*|x|^p) + c`, as `(k, a, p, c)`.
fn gaussian_form(e: &Expr) -> Option<(f64, f64, f64, f64)> {
    let (mut bump, mut c) = (None, 0.0);
    for t in e.canonicalize().terms() {
        match t.split_coefficient() {
            (v, None) => c += v,
            (k, Some(Expr::Op(UnaryOp::Exp, arg))) if bump.is_none() => {
                let (neg_a, rest) = arg.split_coefficient();
                match rest {
                    Some(Expr::Signomial(b, p)) if *b == Expr::Var(0) => bump = Some((k, -neg_a, p)),
                    _ => return None,
                }
            }
            _ => return None,
        }
    }
    let (k, a, p) = bump?;
    Some((k, a, p, c))
}

fn gaussian_pass(run: &ExperimentRun) -> bool {
    let best = run.report.records[0].best.as_ref().unwrap();
    matches!(
        gaussian_form(&refined(run).components[0]),
        Some((k, a, p, c)) if (k - 1.0).abs() <= 0.1
            && (8.0..=13.0).contains(&a)
            && (1.6..=2.2).contains(&p)
            && (-0.55..=-0.45).contains(&c)
    ) && best.rrmse <= 0.05
}

#[test]
fn criterion_03_gaussian_wide_domain_recovery() {
    let runs = gaussian_wide_runs();
    for (s, run) in runs.iter().enumerate() {
        let best = run.report.records[0].best.as_ref().unwrap();
        println!(
            "  attempt {s}: rrmse {:.5} form {:?}",
            best.rrmse,
            gaussian_form(&refined(run).components[0])
        );
    }
    let passed = runs.iter().filter(|r| gaussian_pass(r)).count();
    report(3, passed >= 1, &format!("{passed} of {ATTEMPTS} attempts"));
    assert!(passed >= 1);
}

#[test]
fn criterion_04_single_trajectory_failure_mode() {
    let gaussian = MapSpec::gaussian();
    let wide = sample_linspace(&gaussian, -1.0, 1.0, 1000).unwrap();
    let wide_ok = gaussian_wide_runs().iter().any(gaussian_pass);
    let mut worst: f64 = 0.0;
    for s in 0..ATTEMPTS {
        let run = desk_run("gaussian", s);
        let on_traj = run.report.records[0].best.as_ref().unwrap().rrmse;
        let on_domain = rrmse(refined(&run), &wide).unwrap();
        println!("  attempt {s}: trajectory rrmse {on_traj:.4}, [-1, 1] rrmse {on_domain:.4}");
        worst = worst.max(on_domain);
    }
    let pass = wide_ok && worst > 0.5;
    report(4, pass, &format!("largest [-1, 1] rrmse {worst:.3}; wide-domain protocol ok: {wide_ok}"));
    assert!(pass);
}

// ---------------------------------------------------------------- Tinkerbell (5, soft)

#[test]
fn criterion_05_tinkerbell_partial_identification_soft() {
    let run = desk_run("tinkerbell", 0);
    let sys = refined(&run);
    let clean = &run.artifacts[0].as_ref().unwrap().dataset;
    let y_rrmse = component_rrmse(&sys.components[1], clean, 1).unwrap_or(f64::INFINITY);
    let full = run.report.records[0].best.as_ref().unwrap().rrmse;
    let ok = y_rrmse < 0.25;
    println!("  y component: {}", sys.components[1]);
    println!("  y-component rrmse {y_rrmse:.4}, system rrmse {full:.4}");
    if ok {
        report(5, true, "");
    } else {
        println!("criterion 5: WARN y-component rrmse {y_rrmse:.4} >= 0.25");
    }
}

// ---------------------------------------------------------------- gradients (6), extraction (7)

fn presets() -> [(NetworkConfig, Dataset); 3] {
    let tink = MapSpec::tinkerbell();
    [
        (
            NetworkConfig::logistic(),
            sample_linspace(&MapSpec::logistic(), 0.0, 1.0, 48).unwrap(),
        ),
        (
            NetworkConfig::gaussian(),
            sample_linspace(&MapSpec::gaussian(), -1.0, 1.0, 48).unwrap(),
        ),
        (
            NetworkConfig::tinkerbell(),
            Dataset::from_trajectory(&tink, &StateVec::new(vec![-0.5, -0.5]).unwrap(), 48).unwrap(),
        ),
    ]
}

/// Weights `N(0, 0.3)`, exponents `N(1, 0.25)`.
fn draw(cfg: &NetworkConfig, g: &mut Gaussian) -> NetworkParams {
    NetworkParams::build(cfg, |k| match k {
        WeightKind::Signomial => g.sample(1.0, 0.25),
        _ => g.sample(0.0, 0.3),
    })
}

/// Distance from the penalty kinks: `w = 0` for magnitude penalties; the integers and
/// half-integers of `[0, 3]` for the exponent penalty.
fn kink_distance(kind: WeightKind, w: f64) -> f64 {
    match kind {
        WeightKind::Signomial => (0..=6)
            .map(|k| (w - 0.5 * k as f64).abs())
            .fold(f64::INFINITY, f64::min),
        _ => w.abs(),
    }
}

#[test]
fn criterion_06_gradient_oracle() {
    let h = 1e-6;
    let mut max_err: f64 = 0.0;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for (cfg, ds) in presets() {
        let batch = Batch::all(&ds);
        let mut g = Gaussian::new(cfg.param_count() as u64);
        for _ in 0..20 {
            let p = draw(&cfg, &mut g);
            let loss = |q: &NetworkParams| {
                loss_and_gradient(&cfg, q, &batch, Alphas::default(), PenaltyScale::Sum)
                    .map(|(l, _)| l.total)
            };
            let Ok((_, grad)) = loss_and_gradient(&cfg, &p, &batch, Alphas::default(), PenaltyScale::Sum)
            else {
                continue;
            };
            let grad = grad.to_flat();
            let base = p.to_flat();
            let kinds = p.flat_kinds();
            for i in 0..base.len() {
                if kink_distance(kinds[i], base[i]) < 1e-8 {
                    skipped += 1;
                    continue;
                }
                let at = |d: f64| {
                    let mut f = base.clone();
                    f[i] += d;
                    let mut q = p.clone();
                    q.set_flat(&f);
                    loss(&q)
                };
                let (Ok(up), Ok(mid), Ok(down)) = (at(h), at(0.0), at(-h)) else {
                    skipped += 1;
                    continue;
                };
                // a data-dependent kink (|residual| or an abs/sign argument crossing zero)
                // inside the stencil shows up as disagreeing one-sided slopes
                let (right, left) = ((up - mid) / h, (mid - down) / h);
                if (right - left).abs() > 1e-3 * (1.0 + right.abs().max(left.abs())) {
                    skipped += 1;
                    continue;
                }
                let fd = (up - down) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
                max_err = max_err.max(err);
                checked += 1;
            }
        }
    }
    let pass = max_err < 1e-5 && checked > 0;
    report(6, pass, &format!("max relative error {max_err:.2e} over {checked} coordinates, {skipped} at kinks"));
    assert!(pass);
}

#[test]
fn criterion_07_extraction_consistency() {
    let mut worst: f64 = 0.0;
    for (cfg, _) in presets() {
        let mut g = Gaussian::new(7 + cfg.param_count() as u64);
        for _ in 0..100 {
            let p = draw(&cfg, &mut g);
            let sys = extract(&cfg, &p);
            let x: Vec<f64> = (0..cfg.n)
                .map(|_| {
                    let v = g.sample(0.0, 0.8);
                    if v.abs() < 1e-6 { 1e-3 } else { v }
                })
                .collect();
            let Ok(f) = forward(&cfg, &p, &x) else { continue };
            let s = sys.evaluate(&x).unwrap();
            for (a, b) in f.iter().zip(&s) {
                worst = worst.max((a - b).abs() / (1.0 + a.abs()));
            }
        }
    }
    report(7, worst <= 1e-9, &format!("max scaled gap {worst:.2e}"));
    assert!(worst <= 1e-9);
}

// ---------------------------------------------------------------- AIC / OLS (8)

fn random_model(g: &mut Gaussian) -> ExprSystem {
    let x = || Expr::Var(0);
    let mut terms = Vec::new();
    let n = 1 + (g.sample(0.0, 1.0).abs() * 2.0) as usize % 4;
    for i in 0..n {
        let c = g.sample(0.0, 2.0);
        let p = 1.0 + g.sample(0.0, 0.6).abs();
        let feature = match (i + (p * 10.0) as usize) % 4 {
            0 => x(),
            1 => Expr::signomial(x(), p),
            2 => Expr::op(UnaryOp::Sin, Expr::Prod(vec![Expr::Const(p), x()])),
            _ => Expr::op(UnaryOp::Exp, Expr::Prod(vec![Expr::Const(-p), Expr::signomial(x(), 2.0)])),
        };
        terms.push(Expr::Prod(vec![Expr::Const(c), feature]));
    }
    terms.push(Expr::Const(g.sample(0.0, 0.5)));
    ExprSystem::new(vec![Expr::Sum(terms).canonicalize()])
}

#[test]
fn criterion_08_aic_and_least_squares() {
    let mut g = Gaussian::new(88);
    let gaussian = MapSpec::gaussian();
    let data = sample_linspace(&gaussian, -1.0, 1.0, 200).unwrap();

    let mut select_ok = true;
    for _ in 0..50 {
        let e = random_model(&mut g);
        let Ok(sr) = select(&e, &data) else { continue };
        // independent argmin over freshly scored candidates, ties to the larger threshold
        let scores: Vec<f64> = thresholds()
            .iter()
            .map(|&t| aic(&snap(&e, t), &data).unwrap().aic)
            .collect();
        let mut brute = None;
        for (i, &a) in scores.iter().enumerate() {
            if a < f64::INFINITY && brute.is_none_or(|b: usize| a <= scores[b]) {
                brute = Some(i);
            }
        }
        select_ok &= brute == Some(sr.chosen);
    }

    let mut ols_ok = true;
    let mut flagged = 0;
    for i in 0..100 {
        let e = random_model(&mut g);
        let clean = sample_linspace(&gaussian, -1.0, 1.0, 60 + i).unwrap();
        let ds = add_noise(&clean, NoiseConfig { sigma: 0.02, seed: i as u64 }).unwrap();
        let r = refine_expr(&e, &ds).unwrap();
        if r.condition_flag {
            flagged += 1;
        } else {
            ols_ok &= r.rss_after <= r.rss_before + 1e-9;
        }
    }

    let best = logistic_pick().report.records[0].best.as_ref().unwrap();
    let decreases = best.rss_after < best.rss_before;
    println!("  select agrees: {select_ok}; ols never worse: {ols_ok} ({flagged} flagged)");
    println!("  logistic run rss {:.3e} -> {:.3e}", best.rss_before, best.rss_after);
    let pass = select_ok && ols_ok && decreases;
    report(8, pass, "");
    assert!(pass);
}

// ---------------------------------------------------------------- determinism (10)

#[test]
fn criterion_10_determinism() {
    let mut cfg = ExperimentConfig::preset("gaussian-wide").unwrap();
    cfg.sigmas = vec![0.0, 0.01];
    cfg.train.instances = 2;
    cfg.train.epochs = 150;
    cfg.train.base_seed = 21;
    let a = run_experiment(&cfg, ExecMode::Parallel).unwrap().report.to_json().unwrap();
    let b = run_experiment(&cfg, ExecMode::Parallel).unwrap().report.to_json().unwrap();
    let c = run_experiment(&cfg, ExecMode::Sequential).unwrap().report.to_json().unwrap();
    let pass = a == b && a == c;
    report(10, pass, "");
    assert!(pass);
}
