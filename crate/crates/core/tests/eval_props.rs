use mapid::eval::{rrmse, shadow, true_rrmse};
use mapid::expr::parse_system;
use mapid::maps::{add_noise, sample_linspace, Dataset, MapSpec, NoiseConfig, StateVec};
use mapid::{Expr, ExprSystem};
use proptest::prelude::*;

fn scaled(e: &ExprSystem, ds: &Dataset, lambda: f64) -> (ExprSystem, Dataset) {
    let e = ExprSystem::new(
        e.components
            .iter()
            .map(|c| Expr::Prod(vec![Expr::Const(lambda), c.clone()]))
            .collect(),
    );
    let mut d = ds.clone();
    for t in &mut d.targets {
        *t = StateVec::new(t.as_slice().iter().map(|v| v * lambda).collect()).unwrap();
    }
    (e, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rrmse_ignores_a_common_scale(
        a in 3.0..4.0f64,
        lambda in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64],
    ) {
        let ds = sample_linspace(&MapSpec::logistic(), 0.0, 1.0, 100).unwrap();
        let e = parse_system(&format!("{a}*x0 - {a}*x0^2")).unwrap();
        let base = rrmse(&e, &ds).unwrap();
        let (e2, d2) = scaled(&e, &ds, lambda);
        let r = rrmse(&e2, &d2).unwrap();
        prop_assert!((r - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn shadowing_shrinks_with_the_gap(r in 3.85..3.95f64, x0 in 0.1..0.9f64, gap in 1e-4..0.5f64) {
        let e = parse_system(&format!("{r}*x0*(1 - x0)")).unwrap();
        let start = StateVec::scalar(x0).unwrap();
        let spec = MapSpec::logistic();
        let wide = shadow(&e, &spec, &start, 100, gap).unwrap().shadow_steps;
        let narrow = shadow(&e, &spec, &start, 100, gap / 2.0).unwrap().shadow_steps;
        prop_assert!(narrow <= wide);
    }
}

#[test]
fn exact_maps_score_zero_on_clean_data() {
    for spec in [MapSpec::logistic(), MapSpec::gaussian(), MapSpec::tinkerbell()] {
        let x0 = match spec.dim() {
            1 => StateVec::scalar(0.3).unwrap(),
            _ => StateVec::new(vec![-0.72, -0.64]).unwrap(),
        };
        let ds = Dataset::from_trajectory(&spec, &x0, 500).unwrap();
        assert_eq!(rrmse(&spec.expr(), &ds).unwrap(), 0.0, "{}", spec.name());
        assert_eq!(true_rrmse(&spec, &ds).unwrap(), 0.0);
    }
}

#[test]
fn noise_floor_is_positive() {
    let clean = sample_linspace(&MapSpec::gaussian(), -1.0, 1.0, 500).unwrap();
    let ds = add_noise(&clean, NoiseConfig { sigma: 0.01, seed: 2 }).unwrap();
    assert!(true_rrmse(&MapSpec::gaussian(), &ds).unwrap() > 0.0);
}
