use mapid::maps::{sample_linspace, MapSpec};
use mapid::netcore::{init_params, NetworkConfig};
use mapid::par::ExecMode;
use mapid::train::{self, Alphas, TrainConfig};
use proptest::prelude::*;

fn small(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        folds: 3,
        instances: 2,
        cycle_epochs: 20,
        base_seed: seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn history_is_finite_and_snapshot_is_its_argmin(seed in any::<u64>(), fold in 0usize..3) {
        let ds = mapid::maps::assign_folds(
            &sample_linspace(&MapSpec::logistic(), 0.0, 1.0, 60).unwrap(),
            3,
            seed,
        )
        .unwrap();
        let cfg = small(40, seed);
        let m = train::train_fold(&NetworkConfig::logistic(), &cfg, &ds, fold, seed).unwrap();
        prop_assert!(m.history.iter().all(|r| r.train.total.is_finite()));
        let min = m.history.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
        prop_assert!(m.best_val_mae <= min);
        prop_assert!(m.convergence_epoch <= cfg.epochs);
    }

    #[test]
    fn zero_epochs_return_the_initialization(seed in any::<u64>()) {
        let ds = sample_linspace(&MapSpec::gaussian(), -1.0, 1.0, 30).unwrap();
        let ds = mapid::maps::assign_folds(&ds, 3, 1).unwrap();
        let net = NetworkConfig::gaussian();
        let cfg = TrainConfig { alphas: Alphas::ZERO, ..small(0, 0) };
        let m = train::train_fold(&net, &cfg, &ds, 0, seed).unwrap();
        prop_assert_eq!(m.params, init_params(&net, seed));
    }
}

#[test]
fn sweep_is_a_pure_function_of_its_inputs() {
    let ds = sample_linspace(&MapSpec::logistic(), 0.0, 1.0, 50).unwrap();
    let net = NetworkConfig::logistic();
    let cfg = small(30, 9);
    let a = train::sweep(&net, &cfg, &ds, ExecMode::Parallel).unwrap();
    let b = train::sweep(&net, &cfg, &ds, ExecMode::Sequential).unwrap();
    let c = train::sweep(&net, &cfg, &ds, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.models.len(), 2);
    let other = train::sweep(&net, &small(30, 10), &ds, ExecMode::Parallel).unwrap();
    assert_ne!(a.models[0].params, other.models[0].params);
}
