use mapid::maps::{add_noise, generate_trajectory, sample_linspace, Dataset, MapSpec, NoiseConfig, StateVec};
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = (MapSpec, StateVec)> {
    prop_oneof![
        (0.05..0.95f64).prop_map(|x| (MapSpec::logistic(), StateVec::scalar(x).unwrap())),
        (-1.0..1.0f64).prop_map(|x| (MapSpec::gaussian(), StateVec::scalar(x).unwrap())),
        Just((MapSpec::tinkerbell(), StateVec::new(vec![-0.72, -0.64]).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn repeated_steps_match_the_trajectory((s, x0) in spec(), steps in 1usize..200) {
        let traj = generate_trajectory(&s, &x0, steps).unwrap();
        prop_assert_eq!(traj.len(), steps + 1);
        let mut x = x0.clone();
        for t in traj.iter().skip(1) {
            x = s.step(&x).unwrap();
            prop_assert_eq!(&x, t);
        }
    }

    #[test]
    fn noise_keeps_shape((s, x0) in spec(), sigma in 0.001..0.1f64, seed in any::<u64>()) {
        let clean = Dataset::from_trajectory(&s, &x0, 100).unwrap();
        let noisy = add_noise(&clean, NoiseConfig { sigma, seed }).unwrap();
        prop_assert_eq!(noisy.len(), clean.len());
        prop_assert_eq!(noisy.dim(), clean.dim());
        prop_assert_eq!(&noisy.fold_ids, &clean.fold_ids);
        prop_assert_ne!(&noisy.inputs, &clean.inputs);
        prop_assert_ne!(&noisy.targets, &clean.targets);
        prop_assert_eq!(add_noise(&clean, NoiseConfig { sigma, seed }).unwrap(), noisy);
    }
}

#[test]
fn logistic_orbit_stays_in_the_unit_interval() {
    let traj = generate_trajectory(&MapSpec::logistic(), &StateVec::scalar(0.5).unwrap(), 5000).unwrap();
    assert!(traj.iter().all(|x| (0.0..=1.0).contains(&x.as_slice()[0])));
}

#[test]
fn noise_scale_tracks_sigma_times_rms() {
    let cases = [
        sample_linspace(&MapSpec::gaussian(), -1.0, 1.0, 20_000).unwrap(),
        Dataset::from_trajectory(&MapSpec::tinkerbell(), &StateVec::new(vec![-0.72, -0.64]).unwrap(), 20_000)
            .unwrap(),
    ];
    for clean in cases {
        let sigma = 0.05;
        let noisy = add_noise(&clean, NoiseConfig { sigma, seed: 3 }).unwrap();
        let rms = clean.input_rms();
        for j in 0..clean.dim() {
            let d: Vec<f64> = noisy
                .inputs
                .iter()
                .zip(&clean.inputs)
                .map(|(a, b)| a.as_slice()[j] - b.as_slice()[j])
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            let ratio = var.sqrt() / (sigma * rms[j]);
            assert!((ratio - 1.0).abs() < 0.05, "dimension {j}: ratio {ratio}");
        }
    }
}
