use mapid::maps::{sample_linspace, Dataset, MapSpec};
use mapid::netcore::{
    extract, forward, loss_and_gradient, mae, regularizers, Batch, NetworkConfig, NetworkParams,
    PenaltyScale, WeightKind, Widths,
};
use mapid::train::Alphas;
use proptest::prelude::*;

fn configs() -> Vec<NetworkConfig> {
    let mut wide = NetworkConfig::tinkerbell();
    wide.widths = Widths {
        linear: 3,
        signomial: 2,
        per_operator: 2,
    };
    vec![
        NetworkConfig::logistic(),
        NetworkConfig::gaussian(),
        NetworkConfig::tinkerbell(),
        wide,
    ]
}

/// Moderate random weights; exponents stay non-negative so the clamp never dominates.
fn params_for(cfg: &NetworkConfig, u: &[f64]) -> NetworkParams {
    let mut p = NetworkParams::zeros(cfg);
    let flat: Vec<f64> = p
        .flat_kinds()
        .iter()
        .zip(u.iter().cycle())
        .map(|(k, v)| match k {
            WeightKind::Signomial => 1.25 + 1.25 * v,
            _ => 0.8 * v,
        })
        .collect();
    p.set_flat(&flat);
    p
}

fn case() -> impl Strategy<Value = (NetworkConfig, NetworkParams, Vec<Vec<f64>>)> {
    (0..4usize).prop_flat_map(|c| {
        let cfg = configs().swap_remove(c);
        let n = cfg.n;
        let len = cfg.param_count();
        (
            prop::collection::vec(-1.0..1.0f64, len),
            prop::collection::vec(
                prop::collection::vec(prop_oneof![-1.5..-1e-3f64, 1e-3..1.5f64], n),
                100,
            ),
        )
            .prop_map(move |(u, xs)| (cfg.clone(), params_for(&cfg, &u), xs))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn extracted_expression_matches_the_network((cfg, p, xs) in case()) {
        let sys = extract(&cfg, &p);
        for x in &xs {
            let Ok(f) = forward(&cfg, &p, x) else { continue };
            let s = sys.evaluate(x).unwrap();
            for (a, b) in f.iter().zip(&s) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn loss_is_data_term_plus_weighted_penalties(
        (cfg, p, xs) in case(),
        half in 0.0..0.1f64,
        poly in 0.0..0.1f64,
        ops in 0.0..0.1f64,
        mean in any::<bool>(),
    ) {
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 0.5 * v).collect()).collect();
        let batch = Batch { n: cfg.n, x: xs.concat(), y: ys.concat() };
        let alphas = Alphas { half, poly, ops };
        let scale = if mean { PenaltyScale::Mean } else { PenaltyScale::Sum };
        let Ok((lb, _)) = loss_and_gradient(&cfg, &p, &batch, alphas, scale) else { return Ok(()) };
        let (h, q, o) = regularizers(&p, scale);
        let m = mae(&cfg, &p, &batch).unwrap();
        prop_assert!((lb.mae - m).abs() <= 1e-12 * (1.0 + m));
        prop_assert_eq!((lb.l_half, lb.l_poly, lb.l_ops), (h, q, o));
        let total = m + half * h + poly * q + ops * o;
        prop_assert!((lb.total - total).abs() <= 1e-12 * (1.0 + total));
    }

    #[test]
    fn hidden_unit_order_does_not_matter((cfg, p, xs) in case(), rot in 1usize..3) {
        let w = cfg.widths;
        let mut q = p.clone();
        for stack in &mut q.stacks {
            let last = stack.layers.last_mut().unwrap();
            // rotate the linear and signomial units of the top layer and the readout columns
            for (offset, width, m) in [(0, w.linear, &mut last.linear), (w.linear, w.signomial, &mut last.signomial)] {
                if width < 2 {
                    continue;
                }
                let perm: Vec<usize> = (0..width).map(|j| (j + rot) % width).collect();
                let rows: Vec<Vec<f64>> = (0..width).map(|j| m.row(perm[j]).to_vec()).collect();
                for (j, r) in rows.iter().enumerate() {
                    m.row_mut(j).copy_from_slice(r);
                }
                for o in 0..cfg.n {
                    let cols: Vec<f64> = (0..width).map(|j| stack.readout.get(o, offset + perm[j])).collect();
                    for (j, c) in cols.into_iter().enumerate() {
                        stack.readout.set(o, offset + j, c);
                    }
                }
            }
        }
        for x in &xs {
            let (Ok(a), Ok(b)) = (forward(&cfg, &p, x), forward(&cfg, &q, x)) else { continue };
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
            }
        }
    }
}

fn batch_of(ds: &Dataset) -> Batch {
    Batch::all(ds)
}

#[test]
fn exact_logistic_network_has_zero_error() {
    let cfg = NetworkConfig::logistic();
    let mut p = NetworkParams::zeros(&cfg);
    let layer = &mut p.stacks[0].layers[0];
    layer.linear.set(0, 0, 1.0);
    layer.signomial.set(0, 0, 2.0);
    let readout = &mut p.stacks[0].readout;
    readout.set(0, 0, 3.9);
    readout.set(0, 1, -3.9);
    let ds = sample_linspace(&MapSpec::logistic(), 0.0, 1.0, 200).unwrap();
    assert!(mae(&cfg, &p, &batch_of(&ds)).unwrap() < 1e-15);
}

#[test]
fn gradient_matches_central_differences() {
    let ds = sample_linspace(&MapSpec::gaussian(), -1.0, 1.0, 40).unwrap();
    let cfg = NetworkConfig::gaussian();
    let u: Vec<f64> = (0..cfg.param_count())
        .map(|i| ((i as f64 * 0.7548776662).fract() - 0.5) * 1.6)
        .collect();
    let p = params_for(&cfg, &u);
    let batch = batch_of(&ds);
    for scale in [PenaltyScale::Sum, PenaltyScale::Mean] {
        let (_, g) = loss_and_gradient(&cfg, &p, &batch, Alphas::default(), scale).unwrap();
        let g = g.to_flat();
        let base = p.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let at = |d: f64| {
                let mut q = p.clone();
                let mut f = base.clone();
                f[i] += d;
                q.set_flat(&f);
                loss_and_gradient(&cfg, &q, &batch, Alphas::default(), scale).unwrap().0.total
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(g[i].abs()).max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }
}
