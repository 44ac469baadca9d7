//! Randomized invariants across the public surface.

use proptest::prelude::*;

use setcon::datasets::{gridworld_trace, GridWorldConfig};
use setcon::diffcore::{checkpoint, Graph, ParameterTree, Role, Tensor};
use setcon::evaluation::adjusted_rand_index;
use setcon::harness::{resolve_lr, ExperimentConfig};
use setcon::model::{init_params, set_encode, ModelConfig};
use setcon::objectives::{setcon_loss, slotwise_loss, ContrastiveConfig};

fn labels(n: usize, k: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..k, n)
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

fn loss(s: &Tensor<f64>, p: &Tensor<f64>, slotwise: bool) -> f64 {
    let mut g = Graph::new();
    let (a, b) = (g.constant(s.clone()), g.constant(p.clone()));
    let cfg = ContrastiveConfig::default();
    let l = if slotwise {
        slotwise_loss(&mut g, a, b, &cfg)
    } else {
        setcon_loss(&mut g, a, b, &cfg)
    };
    g.value(l.unwrap()).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in tensor(vec![3, 5])) {
        let mut g = Graph::new();
        let v = g.constant(x);
        let s = g.softmax(v, 1).unwrap();
        for row in g.value(s).data().chunks(5) {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ari_is_symmetric_bounded_and_relabel_invariant(
        (a, b) in (2usize..40).prop_flat_map(|n| (labels(n, 5), labels(n, 5))),
        shift in 1u32..50,
    ) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        let relabeled: Vec<u32> = b.iter().map(|&x| x * 3 + shift).collect();
        prop_assert!((adjusted_rand_index(&a, &relabeled).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn infonce_losses_are_nonnegative_and_finite(
        s in tensor(vec![2, 4, 3, 2]),
        p in tensor(vec![2, 2, 3, 2]),
        zs in tensor(vec![3, 4, 5]),
        zp in tensor(vec![3, 2, 5]),
    ) {
        for v in [loss(&zs, &zp, false), loss(&s, &p, true)] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn set_embedding_ignores_slot_order(seed in 0u64..1000, rot in 1usize..4) {
        let cfg = ModelConfig::default();
        let params = init_params::<f64>(&cfg, 5, 5, seed).unwrap();
        let (k, d) = (cfg.num_slots, cfg.slot_dim);
        let slots = Tensor::from_fn(&[2, k, d], |i| ((i as f64 + seed as f64) * 0.37).sin());
        let rotated = Tensor::from_fn(&[2, k, d], |i| {
            let (b, j, c) = (i / (k * d), (i / d) % k, i % d);
            slots.data()[b * k * d + ((j + rot) % k) * d + c]
        });
        let embed = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let p = params.bind_constant(&mut g);
            let v = g.constant(x.clone());
            let z = set_encode(&mut g, &p, v).unwrap();
            g.value(z).clone()
        };
        prop_assert!(embed(&slots).max_abs_diff(&embed(&rotated)) < 1e-12);
    }

    #[test]
    fn gridworld_objects_move_one_cell_and_stay_inside(seed in any::<u64>()) {
        let cfg = GridWorldConfig::default();
        let trace = gridworld_trace(seed, &cfg).unwrap();
        for pair in trace.states.windows(2) {
            for (a, b) in pair[0].objects.iter().zip(&pair[1].objects) {
                prop_assert!(b.row < cfg.size && b.col < cfg.size);
                let dist = (a.row as i64 - b.row as i64).abs() + (a.col as i64 - b.col as i64).abs();
                prop_assert_eq!(dist, 1);
                prop_assert_eq!(a.color, b.color);
            }
        }
        prop_assert_eq!(gridworld_trace(seed, &cfg).unwrap().states, trace.states);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let mut tree = ParameterTree::<f64>::new();
        tree.insert("a.weight", Role::Weight, Tensor::new(vec![values.len()], values.clone()).unwrap()).unwrap();
        tree.insert("b.bias", Role::Bias, Tensor::from_fn(&[2, 2], |i| values[i % values.len()] * 0.5)).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ckpt");
        checkpoint::save(&dir, &tree, serde_json::json!({ "note": values[0] })).unwrap();
        let (back, meta) = checkpoint::load::<f64>(&dir).unwrap();
        prop_assert!(back.bit_identical(&tree));
        prop_assert_eq!(meta["note"].as_f64().unwrap().to_bits(), values[0].to_bits());
    }

    #[test]
    fn learning_rate_scales_linearly_with_batch(base in 1e-5f64..1e-2, batch in 1usize..2048) {
        let lr = resolve_lr(base, batch).unwrap();
        prop_assert!((lr - base * batch as f64 / 256.0).abs() <= 1e-15 * lr.max(1.0));
    }

    #[test]
    fn overrides_land_on_their_key(steps in 1u64..100_000, tau in 0.01f64..5.0) {
        let cfg = ExperimentConfig::resolve(None, &[format!("train.steps={steps}"), format!("loss.tau={tau}")]).unwrap();
        prop_assert_eq!(cfg.train.steps, steps);
        prop_assert_eq!(cfg.loss.tau, tau);
        let again = ExperimentConfig::resolve(Some(&cfg.render()), &[]).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
