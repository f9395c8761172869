use super::*;
use proptest::prelude::*;
use rand::Rng;

fn cfg(epochs: usize, lr: f64, batch: usize) -> TrainConfig {
    TrainConfig { learning_rate: lr, local_epochs: epochs, batch_size: batch, rounds: 1, clients: 2, seed: 3 }
}

fn toy_client() -> ClientDataset<f64> {
    let data = Dataset::new(1, vec![2.0], vec![0]).unwrap();
    ClientDataset::sized(ClientId(1), data).unwrap()
}

fn blobs_client(id: u32, n: usize, seed: u64) -> ClientDataset<f64> {
    let blobs = Blobs::axis_aligned(2, 2, 6.0, 0.5);
    let data = blobs.sample(n, &[], |c| c, &mut ChaCha20Rng::seed_from_u64(seed));
    ClientDataset::sized(ClientId(id), data).unwrap()
}

fn update(v: Vec<f64>) -> ModelUpdate<f64> {
    ModelUpdate { delta: v, client_id: ClientId(1), round: 0 }
}

#[test]
fn zero_epochs_zero_update() {
    let arch = Architecture::Logistic { features: 1, classes: 2 };
    let model = GlobalModel::<f64>::init(arch, 0);
    let u = local_train(&model, &toy_client(), &cfg(0, 0.1, 1)).unwrap();
    assert!(u.delta.iter().all(|&v| v == 0.0));
}

#[test]
fn one_sgd_step_matches_hand_gradient() {
    // Zero weights, x = 2, label 0: g = (-1, 1, -1/2, 1/2), delta = -lr * g.
    let arch = Architecture::Logistic { features: 1, classes: 2 };
    let model = GlobalModel::new(arch, vec![0.0; 4]).unwrap();
    let lr = 0.1;
    let u = local_train(&model, &toy_client(), &cfg(1, lr, 1)).unwrap();
    let expected = [lr, -lr, 0.5 * lr, -0.5 * lr];
    for (a, e) in u.delta.iter().zip(expected) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
}

#[test]
fn training_is_deterministic() {
    let arch = Architecture::Mlp { features: 2, hidden: 4, classes: 2, activation: Activation::Tanh };
    let model = GlobalModel::<f64>::init(arch, 5);
    let client = blobs_client(1, 40, 9);
    let a = local_train(&model, &client, &cfg(3, 0.1, 8)).unwrap();
    let b = local_train(&model, &client, &cfg(3, 0.1, 8)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_is_reported() {
    let arch = Architecture::Mlp { features: 2, hidden: 4, classes: 2, activation: Activation::Relu };
    let model = GlobalModel::<f64>::init(arch, 5);
    let mut client = blobs_client(1, 40, 9);
    let big: Vec<f64> = client.data.rows().flat_map(|(x, _)| x.iter().map(|v| v * 1e150)).collect();
    client.data = Dataset::new(2, big, client.data.labels().to_vec()).unwrap();
    assert!(matches!(local_train(&model, &client, &cfg(5, 1e10, 4)), Err(FlError::Divergence { .. })));
}

#[test]
fn shape_mismatch_rejected() {
    let model = GlobalModel::<f64>::init(Architecture::Logistic { features: 3, classes: 2 }, 0);
    assert!(matches!(
        local_train(&model, &toy_client(), &cfg(1, 0.1, 1)),
        Err(FlError::DimensionMismatch { .. })
    ));
}

#[test]
fn fedavg_examples() {
    let u = vec![0.3, -1.0, 2.0];
    let agg = fedavg_aggregate(&[update(u.clone()), update(u.clone())], &[1.0, 7.0]).unwrap();
    for (a, b) in agg.delta.iter().zip(&u) {
        assert!((a - b).abs() < 1e-15);
    }
    let agg = fedavg_aggregate(&[update(vec![1.0, 0.0]), update(vec![0.0, 1.0])], &[2.0, 2.0]).unwrap();
    assert_eq!(agg.delta, vec![0.5, 0.5]);
}

#[test]
fn fedavg_errors() {
    assert_eq!(fedavg_aggregate::<f64>(&[], &[]), Err(FlError::EmptyInput));
    assert!(matches!(
        fedavg_aggregate(&[update(vec![1.0]), update(vec![1.0, 2.0])], &[1.0, 1.0]),
        Err(FlError::DimensionMismatch { .. })
    ));
    assert_eq!(fedavg_aggregate(&[update(vec![1.0])], &[0.0]), Err(FlError::BadWeight));
}

#[test]
fn fedavg_matches_brute_force_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let dim = 13;
    let updates: Vec<ModelUpdate<f64>> =
        (0..5).map(|_| update((0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())).collect();
    let weights: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..4.0)).collect();
    let agg = fedavg_aggregate(&updates, &weights).unwrap();
    for j in 0..dim {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in (0..5).rev() {
            num += weights[k] * updates[k].delta[j];
            den += weights[k];
        }
        assert!((agg.delta[j] - num / den).abs() < 1e-12);
    }
}

#[test]
fn apply_update_examples() {
    let arch = Architecture::Logistic { features: 1, classes: 1 };
    let m = GlobalModel::new(arch, vec![1.0, 2.0]).unwrap();
    let zero = apply_update(&m, &update(vec![0.0, 0.0])).unwrap();
    assert_eq!(zero.weights, m.weights);
    assert_eq!(zero.round, 1);
    let next = apply_update(&m, &update(vec![0.5, -1.0])).unwrap();
    assert_eq!(next.weights, vec![1.5, 1.0]);
    assert!(apply_update(&m, &update(vec![1.0])).is_err());
}

#[test]
fn uniform_model_loss_is_ln2() {
    let arch = Architecture::Logistic { features: 2, classes: 2 };
    let m = GlobalModel::new(arch, vec![0.0; 6]).unwrap();
    let data = Dataset::new(2, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 5.0], vec![0, 1, 1, 1]).unwrap();
    let e = evaluate(&m, &data);
    assert!((e.loss - 2f64.ln()).abs() < 1e-9);
    // Ties resolve to class 0, so accuracy equals the class-0 share.
    assert!((e.accuracy - 0.25).abs() < 1e-12);
}

#[test]
fn labels_outside_model_score_zero() {
    let arch = Architecture::Logistic { features: 1, classes: 2 };
    let m = GlobalModel::new(arch, vec![0.0; 4]).unwrap();
    let data = Dataset::new(1, vec![1.0, 2.0], vec![5, 7]).unwrap();
    assert_eq!(evaluate(&m, &data).accuracy, 0.0);
}

#[test]
fn separable_blobs_reach_full_accuracy() {
    let arch = Architecture::Logistic { features: 2, classes: 2 };
    let mut model = GlobalModel::<f64>::init(arch, 0);
    let clients: Vec<_> = (1..=3).map(|i| blobs_client(i, 50, i as u64)).collect();
    for _ in 0..5 {
        let ups: Vec<_> = clients.iter().map(|c| local_train(&model, c, &cfg(2, 0.1, 10)).unwrap()).collect();
        let w: Vec<f64> = clients.iter().map(|c| c.weight).collect();
        model = apply_update(&model, &fedavg_aggregate(&ups, &w).unwrap()).unwrap();
        assert!(evaluate(&model, &clients[0].data).loss.is_finite());
    }
    let test = blobs_client(9, 200, 99);
    assert_eq!(evaluate(&model, &test.data).accuracy, 1.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for arch in [
        Architecture::Logistic { features: 3, classes: 4 },
        Architecture::Mlp { features: 3, hidden: 5, classes: 2, activation: Activation::Relu },
    ] {
        let mut m = GlobalModel::<f64>::init(arch, 11);
        m.weights.iter_mut().enumerate().for_each(|(i, w)| *w += i as f64 * 1e-3);
        m.round = 17;
        let bytes = m.to_checkpoint();
        let back = GlobalModel::<f64>::from_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint(), bytes);
    }
    assert!(GlobalModel::<f64>::from_checkpoint(b"FLMX").is_err());
}

/// Central finite differences of the mean batch loss.
fn numeric_grad(arch: &Architecture, p: &[f64], data: &Dataset<f64>) -> Vec<f64> {
    let loss = |q: &[f64]| -> f64 {
        data.rows().map(|(x, y)| arch.example_loss(q, x, y)).sum::<f64>() / data.len() as f64
    };
    let h = 1e-5;
    (0..p.len())
        .map(|i| {
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[i] += h;
            lo[i] -= h;
            (loss(&hi) - loss(&lo)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for trial in 0..20 {
        let features = rng.gen_range(1..5);
        let classes = rng.gen_range(2..5);
        let arch = if trial % 2 == 0 {
            Architecture::Logistic { features, classes }
        } else {
            Architecture::Mlp { features, hidden: rng.gen_range(1..6), classes, activation: Activation::Tanh }
        };
        let p: Vec<f64> = (0..arch.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = rng.gen_range(1..6);
        let x = (0..n * features).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let data = Dataset::new(features, x, y).unwrap();
        let mut g = vec![0.0; p.len()];
        arch.loss_and_grad(&p, data.rows(), &mut g);
        let fd = numeric_grad(&arch, &p, &data);
        let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 =
            g.iter().map(|a| a * a).sum::<f64>().sqrt() + fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / scale.max(1e-12) < 1e-5, "trial {trial}: rel err {}", diff / scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_linear_and_order_free(
        seed in any::<u64>(),
        k in 1usize..7,
        c in -5.0f64..5.0,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ups: Vec<_> = (0..k).map(|_| update((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
        let base = fedavg_aggregate(&ups, &w).unwrap();

        let scaled: Vec<_> = ups.iter().cloned().map(|u| u.scaled(c)).collect();
        let agg_scaled = fedavg_aggregate(&scaled, &w).unwrap();
        for (a, b) in agg_scaled.delta.iter().zip(&base.delta) {
            prop_assert!((a - c * b).abs() < 1e-12);
        }

        let mut idx: Vec<usize> = (0..k).collect();
        idx.reverse();
        idx.rotate_left(k / 2);
        let perm_u: Vec<_> = idx.iter().map(|&i| ups[i].clone()).collect();
        let perm_w: Vec<_> = idx.iter().map(|&i| w[i]).collect();
        let agg_perm = fedavg_aggregate(&perm_u, &perm_w).unwrap();
        for (a, b) in agg_perm.delta.iter().zip(&base.delta) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
