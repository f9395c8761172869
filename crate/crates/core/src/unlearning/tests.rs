use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::chameleon::{ch_setup, ChameleonParams};
use crate::federation::{CostModel, Federation};
use crate::fl::{Architecture, ClientDataset, Dataset, TrainConfig};
use crate::ledger::ConsensusStub;

fn upd(delta: Vec<f64>, id: u32) -> ModelUpdate<f64> {
    ModelUpdate { delta, client_id: ClientId(id), round: 0 }
}

fn params() -> Arc<ChameleonParams> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    Arc::new(ch_setup(40, &mut rng).unwrap())
}

fn toy_federation(clients: u32, rounds: usize) -> Federation<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let data = (1..=clients)
        .map(|id| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in 0..12 {
                let c = i % 2;
                let s = if c == 0 { -2.0 } else { 2.0 };
                x.push(s + rng.gen_range(-0.5..0.5));
                x.push(rng.gen_range(-1.0..1.0) + id as f64 * 0.1);
                y.push(c);
            }
            ClientDataset::sized(ClientId(id), Dataset::new(2, x, y).unwrap()).unwrap()
        })
        .collect();
    let train = TrainConfig {
        learning_rate: 0.1,
        local_epochs: 2,
        batch_size: 4,
        rounds,
        clients: clients as usize,
        seed: 3,
    };
    let mut fed = Federation::new(
        params(),
        ConsensusStub::dpos(vec!["v0".into(), "v1".into()]),
        data,
        Architecture::Logistic { features: 2, classes: 2 },
        train,
        CostModel::default(),
    )
    .unwrap();
    for _ in 0..rounds {
        fed.train_round().unwrap();
    }
    fed
}

#[test]
fn three_clients_halve_the_retained_update() {
    let u = upd(vec![2.0, -4.0, 1.0], 2);
    let agg = calibrate_aggregate(&[u], &[1.0], 3, true).unwrap();
    assert_eq!(agg.delta, vec![1.0, -2.0, 0.5]);
    assert_eq!(agg.client_id, ClientId::SERVER);
}

#[test]
fn lenient_mode_is_the_weighted_mean() {
    let us = [upd(vec![1.0, 0.0], 1), upd(vec![3.0, 2.0], 2)];
    let agg = calibrate_aggregate(&us, &[1.0, 3.0], 10, false).unwrap();
    assert_eq!(agg.delta, vec![2.5, 1.5]);
}

#[test]
fn zero_updates_calibrate_to_zero() {
    let us = [upd(vec![0.0; 4], 1), upd(vec![0.0; 4], 2)];
    let agg = calibrate_aggregate(&us, &[2.0, 5.0], 3, true).unwrap();
    assert_eq!(agg.delta, vec![0.0; 4]);
}

#[test]
fn calibration_input_errors() {
    assert!(matches!(calibrate_aggregate::<f64>(&[], &[], 3, true), Err(UnlearnError::EmptyRetained)));
    let u = upd(vec![1.0], 1);
    assert!(matches!(
        calibrate_aggregate(std::slice::from_ref(&u), &[1.0], 1, true),
        Err(UnlearnError::Config(_))
    ));
    assert!(calibrate_aggregate(std::slice::from_ref(&u), &[0.0], 3, true).is_err());
    assert!(calibrate_aggregate(std::slice::from_ref(&u), &[1.0, 1.0], 3, true).is_err());
    assert!(calibrate_aggregate(&[u, upd(vec![1.0, 2.0], 2)], &[1.0, 1.0], 3, true).is_err());
}

#[test]
fn calibration_matches_brute_force() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let k = 6;
    for _ in 0..50 {
        let us: Vec<_> = (0..k - 1)
            .map(|i| upd((0..7).map(|_| rng.gen_range(-3.0..3.0)).collect(), i as u32 + 1))
            .collect();
        let ws: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.1..4.0)).collect();
        let agg = calibrate_aggregate(&us, &ws, k, true).unwrap();
        let wsum: f64 = ws.iter().sum();
        for j in 0..7 {
            let mut num = 0.0;
            for (u, w) in us.iter().zip(&ws) {
                num += w * u.delta[j];
            }
            let want = num / ((k - 1) as f64 * wsum);
            assert!((agg.delta[j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn global_calibrate_adds_the_update() {
    let arch = Architecture::Logistic { features: 1, classes: 2 };
    let m = GlobalModel::new(arch, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let u = upd(vec![0.5, -0.5, 0.0, 1.0], 0);
    let half = calibrate_aggregate(&[u], &[1.0], 3, true).unwrap();
    let next = global_calibrate(&m, &half).unwrap();
    assert_eq!(next.weights, apply_update(&m, &half).unwrap().weights);
    assert_eq!(next.weights, vec![1.25, 1.75, 3.0, 4.5]);
}

#[test]
fn theta_reference_angles() {
    let a = upd(vec![1.0, 0.0], 1);
    assert_eq!(compute_theta(&a, &upd(vec![2.0, 0.0], 0)).unwrap(), 0.0);
    assert!((compute_theta(&a, &upd(vec![0.0, 3.0], 0)).unwrap() - FRAC_PI_2).abs() < 1e-15);
    assert!((compute_theta(&a, &upd(vec![-1.0, 0.0], 0)).unwrap() - PI).abs() < 1e-15);
    assert_eq!(compute_theta(&a, &upd(vec![0.0, 0.0], 0)).unwrap(), FRAC_PI_2);
    assert!(compute_theta(&a, &upd(vec![1.0], 0)).is_err());
}

#[test]
fn theta_tilde_recurrence() {
    let mut tr = ContributionTracker::default();
    let c = ClientId(1);
    assert_eq!(tr.update_theta_tilde(c, 1.0, 1).unwrap(), 1.0);
    assert_eq!(tr.update_theta_tilde(c, 0.5, 2).unwrap(), 0.75);
    let v = tr.update_theta_tilde(c, 0.9, 3).unwrap();
    assert!((v - 0.8).abs() < 1e-15);
    assert_eq!(tr.theta_tilde(c), Some(v));
}

#[test]
fn theta_tilde_rejects_gaps_and_bad_angles() {
    let mut tr = ContributionTracker::default();
    let c = ClientId(4);
    match tr.update_theta_tilde(c, 0.3, 2) {
        Err(UnlearnError::NonConsecutiveRound { client, expected, got }) => {
            assert_eq!((client, expected, got), (c, 1, 2))
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(tr.update_theta_tilde(c, 4.0, 1).is_err());
    assert!(tr.update_theta_tilde(c, f64::NAN, 1).is_err());
    assert!(tr.theta_tilde(c).is_none());
}

proptest! {
    #[test]
    fn theta_tilde_is_the_running_mean(thetas in prop::collection::vec(0.0..PI, 1..40)) {
        let mut tr = ContributionTracker::default();
        let c = ClientId(1);
        let mut last = 0.0;
        for (i, &th) in thetas.iter().enumerate() {
            last = tr.update_theta_tilde(c, th, i as u64 + 1).unwrap();
        }
        let mean = thetas.iter().sum::<f64>() / thetas.len() as f64;
        prop_assert!((last - mean).abs() < 1e-12);
    }

    #[test]
    fn calibration_is_scaled_fedavg(
        retained in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..5),
        weights in prop::collection::vec(0.1..4.0f64, 5),
        extra in 1usize..4,
    ) {
        let us: Vec<_> = retained.iter().enumerate().map(|(i, d)| upd(d.clone(), i as u32 + 2)).collect();
        let ws = &weights[..us.len()];
        let k = us.len() + extra;
        let cal = calibrate_aggregate(&us, ws, k, true).unwrap();
        let avg = crate::fl::fedavg_aggregate(&us, ws).unwrap();
        for j in 0..3 {
            prop_assert!((cal.delta[j] - avg.delta[j] / (k - 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn calibration_is_linear(
        a in prop::collection::vec(-5.0..5.0f64, 4),
        b in prop::collection::vec(-5.0..5.0f64, 4),
        s in -3.0..3.0f64,
    ) {
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let ca = calibrate_aggregate(&[upd(a, 1)], &[2.0], 4, true).unwrap();
        let cb = calibrate_aggregate(&[upd(b, 1)], &[2.0], 4, true).unwrap();
        let cab = calibrate_aggregate(&[upd(ab, 1)], &[2.0], 4, true).unwrap();
        for j in 0..4 {
            prop_assert!((cab.delta[j] - (ca.delta[j] + s * cb.delta[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn gompertz_reference_value() {
    let f = gompertz_contribution(1.0, 1.0);
    assert!((f - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    assert!((f - 0.632_120_558_8).abs() < 1e-9);
}

#[test]
fn gompertz_increases_with_angle() {
    let grid: Vec<f64> = (0..=100).map(|i| PI * i as f64 / 100.0).collect();
    for alpha in [0.5, 1.0, 2.0] {
        for w in grid.windows(2) {
            assert!(gompertz_contribution(w[1], alpha) > gompertz_contribution(w[0], alpha));
        }
    }
}

fn tracker_with(values: &[(u32, f64)]) -> ContributionTracker {
    let mut tr = ContributionTracker::default();
    for &(c, th) in values {
        tr.update_theta_tilde(ClientId(c), th, 1).unwrap();
    }
    tr
}

#[test]
fn adaptive_rounds_quarter_share() {
    // Equal scores with four retained clients: target share 1/4.
    let tr = tracker_with(&[(1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)]);
    assert_eq!(adaptive_rounds(&[ClientId(1)], &tr, 1.0, 40).unwrap(), 30);
    let f = gompertz_contribution(1.0, 1.0);
    assert_eq!(round_budget(f, &[f; 4], 40), Some(30.0));
    assert_eq!(round_budget(1.0, &[1.0; 4], 40), Some(0.75 * 40.0));
}

#[test]
fn adaptive_rounds_edges() {
    assert_eq!(round_budget(0.0, &[0.5, 0.5], 20), Some(20.0));
    assert_eq!(round_budget(1.0, &[0.0, 0.0], 20), None);
    assert_eq!(round_budget(1.0, &[0.5, 0.5], 20), Some(0.0));

    // Target dominating the retained sum clamps at zero.
    let tr = tracker_with(&[(1, PI), (2, 0.0)]);
    assert_eq!(adaptive_rounds(&[ClientId(1)], &tr, 1.0, 20).unwrap(), 0);

    // An untracked target scores zero and keeps the full budget.
    let tr = tracker_with(&[(2, 1.0), (3, 1.0)]);
    assert_eq!(adaptive_rounds(&[ClientId(1)], &tr, 1.0, 20).unwrap(), 20);

    assert!(matches!(adaptive_rounds(&[], &tr, 1.0, 20), Err(UnlearnError::EmptyTargets)));
    assert!(adaptive_rounds(&[ClientId(2)], &tr, 0.0, 20).is_err());
    let lone = tracker_with(&[(1, 1.0)]);
    assert!(matches!(adaptive_rounds(&[ClientId(1)], &lone, 1.0, 20), Err(UnlearnError::EmptyRetained)));
}

#[test]
fn adaptive_rounds_non_increasing_in_target_angle() {
    let mut prev = u64::MAX;
    for i in 0..=50 {
        let th = PI * i as f64 / 50.0;
        let tr = tracker_with(&[(1, th), (2, 1.0), (3, 1.2), (4, 0.8)]);
        let r = adaptive_rounds(&[ClientId(1)], &tr, 1.0, 40).unwrap();
        assert!(r <= prev && r <= 40);
        prev = r;
    }
}

#[test]
fn plan_derivation() {
    let tr = tracker_with(&[(1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)]);
    let plan = RetrainPlan::derive(&[ClientId(1)], &tr, PlanParams::default(), 40, 10).unwrap();
    assert_eq!(plan.t_tilde, 30);
    assert_eq!(plan.calibrated_epochs, 5);
    assert_eq!(plan.estimated_reduction(40), 20.0);
    let bad = PlanParams { calibration_ratio: 0.0, ..PlanParams::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn empty_request_is_rejected() {
    assert!(matches!(UnlearnRequest::new(Vec::new(), 0), Err(UnlearnError::EmptyTargets)));
    let r = UnlearnRequest::new([ClientId(3), ClientId(1), ClientId(3)], 2).unwrap();
    assert_eq!(r.targets(), vec![ClientId(1), ClientId(3)]);
    assert!(r.is_target(ClientId(3)) && !r.is_target(ClientId(2)));
}

#[test]
fn honest_unlearning_verifies_every_step() {
    let mut fed = toy_federation(4, 3);
    let req = UnlearnRequest::new([ClientId(1)], 2).unwrap();
    let out = run_unlearning(&mut fed, req, &UnlearnOptions::default()).unwrap();
    out.ensure_verified().unwrap();
    assert!(!out.steps.is_empty());
    assert!(out.steps.iter().all(|s| s.verdict.accepted()));
    let state = fed.ledger.state().clone();
    for s in &out.steps {
        let v =
            verify_committed_calibration(&state, &fed.store, fed.server_key(), s.ledger_round, true).unwrap();
        assert_eq!(v.verdict, Verdict::Accept);
        assert!(v.hash_ops >= 2);
    }
    assert!(out.rewrite.all_succeeded());
    assert_eq!(out.rewrite.records.len(), 3);
    assert!(out.rewrite.records.iter().all(|r| r.owner == ClientId(1)));
}

#[test]
fn lenient_verification_rejects_strict_commitments() {
    let mut fed = toy_federation(3, 2);
    let req = UnlearnRequest::new([ClientId(2)], 1).unwrap();
    let out = run_unlearning(&mut fed, req, &UnlearnOptions::default()).unwrap();
    let round = out.steps[0].ledger_round;
    let state = fed.ledger.state().clone();
    let v = verify_committed_calibration(&state, &fed.store, fed.server_key(), round, false).unwrap();
    assert_eq!(v.verdict, Verdict::Reject(Rejection::HashMismatch));
}

#[test]
fn tampered_retained_payload_is_rejected() {
    let mut fed = toy_federation(4, 2);
    let req = UnlearnRequest::new([ClientId(1)], 1).unwrap();
    let out = run_unlearning(&mut fed, req, &UnlearnOptions::default()).unwrap();
    let step = &out.steps[0];
    let state = fed.ledger.state().clone();
    let commit = state.calibration_hashes[&step.ledger_round].clone();
    let victim = state.local_hashes[&commit.source_round][&ClientId(2)].clone();
    let (mut delta, _) = fed.store.get(&victim).unwrap();
    delta[0] += 1.0;
    fed.store.overwrite_payload_unchecked(&victim, &delta).unwrap();
    let v =
        verify_committed_calibration(&state, &fed.store, fed.server_key(), step.ledger_round, true).unwrap();
    assert_eq!(v.verdict, Verdict::Reject(Rejection::HashMismatch));
}

#[test]
fn missing_retained_entry_is_reported() {
    let mut fed = toy_federation(3, 2);
    let req = UnlearnRequest::new([ClientId(1)], 1).unwrap();
    let out = run_unlearning(&mut fed, req, &UnlearnOptions::default()).unwrap();
    let state = fed.ledger.state().clone();
    let commit = state.calibration_hashes[&out.steps[0].ledger_round].clone();
    let mut retained = state.query_hashes(commit.source_round, &commit.excluded).unwrap();
    let ghost = state.global_hashes[&0].clone();
    let absent = ChHashValue(ghost.0.clone() * 2u32 % fed.params().p());
    retained.insert(ClientId(9), absent.clone());
    let weights: BTreeMap<ClientId, f64> =
        state.registered_keys.iter().map(|(&c, r)| (c, r.weight)).collect();
    let v = verify_calibration(fed.server_key(), &commit, &retained, &weights, 3, true, &fed.store).unwrap();
    assert_eq!(v.verdict, Verdict::Reject(Rejection::MissingEntry(absent.to_hex())));
}

#[test]
fn include_target_tamper_is_caught_at_its_step() {
    let mut fed = toy_federation(4, 3);
    let opts = UnlearnOptions {
        tamper: Some(Tamper { step: 1, mode: TamperMode::IncludeTarget }),
        ..UnlearnOptions::default()
    };
    let req = UnlearnRequest::new([ClientId(1)], 2).unwrap();
    let out = run_unlearning(&mut fed, req, &opts).unwrap();
    assert_eq!(out.abort, Some((1, Rejection::HashMismatch)));
    assert!(out.steps[0].verdict.accepted());
    assert_eq!(out.steps.last().unwrap().step, 1);
    assert!(matches!(out.ensure_verified(), Err(UnlearnError::Verification { step: 1, .. })));
}

#[test]
fn wrong_payload_tamper_is_caught() {
    let mut fed = toy_federation(3, 2);
    let opts = UnlearnOptions {
        tamper: Some(Tamper { step: 0, mode: TamperMode::WrongPayload }),
        ..UnlearnOptions::default()
    };
    let req = UnlearnRequest::new([ClientId(3)], 1).unwrap();
    let out = run_unlearning(&mut fed, req, &opts).unwrap();
    assert_eq!(out.abort, Some((0, Rejection::HashMismatch)));
}

#[test]
fn rewrite_leaves_other_entries_untouched() {
    let mut fed = toy_federation(3, 2);
    let before: BTreeMap<_, _> = fed.store.entries().map(|e| (e.key.clone(), e.encode())).collect();
    let sk = fed.participant(ClientId(2)).unwrap().keys().sk.clone();
    let state = fed.ledger.state().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let report = unlearn_rewrite_all(&[(ClientId(2), &sk)], &mut fed.store, &state, &mut rng).unwrap();
    assert_eq!(report.records.len(), 2);
    assert!(report.all_succeeded());
    let mut rounds: Vec<_> = report.records.iter().map(|r| r.round).collect();
    rounds.sort();
    assert_eq!(rounds, vec![Some(0), Some(1)]);
    for e in fed.store.entries() {
        let rewritten = report.records.iter().any(|r| r.key == e.key);
        assert_eq!(e.rewritten, rewritten);
        assert!(fed.store.verify_entry(&e.key).unwrap());
        if !rewritten {
            assert_eq!(before[&e.key], e.encode());
        }
    }
}

#[test]
fn rewrite_with_foreign_trapdoor_is_reported() {
    let mut fed = toy_federation(3, 1);
    let wrong = fed.participant(ClientId(1)).unwrap().keys().sk.clone();
    let state = fed.ledger.state().clone();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let report = unlearn_rewrite_all(&[(ClientId(2), &wrong)], &mut fed.store, &state, &mut rng).unwrap();
    assert_eq!(report.failures().count(), 1);
    assert!(fed.store.entries().all(|e| !e.rewritten));

    let none = unlearn_rewrite_all(&[], &mut fed.store, &state, &mut rng).unwrap();
    assert!(none.records.is_empty() && none.all_succeeded());
}
