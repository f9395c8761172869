use fedunlearn::harness::*;
use fedunlearn::unlearning::{Rejection, Verdict};

fn desk(kind: ScenarioKind) -> ExperimentConfig {
    ExperimentConfig { scenario: kind, lambda: 64, ..ExperimentConfig::default() }
}

fn small(kind: ScenarioKind) -> ExperimentConfig {
    ExperimentConfig {
        clients: 4,
        rounds: 4,
        local_epochs: 2,
        samples_per_client: 20,
        test_samples: 80,
        mia_holdout: 40,
        key_exposure_attempts: 200,
        tamper_step: 1,
        ..desk(kind)
    }
}

#[test]
fn honest_desk_run_accepts_everywhere() {
    let cfg = desk(ScenarioKind::Honest);
    let (report, _) = run_scenario::<f64>(&cfg).unwrap();
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(report.exit_code(), 0);
    let unlearn: Vec<_> = report.records.iter().filter(|r| r.phase == "unlearn").collect();
    assert!(!unlearn.is_empty());
    assert!(unlearn.iter().all(|r| r.verification == "accept"));
    let s = &report.summary;
    assert!(s.final_accuracy > 0.9);
    assert_eq!(s.erasure_clean, Some(true));
    assert_eq!(s.onchain_unchanged, Some(true));
    assert!(s.chain_ok);
    assert_eq!(s.rewrite_failures, Some(0));
    assert_eq!(s.rewritten_entries, Some(cfg.rounds as u64));
    assert!(s.lv_ops > 0 && s.lr_ops > 0);
    for r in &report.records {
        assert!((0.0..=1.0).contains(&r.mia_precision) && (0.0..=1.0).contains(&r.mia_recall));
        let sum = r.time_lv + r.time_lr + r.time_commit + r.time_seal + r.time_train;
        assert!((r.time_total - sum).abs() < 1e-9 * sum.max(1.0));
    }
}

#[test]
fn tamper_is_rejected_at_the_injected_step() {
    let cfg = desk(ScenarioKind::Tamper);
    let (report, _) = run_scenario::<f64>(&cfg).unwrap();
    assert_eq!(
        report.outcome,
        Outcome::VerificationFailure { step: cfg.tamper_step, reason: Rejection::HashMismatch }
    );
    assert_eq!(report.exit_code(), EXIT_VERIFICATION_FAILURE);
    let unlearn: Vec<_> = report.records.iter().filter(|r| r.phase == "unlearn").collect();
    let rejected: Vec<_> = unlearn.iter().filter(|r| r.verification == "reject").collect();
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0].round, cfg.tamper_step);
    assert_eq!(unlearn.last().unwrap().round, cfg.tamper_step);
}

#[test]
fn wrong_payload_tamper_is_rejected() {
    let cfg = ExperimentConfig {
        tamper_mode: fedunlearn::unlearning::TamperMode::WrongPayload,
        ..small(ScenarioKind::Tamper)
    };
    let (report, _) = run_scenario::<f64>(&cfg).unwrap();
    assert!(matches!(report.outcome, Outcome::VerificationFailure { step: 1, .. }));
}

#[test]
fn key_exposure_forges_nothing() {
    let cfg = small(ScenarioKind::KeyExposure);
    let (report, _) = run_scenario::<f64>(&cfg).unwrap();
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(report.summary.forgery_attempts, Some(200));
    assert_eq!(report.summary.forgeries_accepted, Some(0));
}

#[test]
fn exposure_attack_counts_attempts() {
    let cfg = small(ScenarioKind::KeyExposure);
    let mut trained = run_training::<f64>(&cfg).unwrap();
    let rep = key_exposure_attack(&mut trained.fed, fedunlearn::ClientId(2), 50, 9).unwrap();
    assert_eq!(rep.attempts, 50);
    assert_eq!(rep.accepted, 0);
    assert_eq!(rep.store_rewrites_accepted, 0);
}

#[test]
fn baselines_run() {
    let (base, _) = run_scenario::<f64>(&small(ScenarioKind::NoUnlearnBaseline)).unwrap();
    assert_eq!(base.outcome, Outcome::Completed);
    assert!(base.records.iter().all(|r| r.phase == "train"));
    assert_eq!(base.summary.mia_recall_after, None);

    let (scratch, fed) = run_scenario::<f64>(&small(ScenarioKind::RetrainFromScratch)).unwrap();
    assert!(scratch.records.iter().all(|r| r.phase == "retrain"));
    assert_eq!(fed.participants().len(), 3);
    assert!(scratch.summary.full_retrain_ms.unwrap() > 0.0);
}

#[test]
fn single_precision_run_verifies_at_its_precision() {
    let cfg = ExperimentConfig { precision: Precision::F32, ..small(ScenarioKind::Honest) };
    let (report, mut fed) = run_scenario::<f32>(&cfg).unwrap();
    assert_eq!(report.outcome, Outcome::Completed);
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(dir.path(), &cfg, &report, &mut fed).unwrap();
    let art = load_artifacts::<f32>(dir.path()).unwrap();
    let (chain, verdicts) = verify_artifacts(&art).unwrap();
    assert!(chain.is_ok());
    assert!(verdicts.iter().all(|(_, v)| v.accepted()));
}

#[test]
fn same_seed_same_records() {
    let cfg = small(ScenarioKind::Honest);
    let (a, fa) = run_scenario::<f64>(&cfg).unwrap();
    let (b, fb) = run_scenario::<f64>(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(to_csv(&a.records).unwrap(), to_csv(&b.records).unwrap());
    assert_eq!(fa.ledger.dump_string(), fb.ledger.dump_string());

    let other = ExperimentConfig { seed: 1, ..cfg };
    let (c, _) = run_scenario::<f64>(&other).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn consensus_choice_leaves_state_and_counts_alone() {
    let dpos = small(ScenarioKind::Honest);
    let pow = ExperimentConfig {
        consensus: fedunlearn::ledger::ConsensusKind::Pow,
        pow_difficulty: 6,
        ..dpos.clone()
    };
    let (ra, fa) = run_scenario::<f64>(&dpos).unwrap();
    let (rb, fb) = run_scenario::<f64>(&pow).unwrap();
    assert_eq!(fa.ledger.state(), fb.ledger.state());
    assert_eq!(fa.clock.ops.lv, fb.clock.ops.lv);
    assert_eq!(fa.clock.ops.lr, fb.clock.ops.lr);
    assert_eq!(ra.summary.lv_ops, rb.summary.lv_ops);
    assert_ne!(fa.ledger.dump_string(), fb.ledger.dump_string());
    assert!(fb.clock.timing.seal != fa.clock.timing.seal);
}

#[test]
fn artifacts_reload_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ScenarioKind::Honest);
    let (report, mut fed) = run_scenario::<f64>(&cfg).unwrap();
    write_artifacts(dir.path(), &cfg, &report, &mut fed).unwrap();
    for f in [
        "metrics.csv",
        "metrics.jsonl",
        "ledger.jsonl",
        "consensus.json",
        "params.json",
        "model.ckpt",
        "config.toml",
        "summary.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(read_csv(&std::fs::read(dir.path().join("metrics.csv")).unwrap()).unwrap(), report.records);

    let art = load_artifacts::<f64>(dir.path()).unwrap();
    assert_eq!(art.config, cfg);
    assert_eq!(art.ledger.state(), fed.ledger.state());
    let (chain, verdicts) = verify_artifacts(&art).unwrap();
    assert!(chain.is_ok());
    assert!(!verdicts.is_empty());
    assert!(verdicts.iter().all(|(_, v)| *v == Verdict::Accept));
}

#[test]
fn tampered_artifacts_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(ScenarioKind::Tamper);
    let (report, mut fed) = run_scenario::<f64>(&cfg).unwrap();
    write_artifacts(dir.path(), &cfg, &report, &mut fed).unwrap();
    let art = load_artifacts::<f64>(dir.path()).unwrap();
    let (_, verdicts) = verify_artifacts(&art).unwrap();
    assert!(verdicts.iter().any(|(_, v)| !v.accepted()));
}

#[test]
fn invalid_configs_are_config_errors() {
    let bad = ExperimentConfig { targets: vec![11], ..desk(ScenarioKind::Honest) };
    let err = run_scenario::<f64>(&bad).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}
