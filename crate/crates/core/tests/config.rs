use std::path::PathBuf;

use fedunlearn::harness::*;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_desk_profile_is_the_default() {
    let cfg = ExperimentConfig::load(configs().join("desk.toml")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn shipped_large_profile_loads() {
    let cfg = ExperimentConfig::load(configs().join("paper.toml")).unwrap();
    assert_eq!((cfg.clients, cfg.rounds, cfg.local_epochs), (50, 40, 10));
}

#[test]
fn toml_round_trip() {
    let cfg = ExperimentConfig {
        scenario: ScenarioKind::Tamper,
        max_rounds: Some(12),
        target_label: TargetLabel::ROTATE,
        targets: vec![2, 5],
        ..ExperimentConfig::default()
    };
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn missing_keys_take_defaults() {
    let cfg = ExperimentConfig::from_toml("schema_version = 1\nseed = 7\n").unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.clients, 10);
}

#[test]
fn rejects_bad_configs() {
    let cases = [
        "schema_version = 2",
        "unknown_key = 1",
        "clients = 1",
        "targets = []",
        "targets = [0]",
        "targets = [11]",
        "clients = 2\ntargets = [1, 2]",
        "rounds = 0",
        "learning_rate = -1.0",
        "calibration_ratio = 0.0",
        "alpha = 0.0",
        "time_interval = 0",
        "lambda = 2",
        "target_label = 4",
        "contract_latency_ms = -5.0",
        "scenario = \"sideways\"",
    ];
    for text in cases {
        let err = ExperimentConfig::from_toml(text).expect_err(text);
        assert_eq!(err.exit_code(), EXIT_CONFIG, "{text}");
    }
}

#[test]
fn scenario_names_parse() {
    for kind in ScenarioKind::ALL {
        assert_eq!(kind.as_str().parse::<ScenarioKind>().unwrap(), kind);
    }
    assert!("nope".parse::<ScenarioKind>().is_err());
}

#[test]
fn target_label_forms() {
    let rot = ExperimentConfig::from_toml("target_label = \"rotate\"").unwrap();
    assert_eq!(rot.target_label, TargetLabel::ROTATE);
    assert_eq!(rot.target_label.apply(3, 4), 0);
    let fixed = ExperimentConfig::from_toml("target_label = 2").unwrap();
    assert_eq!(fixed.target_label.apply(0, 4), 2);
    assert!(ExperimentConfig::from_toml("target_label = \"spin\"").is_err());
}

#[test]
fn tamper_only_applies_to_the_tamper_scenario() {
    let honest = ExperimentConfig::default();
    assert!(honest.unlearn_options().tamper.is_none());
    let tamper = ExperimentConfig { scenario: ScenarioKind::Tamper, ..honest };
    assert_eq!(tamper.unlearn_options().tamper.unwrap().step, 3);
}
