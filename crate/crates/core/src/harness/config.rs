use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::federation::CostModel;
use crate::fl::{Activation, Architecture, TrainConfig};
use crate::ledger::{ClientId, ConsensusKind, ConsensusStub};
use crate::unlearning::{CalibrationBase, PlanParams, Tamper, TamperMode, UnlearnOptions};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Honest,
    Tamper,
    KeyExposure,
    NoUnlearnBaseline,
    RetrainFromScratch,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Honest,
        ScenarioKind::Tamper,
        ScenarioKind::KeyExposure,
        ScenarioKind::NoUnlearnBaseline,
        ScenarioKind::RetrainFromScratch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Honest => "honest",
            ScenarioKind::Tamper => "tamper",
            ScenarioKind::KeyExposure => "key-exposure",
            ScenarioKind::NoUnlearnBaseline => "no-unlearn-baseline",
            ScenarioKind::RetrainFromScratch => "retrain-from-scratch",
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown scenario {s:?}")))
    }
}

/// Scalar type the run computes in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

/// Written as `target_label = 2` or `target_label = "rotate"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetLabel {
    /// Every target example gets this class.
    Class(usize),
    /// Each example's class shifted by one.
    Shift(Rotate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotate {
    Rotate,
}

impl TargetLabel {
    pub const ROTATE: TargetLabel = TargetLabel::Shift(Rotate::Rotate);

    pub fn apply(self, class: usize, classes: usize) -> usize {
        match self {
            TargetLabel::Class(c) => c,
            TargetLabel::Shift(_) => (class + 1) % classes,
        }
    }
}

/// Flat experiment configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub precision: Precision,

    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,

    pub calibration_ratio: f64,
    pub delta_t: f64,
    pub alpha: f64,
    /// `T` of the adaptive-round formula; the trained rounds if absent.
    pub max_rounds: Option<u64>,
    /// Local epochs between hash checkpoints during calibration. Read as
    /// the checkpoint cadence; the source setting is ambiguous.
    pub time_interval: usize,
    pub strict_calibration: bool,
    pub calibration_base: CalibrationBase,
    pub targets: Vec<u32>,

    pub consensus: ConsensusKind,
    pub validators: usize,
    pub pow_difficulty: u32,
    pub contract_latency_ms: f64,
    pub seal_ms: f64,
    pub pow_attempt_ms: f64,
    pub train_example_ms: f64,
    pub verify_op_ms: f64,
    pub rewrite_op_ms: f64,

    /// Security parameter: bit length of the subgroup order `q`.
    pub lambda: u32,

    /// `blobs`, or a path to a `f1,...,fd,label` file.
    pub dataset: String,
    pub features: usize,
    pub classes: usize,
    pub samples_per_client: usize,
    pub separation: f64,
    pub spread: f64,
    /// Offset of the target clients' clusters along every axis.
    pub target_shift: f64,
    /// Labels of the target clients' examples.
    pub target_label: TargetLabel,
    pub test_samples: usize,
    pub mia_holdout: usize,

    pub model: ModelKind,
    pub hidden: usize,
    pub activation: Activation,

    pub tamper_step: u64,
    pub tamper_mode: TamperMode,
    pub key_exposure_attempts: usize,
    /// Train a retrain-from-scratch reference alongside unlearning runs.
    pub reference: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cost = CostModel::default();
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioKind::Honest,
            seed: 0,
            precision: Precision::F64,
            clients: 10,
            rounds: 20,
            local_epochs: 5,
            batch_size: 16,
            learning_rate: 0.1,
            calibration_ratio: 0.5,
            delta_t: 1.0,
            alpha: 1.0,
            max_rounds: None,
            time_interval: 2,
            strict_calibration: true,
            calibration_base: CalibrationBase::default(),
            targets: vec![1],
            consensus: ConsensusKind::Dpos,
            validators: 3,
            pow_difficulty: 8,
            contract_latency_ms: cost.contract_latency_ms,
            seal_ms: cost.seal_ms,
            pow_attempt_ms: cost.pow_attempt_ms,
            train_example_ms: cost.train_example_ms,
            verify_op_ms: cost.verify_op_ms,
            rewrite_op_ms: cost.rewrite_op_ms,
            lambda: 256,
            dataset: "blobs".into(),
            features: 4,
            classes: 4,
            samples_per_client: 60,
            separation: 4.0,
            spread: 1.0,
            target_shift: -6.0,
            target_label: TargetLabel::Class(0),
            test_samples: 400,
            mia_holdout: 200,
            model: ModelKind::Mlp,
            hidden: 16,
            activation: Activation::Tanh,
            tamper_step: 3,
            tamper_mode: TamperMode::IncludeTarget,
            key_exposure_attempts: 10_000,
            reference: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let path = path.into();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.clients < 2 {
            return bad("clients must be at least 2");
        }
        if self.rounds == 0 || self.local_epochs == 0 {
            return bad("rounds and local_epochs must be positive");
        }
        if self.targets.is_empty() {
            return bad("targets must name at least one client");
        }
        if self.targets.iter().any(|&t| t == 0 || t as usize > self.clients) {
            return bad("targets must be client ids in 1..=clients");
        }
        if self.targets.len() >= self.clients {
            return bad("at least one client must be retained");
        }
        if self.validators == 0 {
            return bad("validators must be at least 1");
        }
        if self.time_interval == 0 {
            return bad("time_interval must be at least 1");
        }
        if self.features == 0 || self.classes < 2 {
            return bad("need at least one feature and two classes");
        }
        if self.samples_per_client == 0 || self.test_samples == 0 || self.mia_holdout == 0 {
            return bad("sample counts must be positive");
        }
        if !(self.spread.is_finite() && self.spread >= 0.0 && self.separation.is_finite()) {
            return bad("blob geometry must be finite");
        }
        if matches!(self.target_label, TargetLabel::Class(l) if l >= self.classes) {
            return bad("target_label must be a class index");
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(3..=4096).contains(&self.lambda) {
            return bad("lambda must lie in 3..=4096");
        }
        if self.pow_difficulty > 32 {
            return bad("pow_difficulty above 32 is impractical");
        }
        self.train_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.cost_model().validate().map_err(HarnessError::Config)?;
        self.plan_params().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            rounds: self.rounds,
            clients: self.clients,
            seed: self.seed,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            contract_latency_ms: self.contract_latency_ms,
            seal_ms: self.seal_ms,
            pow_attempt_ms: self.pow_attempt_ms,
            train_example_ms: self.train_example_ms,
            verify_op_ms: self.verify_op_ms,
            rewrite_op_ms: self.rewrite_op_ms,
        }
    }

    pub fn plan_params(&self) -> PlanParams {
        PlanParams { alpha: self.alpha, delta_t: self.delta_t, calibration_ratio: self.calibration_ratio }
    }

    pub fn consensus_stub(&self) -> ConsensusStub {
        let names = (0..self.validators).map(|i| format!("validator-{i}")).collect();
        match self.consensus {
            ConsensusKind::Dpos => ConsensusStub::dpos(names),
            ConsensusKind::Pow => ConsensusStub::pow(names, self.pow_difficulty, self.seed),
        }
    }

    pub fn architecture(&self, features: usize, classes: usize) -> Architecture {
        match self.model {
            ModelKind::Logistic => Architecture::Logistic { features, classes },
            ModelKind::Mlp => {
                Architecture::Mlp { features, hidden: self.hidden, classes, activation: self.activation }
            }
        }
    }

    pub fn target_ids(&self) -> Vec<ClientId> {
        self.targets.iter().map(|&t| ClientId(t)).collect()
    }

    pub fn unlearn_options(&self) -> UnlearnOptions {
        UnlearnOptions {
            plan: self.plan_params(),
            strict_calibration: self.strict_calibration,
            base: self.calibration_base,
            max_rounds: self.max_rounds,
            time_interval: self.time_interval,
            tamper: (self.scenario == ScenarioKind::Tamper)
                .then_some(Tamper { step: self.tamper_step, mode: self.tamper_mode }),
        }
    }
}
