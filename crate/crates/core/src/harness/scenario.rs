use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioKind};
use super::metrics::{emit_metrics, MetricsRecord};
use super::mia::mia_probe;
use super::HarnessError;
use crate::chameleon::{
    ch_setup, ch_verify, digest_bytes, mod_inverse, ChameleonParams, KeyRecord, PublicKey, Randomizer,
};
use crate::codec;
use crate::federation::{Federation, OpCounts, Timing};
use crate::fl::{evaluate, read_delimited, Blobs, ClientDataset, Dataset, GlobalModel};
use crate::ledger::{ClientId, ConsensusStub, Ledger};
use crate::offchain::OffchainStore;
use crate::scalar::Scalar;
use crate::unlearning::{
    run_unlearning, verify_committed_calibration, Rejection, UnlearnOutcome, UnlearnRequest, Verdict,
};

const PARAMS_SALT: u64 = 0x7061_7261_6d73;
const DATA_SALT: u64 = 0x6461_7461;
const ATTACK_SALT: u64 = 0x6174_7461_636b;

/// Client datasets plus the evaluation splits.
#[derive(Debug, Clone)]
pub struct Workload<T: Scalar> {
    pub clients: Vec<ClientDataset<T>>,
    /// Held-out data from the retained clients' distribution.
    pub test: Dataset<T>,
    /// Threshold calibration set for the membership probe, same distribution
    /// as `test`.
    pub holdout: Dataset<T>,
    /// Unseen data from the targets' distribution: the probe's non-members.
    pub target_holdout: Dataset<T>,
    pub features: usize,
    pub classes: usize,
}

impl<T: Scalar> Workload<T> {
    /// Training data of the given clients, concatenated.
    pub fn members(&self, ids: &[ClientId]) -> Dataset<T> {
        let parts: Vec<&Dataset<T>> =
            self.clients.iter().filter(|c| ids.contains(&c.client_id)).map(|c| &c.data).collect();
        Dataset::concat(&parts)
    }

    pub fn retained(&self, targets: &[ClientId]) -> Vec<ClientDataset<T>> {
        self.clients.iter().filter(|c| !targets.contains(&c.client_id)).cloned().collect()
    }
}

/// Synthetic blobs, with the targets drawn from a shifted and relabelled
/// copy, or a delimited file split evenly across clients.
pub fn build_workload<T: Scalar>(cfg: &ExperimentConfig) -> Result<Workload<T>, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ DATA_SALT);
    let targets = cfg.target_ids();
    if cfg.dataset != "blobs" {
        return file_workload(cfg, &mut rng);
    }
    let blobs = Blobs::axis_aligned(cfg.features, cfg.classes, cfg.separation, cfg.spread);
    let shift = vec![cfg.target_shift; cfg.features];
    let classes = cfg.classes;
    let mode = cfg.target_label;
    let relabel = move |c: usize| mode.apply(c, classes);
    let mut clients = Vec::with_capacity(cfg.clients);
    for k in 1..=cfg.clients as u32 {
        let id = ClientId(k);
        let data = if targets.contains(&id) {
            blobs.sample(cfg.samples_per_client, &shift, relabel, &mut rng)
        } else {
            blobs.sample(cfg.samples_per_client, &[], |c| c, &mut rng)
        };
        clients.push(ClientDataset::sized(id, data)?);
    }
    Ok(Workload {
        clients,
        test: blobs.sample(cfg.test_samples, &[], |c| c, &mut rng),
        holdout: blobs.sample(cfg.mia_holdout, &[], |c| c, &mut rng),
        target_holdout: blobs.sample(cfg.mia_holdout, &shift, relabel, &mut rng),
        features: cfg.features,
        classes: cfg.classes,
    })
}

fn file_workload<T: Scalar>(
    cfg: &ExperimentConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Workload<T>, HarnessError> {
    use rand::seq::SliceRandom;
    let all: Dataset<T> = read_delimited(&cfg.dataset)?;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(rng);
    let pick = |idx: &[usize]| {
        let mut d = Dataset::empty(all.features());
        for &i in idx {
            let (x, y) = all.row(i);
            d.push(x, y);
        }
        d
    };
    let reserved = cfg.test_samples + 2 * cfg.mia_holdout;
    let per_client = order.len().saturating_sub(reserved) / cfg.clients;
    if per_client == 0 {
        return Err(HarnessError::Config(format!(
            "{} has too few rows for {} clients",
            cfg.dataset, cfg.clients
        )));
    }
    let test = pick(&order[..cfg.test_samples]);
    let holdout = pick(&order[cfg.test_samples..cfg.test_samples + cfg.mia_holdout]);
    let target_holdout = pick(&order[cfg.test_samples + cfg.mia_holdout..reserved]);
    let mut clients = Vec::new();
    for k in 0..cfg.clients {
        let start = reserved + k * per_client;
        let data = pick(&order[start..start + per_client]);
        clients.push(ClientDataset::sized(ClientId(k as u32 + 1), data)?);
    }
    let classes = all.labels().iter().max().map_or(2, |m| m + 1).max(2);
    Ok(Workload { clients, test, holdout, target_holdout, features: all.features(), classes })
}

/// A trained federation and the records it produced.
#[derive(Debug)]
pub struct TrainedState<T: Scalar> {
    pub fed: Federation<T>,
    pub workload: Workload<T>,
    pub records: Vec<MetricsRecord>,
    /// Training, commit and sealing time of the training rounds.
    pub training_timing: Timing,
}

pub fn scenario_params(cfg: &ExperimentConfig) -> Result<Arc<ChameleonParams>, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ PARAMS_SALT);
    Ok(Arc::new(ch_setup(cfg.lambda, &mut rng)?))
}

/// Trains the full federation for `cfg.rounds` rounds.
pub fn run_training<T: Scalar>(cfg: &ExperimentConfig) -> Result<TrainedState<T>, HarnessError> {
    cfg.validate()?;
    let params = scenario_params(cfg)?;
    let workload = build_workload::<T>(cfg)?;
    let clients = workload.clients.clone();
    train_federation(cfg, params, workload, clients, "train")
}

/// Trains from scratch on the retained clients only.
pub fn run_reference<T: Scalar>(
    cfg: &ExperimentConfig,
    params: Arc<ChameleonParams>,
    workload: Workload<T>,
) -> Result<TrainedState<T>, HarnessError> {
    let clients = workload.retained(&cfg.target_ids());
    train_federation(cfg, params, workload, clients, "retrain")
}

fn train_federation<T: Scalar>(
    cfg: &ExperimentConfig,
    params: Arc<ChameleonParams>,
    workload: Workload<T>,
    clients: Vec<ClientDataset<T>>,
    phase: &str,
) -> Result<TrainedState<T>, HarnessError> {
    let arch = cfg.architecture(workload.features, workload.classes);
    let mut train = cfg.train_config();
    train.clients = clients.len();
    let mut fed = Federation::new(params, cfg.consensus_stub(), clients, arch, train, cfg.cost_model())?;
    let start = fed.clock.timing;
    let start_ops = fed.clock.ops;
    let targets = cfg.target_ids();
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let report = fed.train_round().map_err(|e| HarnessError::from(e).in_round(fed.model.round))?;
        records.push(snapshot(
            cfg,
            phase,
            report.round,
            &fed.model,
            &workload,
            &targets,
            fed.clock.timing.since(&start),
            ops_since(fed.clock.ops, start_ops),
            None,
            "none",
        )?);
    }
    let training_timing = fed.clock.timing.since(&start);
    Ok(TrainedState { fed, workload, records, training_timing })
}

fn ops_since(now: OpCounts, start: OpCounts) -> OpCounts {
    OpCounts {
        lv: now.lv - start.lv,
        lr: now.lr - start.lr,
        commits: now.commits - start.commits,
        seals: now.seals - start.seals,
    }
}

#[allow(clippy::too_many_arguments)]
fn snapshot<T: Scalar>(
    cfg: &ExperimentConfig,
    phase: &str,
    round: u64,
    model: &GlobalModel<T>,
    workload: &Workload<T>,
    targets: &[ClientId],
    timing: Timing,
    ops: OpCounts,
    reference: Option<&GlobalModel<T>>,
    verification: &str,
) -> Result<MetricsRecord, HarnessError> {
    let eval = evaluate(model, &workload.test);
    let mia = mia_probe(model, &workload.members(targets), &workload.target_holdout, &workload.holdout)?;
    Ok(MetricsRecord {
        scenario: cfg.scenario.as_str().to_string(),
        phase: phase.to_string(),
        round,
        accuracy: eval.accuracy,
        loss: eval.loss,
        mia_precision: mia.precision,
        mia_recall: mia.recall,
        time_lv: timing.lv,
        time_lr: timing.lr,
        time_commit: timing.commit,
        time_seal: timing.seal,
        time_train: timing.train,
        time_total: timing.total(),
        lv_ops: ops.lv,
        lr_ops: ops.lr,
        deviation: reference.map(|r| model.distance(r).to_f64_lossless()),
        verification: verification.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    VerificationFailure { step: u64, reason: Rejection },
    ForgeryAccepted { count: u64 },
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Completed => 0,
            _ => super::EXIT_VERIFICATION_FAILURE,
        }
    }
}

/// Scalar results of one scenario run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub mia_recall_before: Option<f64>,
    pub mia_recall_after: Option<f64>,
    pub mia_precision_before: Option<f64>,
    pub mia_precision_after: Option<f64>,
    pub reference_accuracy: Option<f64>,
    pub t_tilde: Option<u64>,
    pub calibrated_epochs: Option<usize>,
    pub estimated_reduction: Option<f64>,
    pub measured_reduction: Option<f64>,
    pub plan_retrain_ms: Option<f64>,
    pub full_retrain_ms: Option<f64>,
    pub rewritten_entries: Option<u64>,
    pub rewrite_failures: Option<u64>,
    pub erasure_clean: Option<bool>,
    pub onchain_unchanged: Option<bool>,
    pub forgery_attempts: Option<u64>,
    pub forgeries_accepted: Option<u64>,
    pub chain_ok: bool,
    pub lv_ops: u64,
    pub lr_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub kind: ScenarioKind,
    pub records: Vec<MetricsRecord>,
    pub outcome: Outcome,
    pub summary: Summary,
}

impl ScenarioReport {
    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub attempts: u64,
    /// Forged randomizers that verified under the victim's key.
    pub accepted: u64,
    /// Store-level rewrites of victim entries that went through.
    pub store_rewrites_accepted: u64,
}

/// An adversary holding `leaked`'s trapdoor tries to re-open every other
/// client's stored commitments: it computes the collision randomizer with
/// the wrong trapdoor and checks it under the victim's key.
pub fn key_exposure_attack<T: Scalar>(
    fed: &mut Federation<T>,
    leaked: ClientId,
    attempts: usize,
    seed: u64,
) -> Result<ExposureReport, HarnessError> {
    let sk = fed.participant(leaked)?.keys().sk.clone();
    let params = fed.params().clone();
    let q = params.q().clone();
    let x_inv = mod_inverse(sk.exponent(), &q)
        .ok_or(HarnessError::Config("leaked trapdoor is not invertible".into()))?;
    let victims: Vec<_> =
        fed.store.entries().filter(|e| e.owner != leaked && !e.owner.is_server()).cloned().collect();
    let mut report = ExposureReport { attempts: 0, accepted: 0, store_rewrites_accepted: 0 };
    if victims.is_empty() {
        return Ok(report);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ ATTACK_SALT);
    for i in 0..attempts {
        let entry = &victims[i % victims.len()];
        let pk = fed.store.owner_key(entry.owner)?.clone();
        let len = codec::read_u64(&entry.payload, 0).unwrap_or(1) as usize;
        let noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = digest_bytes(&entry.payload, &params).0;
        let m_new = digest_bytes(&codec::encode_vector(&noise), &params);
        let diff = (&m + &q - &m_new.0) % &q;
        let forged = Randomizer((diff * &x_inv + &entry.randomizer.0) % &q);
        report.attempts += 1;
        if ch_verify(&pk, &m_new, &entry.key, &forged) {
            report.accepted += 1;
        }
    }
    for entry in &victims {
        if fed.store.rewrite_entry(&entry.key, &sk, &mut rng).is_ok() {
            report.store_rewrites_accepted += 1;
        }
    }
    Ok(report)
}

/// Runs the unlearning workflow on a trained state and records one metrics
/// row per calibration step.
pub fn run_unlearning_scenario<T: Scalar>(
    cfg: &ExperimentConfig,
    trained: &mut TrainedState<T>,
    reference: Option<&TrainedState<T>>,
) -> Result<(Vec<MetricsRecord>, UnlearnOutcome<T>), HarnessError> {
    let targets = cfg.target_ids();
    let issued = trained.fed.model.round.saturating_sub(1);
    let request = UnlearnRequest::new(targets.clone(), issued)?;
    let outcome = run_unlearning(&mut trained.fed, request, &cfg.unlearn_options())?;
    let ref_model = reference.map(|r| &r.fed.model);
    let mut records = Vec::with_capacity(outcome.steps.len());
    for step in &outcome.steps {
        let verification = if step.verdict.accepted() { "accept" } else { "reject" };
        records.push(snapshot(
            cfg,
            "unlearn",
            step.step,
            &step.model,
            &trained.workload,
            &targets,
            step.timing,
            step.ops,
            ref_model,
            verification,
        )?);
    }
    Ok((records, outcome))
}

/// Runs the configured scenario end to end. Expected adversarial failures
/// are reported in the outcome rather than as errors.
pub fn run_scenario<T: Scalar>(
    cfg: &ExperimentConfig,
) -> Result<(ScenarioReport, Federation<T>), HarnessError> {
    cfg.validate()?;
    let targets = cfg.target_ids();
    let mut summary = Summary {
        scenario: cfg.scenario.as_str().into(),
        seed: cfg.seed,
        rounds: cfg.rounds as u64,
        ..Summary::default()
    };

    if cfg.scenario == ScenarioKind::RetrainFromScratch {
        let params = scenario_params(cfg)?;
        let workload = build_workload::<T>(cfg)?;
        let state = run_reference(cfg, params, workload)?;
        summary.final_accuracy = evaluate(&state.fed.model, &state.workload.test).accuracy;
        summary.full_retrain_ms = Some(state.training_timing.retrain());
        if let Some(last) = state.records.last() {
            summary.mia_recall_after = Some(last.mia_recall);
            summary.mia_precision_after = Some(last.mia_precision);
        }
        return Ok(finish(cfg, state.fed, state.records, Outcome::Completed, summary));
    }

    let mut trained = run_training::<T>(cfg)?;
    let mut records = trained.records.clone();
    if let Some(last) = records.last() {
        summary.mia_recall_before = Some(last.mia_recall);
        summary.mia_precision_before = Some(last.mia_precision);
    }

    match cfg.scenario {
        ScenarioKind::NoUnlearnBaseline => {
            summary.final_accuracy = evaluate(&trained.fed.model, &trained.workload.test).accuracy;
            Ok(finish(cfg, trained.fed, records, Outcome::Completed, summary))
        }
        ScenarioKind::KeyExposure => {
            let attack =
                key_exposure_attack(&mut trained.fed, targets[0], cfg.key_exposure_attempts, cfg.seed)?;
            summary.final_accuracy = evaluate(&trained.fed.model, &trained.workload.test).accuracy;
            summary.forgery_attempts = Some(attack.attempts);
            summary.forgeries_accepted = Some(attack.accepted + attack.store_rewrites_accepted);
            let outcome = match attack.accepted + attack.store_rewrites_accepted {
                0 => Outcome::Completed,
                n => Outcome::ForgeryAccepted { count: n },
            };
            Ok(finish(cfg, trained.fed, records, outcome, summary))
        }
        _ => {
            let reference = if cfg.reference {
                let params = trained.fed.params().clone();
                Some(run_reference(cfg, params, trained.workload.clone())?)
            } else {
                None
            };
            let originals: Vec<Vec<u8>> = targets
                .iter()
                .flat_map(|t| trained.fed.store.keys_owned_by(*t))
                .map(|k| trained.fed.store.entry(&k).map(|e| e.payload.clone()))
                .collect::<Result<_, _>>()?;
            let before = trained.fed.ledger.state().clone();

            let (unlearn_records, outcome) = run_unlearning_scenario(cfg, &mut trained, reference.as_ref())?;
            records.extend(unlearn_records);

            let after = trained.fed.ledger.state();
            summary.onchain_unchanged = Some(
                before.local_hashes.iter().all(|(r, h)| after.local_hashes.get(r) == Some(h))
                    && before.global_hashes.iter().all(|(r, h)| after.global_hashes.get(r) == Some(h)),
            );
            let mut clean = true;
            for bytes in &originals {
                if trained.fed.store.contains_bytes(bytes)? {
                    clean = false;
                }
            }
            summary.erasure_clean = Some(clean && !outcome.rewrite.records.is_empty());
            summary.rewritten_entries =
                Some(outcome.rewrite.records.iter().filter(|r| r.success).count() as u64);
            summary.rewrite_failures = Some(outcome.rewrite.failures().count() as u64);

            let final_model = &outcome.model;
            summary.final_accuracy = evaluate(final_model, &trained.workload.test).accuracy;
            if let Some(last) = records.last() {
                summary.mia_recall_after = Some(last.mia_recall);
                summary.mia_precision_after = Some(last.mia_precision);
            }
            if let Some(plan) = outcome.plan {
                summary.t_tilde = Some(plan.t_tilde);
                summary.calibrated_epochs = Some(plan.calibrated_epochs);
                let t = cfg.max_rounds.unwrap_or(cfg.rounds as u64);
                summary.estimated_reduction = Some(plan.estimated_reduction(t));
                let plan_ms = outcome.retrain_timing.retrain();
                summary.plan_retrain_ms = Some(plan_ms);
                if let Some(r) = &reference {
                    let full = r.training_timing.retrain();
                    summary.full_retrain_ms = Some(full);
                    summary.measured_reduction = Some((full - plan_ms) / (full / cfg.rounds as f64));
                }
            }
            if let Some(r) = &reference {
                summary.reference_accuracy = Some(evaluate(&r.fed.model, &r.workload.test).accuracy);
            }
            let result = match &outcome.abort {
                None => Outcome::Completed,
                Some((step, reason)) => Outcome::VerificationFailure { step: *step, reason: reason.clone() },
            };
            Ok(finish(cfg, trained.fed, records, result, summary))
        }
    }
}

fn finish<T: Scalar>(
    cfg: &ExperimentConfig,
    fed: Federation<T>,
    records: Vec<MetricsRecord>,
    outcome: Outcome,
    mut summary: Summary,
) -> (ScenarioReport, Federation<T>) {
    summary.chain_ok = fed.ledger.verify_chain().is_ok();
    summary.lv_ops = fed.clock.ops.lv;
    summary.lr_ops = fed.clock.ops.lr;
    (ScenarioReport { kind: cfg.scenario, records, outcome, summary }, fed)
}

/// Writes a run's outputs to `dir`: metrics (CSV and JSONL), ledger dump,
/// consensus and key parameters, the off-chain store, the final model
/// checkpoint, the effective config and a summary.
pub fn write_artifacts<T: Scalar>(
    dir: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    report: &ScenarioReport,
    fed: &mut Federation<T>,
) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    emit_metrics(&report.records, dir.join("metrics.csv"))?;
    fs::write(dir.join("ledger.jsonl"), fed.ledger.dump_string())?;
    fs::write(
        dir.join("consensus.json"),
        serde_json::to_string_pretty(fed.ledger.consensus()).expect("consensus serializes"),
    )?;
    fs::write(dir.join("params.json"), KeyRecord::from_params(fed.params()).to_json())?;
    fs::write(dir.join("model.ckpt"), fed.model.to_checkpoint())?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let summary = serde_json::json!({
        "outcome": report.outcome,
        "summary": report.summary,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    fed.store.persist_to(dir.join("store"))?;
    Ok(())
}

/// Ledger and store reloaded from an output directory.
#[derive(Debug)]
pub struct Artifacts<T: Scalar = f64> {
    pub config: ExperimentConfig,
    pub ledger: Ledger,
    pub store: OffchainStore<T>,
    pub server_pk: PublicKey,
}

pub fn load_artifacts<T: Scalar>(dir: impl AsRef<Path>) -> Result<Artifacts<T>, HarnessError> {
    let dir = dir.as_ref();
    let config = ExperimentConfig::load(dir.join("config.toml"))?;
    let params = Arc::new(KeyRecord::from_json(&fs::read_to_string(dir.join("params.json"))?)?.params()?);
    let consensus: ConsensusStub = serde_json::from_str(&fs::read_to_string(dir.join("consensus.json"))?)
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let file = fs::File::open(dir.join("ledger.jsonl"))?;
    let ledger = Ledger::load(BufReader::new(file), params.clone(), consensus)?;
    let owners: BTreeMap<ClientId, PublicKey> = ledger
        .state()
        .registered_keys
        .iter()
        .map(|(&c, r)| Ok((c, PublicKey::new(params.clone(), r.h.clone())?)))
        .collect::<Result<_, HarnessError>>()?;
    let server_pk = owners
        .get(&ClientId::SERVER)
        .cloned()
        .ok_or(HarnessError::Config("ledger has no server registration".into()))?;
    let store = OffchainStore::open(dir.join("store"), params, owners)?;
    Ok(Artifacts { config, ledger, store, server_pk })
}

/// Chain check (first bad block height on failure) and the verdict on the
/// calibration committed at each ledger round.
pub type ArtifactCheck = (Result<(), u64>, Vec<(u64, Verdict)>);

pub fn verify_artifacts<T: Scalar>(a: &Artifacts<T>) -> Result<ArtifactCheck, HarnessError> {
    let chain = a.ledger.verify_chain();
    let mut verdicts = Vec::new();
    for &round in a.ledger.state().calibration_hashes.keys() {
        let v = verify_committed_calibration(
            a.ledger.state(),
            &a.store,
            &a.server_pk,
            round,
            a.config.strict_calibration,
        )?;
        verdicts.push((round, v.verdict));
    }
    Ok((chain, verdicts))
}
