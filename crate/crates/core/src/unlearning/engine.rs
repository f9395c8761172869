use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    calibrate_aggregate, global_calibrate, unlearn_rewrite_all, verify_committed_calibration, PlanParams,
    Rejection, RetrainPlan, RewriteReport, UnlearnError, UnlearnRequest, Verdict,
};
use crate::chameleon::{ChHashValue, SecretKey};
use crate::federation::{Federation, OpCounts, Timing};
use crate::fl::{GlobalModel, ModelUpdate};
use crate::ledger::{CalibrationCommit, ClientId, LedgerError, Transaction};
use crate::scalar::Scalar;

/// Which stored global model calibration restarts from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationBase {
    /// The last model no target had contributed to.
    #[default]
    FirstParticipation,
    /// The model of the round the request names.
    RequestRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TamperMode {
    /// Aggregate a target's update along with the retained ones.
    IncludeTarget,
    /// Commit the honest hash but store a different payload under it.
    WrongPayload,
}

/// A dishonest server deviation at one calibration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tamper {
    pub step: u64,
    pub mode: TamperMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnOptions {
    pub plan: PlanParams,
    /// Keep the `(K - 1)` factor in the calibration denominator.
    pub strict_calibration: bool,
    pub base: CalibrationBase,
    /// `T` in the adaptive-round formula; defaults to the trained rounds.
    pub max_rounds: Option<u64>,
    /// Local epochs between hash checkpoints during calibration.
    pub time_interval: usize,
    pub tamper: Option<Tamper>,
}

impl Default for UnlearnOptions {
    fn default() -> Self {
        Self {
            plan: PlanParams::default(),
            strict_calibration: true,
            base: CalibrationBase::default(),
            max_rounds: None,
            time_interval: 2,
            tamper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStep<T: Scalar> {
    /// 0 for the initial calibration, then one per retraining round.
    pub step: u64,
    pub ledger_round: u64,
    pub calibration_hash: ChHashValue,
    pub verdict: Verdict,
    /// Model after the step; unchanged from the previous step on rejection.
    pub model: GlobalModel<T>,
    /// Cumulative since the request was issued.
    pub timing: Timing,
    pub ops: OpCounts,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome<T: Scalar> {
    pub request: UnlearnRequest,
    pub base_round: u64,
    pub plan: Option<RetrainPlan>,
    pub steps: Vec<CalibrationStep<T>>,
    pub rewrite: RewriteReport,
    /// First rejected step, which ends the run.
    pub abort: Option<(u64, Rejection)>,
    pub model: GlobalModel<T>,
    /// Training, commit and sealing time of the calibration steps.
    pub retrain_timing: Timing,
}

impl<T: Scalar> UnlearnOutcome<T> {
    pub fn ensure_verified(&self) -> Result<(), UnlearnError> {
        match &self.abort {
            None => Ok(()),
            Some((step, reason)) => Err(UnlearnError::Verification { step: *step, reason: reason.clone() }),
        }
    }
}

struct Ctx<'a, T: Scalar> {
    targets: &'a [ClientId],
    k_total: usize,
    strict: bool,
    tamper: Option<Tamper>,
    cached_target: Option<(ModelUpdate<T>, T)>,
}

/// Runs the full unlearning workflow for `request` against a trained
/// federation and leaves the calibrated model in `fed.model`.
pub fn run_unlearning<T: Scalar>(
    fed: &mut Federation<T>,
    mut request: UnlearnRequest,
    opts: &UnlearnOptions,
) -> Result<UnlearnOutcome<T>, UnlearnError> {
    opts.plan.validate()?;
    if opts.time_interval == 0 {
        return Err(UnlearnError::Config("time interval must be at least 1".into()));
    }
    let targets = request.targets();
    for &t in &targets {
        fed.participant(t)?;
    }
    let retained: Vec<ClientId> = fed.client_ids().into_iter().filter(|c| !request.is_target(*c)).collect();
    if retained.is_empty() {
        return Err(UnlearnError::EmptyRetained);
    }
    let trained = fed.model.round;
    if request.issued_round >= trained {
        return Err(UnlearnError::Ledger(LedgerError::UnknownRound(request.issued_round)));
    }
    let start_timing = fed.clock.timing;
    let start_ops = fed.clock.ops;

    let issuer = targets[0];
    let nonce = fed.ledger.next_nonce(issuer);
    fed.submit(Transaction::unlearn_request(request.issued_round, issuer, targets.clone(), nonce))?;
    request.request_height = Some(fed.seal()?.height);

    let state = fed.ledger.state();
    let base_round = match opts.base {
        CalibrationBase::RequestRound => request.issued_round,
        CalibrationBase::FirstParticipation => state
            .local_hashes
            .iter()
            .find(|(_, h)| targets.iter().any(|t| h.contains_key(t)))
            .map(|(&r, _)| r)
            .unwrap_or(request.issued_round),
    };
    let mut model = fed.stored_global(base_round)?;
    let k_total = fed.participants().len();
    let r0 = trained;

    // A dishonest server keeps a copy of the target's update before erasure.
    let cached_target = match opts.tamper {
        Some(Tamper { mode: TamperMode::IncludeTarget, .. }) => {
            let key = &fed.ledger.state().local_hashes[&base_round];
            let t = targets[0];
            match key.get(&t) {
                Some(k) => {
                    let (delta, _) = fed.store.get(k)?;
                    let w = fed.participant(t)?.data.weight;
                    Some((ModelUpdate { delta, client_id: t, round: base_round }, w))
                }
                None => None,
            }
        }
        _ => None,
    };
    let ctx = Ctx {
        targets: &targets,
        k_total,
        strict: opts.strict_calibration,
        tamper: opts.tamper,
        cached_target,
    };

    let mut outcome = UnlearnOutcome {
        request: request.clone(),
        base_round,
        plan: None,
        steps: Vec::new(),
        rewrite: RewriteReport::default(),
        abort: None,
        model: model.clone(),
        retrain_timing: Timing::default(),
    };
    let retrain_start = fed.clock.timing;

    let retained_hashes = fed.ledger.state().query_hashes(base_round, &targets)?;
    let updates = fetch_updates(fed, &retained_hashes, base_round)?;
    let step0 = calibration_step(fed, &ctx, 0, r0, base_round, &updates, &mut model)?;
    let ok = record(fed, &mut outcome, step0, &model, start_timing, start_ops);
    if !ok {
        return finish(fed, outcome, model, retrain_start);
    }

    let keys: Vec<(ClientId, SecretKey)> = targets
        .iter()
        .map(|&t| Ok((t, fed.participant(t)?.keys().sk.clone())))
        .collect::<Result<_, UnlearnError>>()?;
    let refs: Vec<(ClientId, &SecretKey)> = keys.iter().map(|(c, k)| (*c, k)).collect();
    let mut rng = fed.rng().clone();
    let report = unlearn_rewrite_all(&refs, &mut fed.store, fed.ledger.state(), &mut rng)?;
    *fed.rng() = rng;
    fed.clock.rewrite_ops(report.records.len() as u64);
    outcome.rewrite = report;

    let t_max = opts.max_rounds.unwrap_or(trained);
    let plan = RetrainPlan::derive(&targets, &fed.tracker, opts.plan, t_max, fed.train.local_epochs)?;
    outcome.plan = Some(plan);

    let mut cfg = fed.train.clone();
    cfg.local_epochs = plan.calibrated_epochs;
    let delta_t = T::from_f64_lossy(plan.delta_t);
    // Checkpoint cadence is an interpretation: every `time_interval` local
    // epochs a client reports a hash; only the last one goes on-chain.
    let checkpoints = plan.calibrated_epochs.div_ceil(opts.time_interval) as u64;
    for j in 1..=plan.t_tilde {
        let round = r0 + j;
        model.round = round;
        let updates: Vec<ModelUpdate<T>> =
            fed.train_clients(&retained, &model, &cfg)?.into_iter().map(|u| u.scaled(delta_t)).collect();
        fed.clock.contract_calls((checkpoints - 1) * retained.len() as u64);
        let hashes = fed.commit_locals(round, &updates)?;
        let ordered: Vec<ModelUpdate<T>> = hashes
            .keys()
            .map(|c| updates.iter().find(|u| u.client_id == *c).cloned().expect("committed"))
            .collect();
        let step = calibration_step(fed, &ctx, j, round, round, &ordered, &mut model)?;
        if !record(fed, &mut outcome, step, &model, start_timing, start_ops) {
            break;
        }
    }
    finish(fed, outcome, model, retrain_start)
}

fn finish<T: Scalar>(
    fed: &mut Federation<T>,
    mut outcome: UnlearnOutcome<T>,
    model: GlobalModel<T>,
    retrain_start: Timing,
) -> Result<UnlearnOutcome<T>, UnlearnError> {
    let spent = fed.clock.timing.since(&retrain_start);
    outcome.retrain_timing = Timing { lv: 0.0, lr: 0.0, ..spent };
    outcome.model = model.clone();
    if outcome.abort.is_none() {
        let mut next = model;
        next.round += 1;
        fed.model = next;
    }
    Ok(outcome)
}

struct StepResult {
    step: u64,
    round: u64,
    hash: ChHashValue,
    verdict: Verdict,
}

fn record<T: Scalar>(
    fed: &Federation<T>,
    outcome: &mut UnlearnOutcome<T>,
    s: StepResult,
    model: &GlobalModel<T>,
    start_timing: Timing,
    start_ops: OpCounts,
) -> bool {
    let ok = s.verdict.accepted();
    if let Verdict::Reject(reason) = &s.verdict {
        outcome.abort = Some((s.step, reason.clone()));
    }
    let ops = fed.clock.ops;
    outcome.steps.push(CalibrationStep {
        step: s.step,
        ledger_round: s.round,
        calibration_hash: s.hash,
        verdict: s.verdict,
        model: model.clone(),
        timing: fed.clock.timing.since(&start_timing),
        ops: OpCounts {
            lv: ops.lv - start_ops.lv,
            lr: ops.lr - start_ops.lr,
            commits: ops.commits - start_ops.commits,
            seals: ops.seals - start_ops.seals,
        },
    });
    ok
}

fn fetch_updates<T: Scalar>(
    fed: &Federation<T>,
    hashes: &BTreeMap<ClientId, ChHashValue>,
    round: u64,
) -> Result<Vec<ModelUpdate<T>>, UnlearnError> {
    hashes
        .iter()
        .map(|(&c, k)| {
            let (delta, _) = fed.store.get(k)?;
            Ok(ModelUpdate { delta, client_id: c, round })
        })
        .collect()
}

/// Aggregates, commits and has every target verify one calibration step.
/// The model advances only if all targets accept.
fn calibration_step<T: Scalar>(
    fed: &mut Federation<T>,
    ctx: &Ctx<'_, T>,
    step: u64,
    round: u64,
    source_round: u64,
    updates: &[ModelUpdate<T>],
    model: &mut GlobalModel<T>,
) -> Result<StepResult, UnlearnError> {
    let weights_of =
        |fed: &Federation<T>, c: ClientId| -> Result<T, UnlearnError> { Ok(fed.participant(c)?.data.weight) };
    let mut ws: Vec<T> = updates.iter().map(|u| weights_of(fed, u.client_id)).collect::<Result<_, _>>()?;
    let honest = calibrate_aggregate(updates, &ws, ctx.k_total, ctx.strict)?;

    let tamper = ctx.tamper.filter(|t| t.step == step).map(|t| t.mode);
    let mut committed = honest.clone();
    if let (Some(TamperMode::IncludeTarget), Some((u, w))) = (tamper, &ctx.cached_target) {
        let mut all = updates.to_vec();
        all.push(u.clone());
        ws.push(*w);
        committed = calibrate_aggregate(&all, &ws, ctx.k_total, ctx.strict)?;
    }

    let server_pk = fed.server_key().clone();
    let mut rng = fed.rng().clone();
    let (key, r) = fed.store.put_random(ClientId::SERVER, &committed.delta, &server_pk, &mut rng)?;
    *fed.rng() = rng;
    if tamper == Some(TamperMode::WrongPayload) {
        let forged: Vec<T> = committed.delta.iter().map(|&v| v + v + T::one()).collect();
        fed.store.overwrite_payload_unchecked(&key, &forged)?;
    }
    let commit =
        CalibrationCommit { hash: key.clone(), randomizer: r, source_round, excluded: ctx.targets.to_vec() };
    let nonce = fed.ledger.next_nonce(ClientId::SERVER);
    fed.submit(Transaction::commit_calibration(round, commit, nonce))?;
    fed.seal()?;

    let mut verdict = Verdict::Accept;
    for _ in ctx.targets {
        let v = verify_committed_calibration(fed.ledger.state(), &fed.store, &server_pk, round, ctx.strict)?;
        fed.clock.verify_ops(v.hash_ops);
        if !v.verdict.accepted() {
            verdict = v.verdict;
            break;
        }
    }
    if verdict.accepted() {
        *model = global_calibrate(model, &committed)?;
        let stored = model.clone();
        fed.store_global(&stored)?;
    }
    Ok(StepResult { step, round, hash: key, verdict })
}
