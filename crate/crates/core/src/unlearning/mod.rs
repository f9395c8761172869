//! Calibration-based federated unlearning with on-chain proofs.
//!
//! The server re-aggregates the retained clients' committed updates, commits
//! a chameleon hash of the result, and anyone can recompute that hash from
//! the ledger and the off-chain store. Targets then erase their stored
//! updates by trapdoor rewriting.

mod contribution;
mod engine;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use contribution::{
    adaptive_rounds, compute_theta, gompertz_contribution, round_budget, ContributionTracker, PlanParams,
    RetrainPlan,
};
pub use engine::{
    run_unlearning, CalibrationBase, CalibrationStep, Tamper, TamperMode, UnlearnOptions, UnlearnOutcome,
};

use crate::chameleon::{ch_hash, digest_update, ChHashValue, ChameleonError, PublicKey, SecretKey};
use crate::fl::{apply_update, FlError, GlobalModel, ModelUpdate};
use crate::ledger::{CalibrationCommit, ClientId, ContractState, LedgerError};
use crate::offchain::{OffchainStore, StoreError};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum UnlearnError {
    #[error("unlearning request names no target clients")]
    EmptyTargets,
    #[error("no retained clients left to calibrate with")]
    EmptyRetained,
    #[error("client {client}: expected contribution round {expected}, got {got}")]
    NonConsecutiveRound { client: ClientId, expected: u64, got: u64 },
    #[error("calibration verification failed at step {step}: {reason}")]
    Verification { step: u64, reason: Rejection },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Chameleon(#[from] ChameleonError),
}

/// Why a calibration commitment was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason", content = "key")]
pub enum Rejection {
    /// The recomputed hash differs from the committed one, or a stored
    /// payload no longer matches its key.
    HashMismatch,
    /// A referenced payload is absent from the store.
    MissingEntry(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::HashMismatch => f.write_str("hash mismatch"),
            Rejection::MissingEntry(k) => write!(f, "missing entry {k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Rejection),
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// A verification result plus the number of chameleon hash evaluations it
/// took, for interaction-time accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub verdict: Verdict,
    pub hash_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlearnRequest {
    targets: BTreeSet<ClientId>,
    pub issued_round: u64,
    /// Height of the block carrying the request, once committed.
    pub request_height: Option<u64>,
}

impl UnlearnRequest {
    pub fn new(targets: impl IntoIterator<Item = ClientId>, issued_round: u64) -> Result<Self, UnlearnError> {
        let targets: BTreeSet<_> = targets.into_iter().collect();
        if targets.is_empty() {
            return Err(UnlearnError::EmptyTargets);
        }
        Ok(Self { targets, issued_round, request_height: None })
    }

    pub fn targets(&self) -> Vec<ClientId> {
        self.targets.iter().copied().collect()
    }

    pub fn is_target(&self, id: ClientId) -> bool {
        self.targets.contains(&id)
    }
}

/// Calibrated aggregate of the retained updates,
/// `sum(w_k U_k) / ((K - 1) sum(w_k))` with `K` the total client count.
/// With `strict` off the `(K - 1)` factor is dropped, giving the plain
/// weighted mean.
pub fn calibrate_aggregate<T: Scalar>(
    updates: &[ModelUpdate<T>],
    weights: &[T],
    k_total: usize,
    strict: bool,
) -> Result<ModelUpdate<T>, UnlearnError> {
    let first = updates.first().ok_or(UnlearnError::EmptyRetained)?;
    if weights.len() != updates.len() {
        return Err(FlError::DimensionMismatch { expected: updates.len(), got: weights.len() }.into());
    }
    if k_total < 2 {
        return Err(UnlearnError::Config("calibration needs K >= 2".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > T::zero())) {
        return Err(FlError::BadWeight.into());
    }
    let dim = first.delta.len();
    let mut num = vec![T::zero(); dim];
    for (u, &w) in updates.iter().zip(weights) {
        if u.delta.len() != dim {
            return Err(FlError::DimensionMismatch { expected: dim, got: u.delta.len() }.into());
        }
        for (a, &v) in num.iter_mut().zip(&u.delta) {
            *a = *a + w * v;
        }
    }
    let total: T = weights.iter().copied().sum();
    let denom = if strict {
        T::from_usize(k_total - 1).expect("client count fits the scalar") * total
    } else {
        total
    };
    num.iter_mut().for_each(|a| *a = *a / denom);
    Ok(ModelUpdate { delta: num, client_id: ClientId::SERVER, round: first.round })
}

/// `M + U` for the calibrated update.
pub fn global_calibrate<T: Scalar>(
    model: &GlobalModel<T>,
    agg: &ModelUpdate<T>,
) -> Result<GlobalModel<T>, UnlearnError> {
    Ok(apply_update(model, agg)?)
}

/// Recomputes a calibration commitment from public data only.
///
/// The stored calibrated update must verify against the committed hash, and
/// re-aggregating the retained clients' stored updates must reproduce it.
#[allow(clippy::too_many_arguments)]
pub fn verify_calibration<T: Scalar>(
    server_pk: &PublicKey,
    commit: &CalibrationCommit,
    retained: &BTreeMap<ClientId, ChHashValue>,
    weights: &BTreeMap<ClientId, f64>,
    k_total: usize,
    strict: bool,
    store: &OffchainStore<T>,
) -> Result<Verification, UnlearnError> {
    let mut hash_ops = 0u64;
    let reject = |r: Rejection, hash_ops| Ok(Verification { verdict: Verdict::Reject(r), hash_ops });

    if !store.contains(&commit.hash) {
        return reject(Rejection::MissingEntry(commit.hash.to_hex()), hash_ops);
    }
    hash_ops += 1;
    let entry = store.entry(&commit.hash)?;
    let stored_ok = entry.randomizer == commit.randomizer && store.verify_entry(&commit.hash)?;
    if !stored_ok {
        return reject(Rejection::HashMismatch, hash_ops);
    }

    let mut updates = Vec::with_capacity(retained.len());
    let mut ws = Vec::with_capacity(retained.len());
    for (&client, key) in retained {
        if !store.contains(key) {
            return reject(Rejection::MissingEntry(key.to_hex()), hash_ops);
        }
        hash_ops += 1;
        if !store.verify_entry(key)? {
            return reject(Rejection::HashMismatch, hash_ops);
        }
        let (delta, _) = store.get(key)?;
        updates.push(ModelUpdate { delta, client_id: client, round: commit.source_round });
        let w =
            weights.get(&client).copied().ok_or(UnlearnError::Ledger(LedgerError::UnknownClient(client)))?;
        ws.push(T::from_f64_lossy(w));
    }
    let recomputed = match calibrate_aggregate(&updates, &ws, k_total, strict) {
        Ok(u) => u,
        Err(UnlearnError::Fl(FlError::DimensionMismatch { .. })) => {
            return reject(Rejection::HashMismatch, hash_ops)
        }
        Err(e) => return Err(e),
    };
    let digest = digest_update(&recomputed.delta, server_pk.params())?;
    hash_ops += 1;
    let h_hat = ch_hash(server_pk, &digest, &commit.randomizer)?;
    if h_hat == commit.hash {
        Ok(Verification { verdict: Verdict::Accept, hash_ops })
    } else {
        reject(Rejection::HashMismatch, hash_ops)
    }
}

/// Verifies the calibration committed at ledger round `round` using only
/// the contract state and the store.
pub fn verify_committed_calibration<T: Scalar>(
    state: &ContractState,
    store: &OffchainStore<T>,
    server_pk: &PublicKey,
    round: u64,
    strict: bool,
) -> Result<Verification, UnlearnError> {
    let commit =
        state.calibration_hashes.get(&round).ok_or(UnlearnError::Ledger(LedgerError::UnknownRound(round)))?;
    let retained = state.query_hashes(commit.source_round, &commit.excluded)?;
    let weights: BTreeMap<ClientId, f64> =
        state.registered_keys.iter().map(|(&c, r)| (c, r.weight)).collect();
    let k_total = state.clients().count();
    verify_calibration(server_pk, commit, &retained, &weights, k_total, strict, store)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRecord {
    pub owner: ClientId,
    /// Round of the on-chain commitment, if the entry is committed.
    pub round: Option<u64>,
    pub key: ChHashValue,
    pub success: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteReport {
    pub records: Vec<RewriteRecord>,
}

impl RewriteReport {
    pub fn all_succeeded(&self) -> bool {
        self.records.iter().all(|r| r.success)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RewriteRecord> {
        self.records.iter().filter(|r| !r.success)
    }
}

/// Rewrites every stored entry owned by each target with that target's own
/// trapdoor. Entries whose trapdoor check fails are reported, not fatal.
pub fn unlearn_rewrite_all<T: Scalar, R: Rng + ?Sized>(
    targets: &[(ClientId, &SecretKey)],
    store: &mut OffchainStore<T>,
    state: &ContractState,
    rng: &mut R,
) -> Result<RewriteReport, UnlearnError> {
    let mut rounds: BTreeMap<&ChHashValue, u64> = BTreeMap::new();
    for (&round, hashes) in &state.local_hashes {
        for h in hashes.values() {
            rounds.insert(h, round);
        }
    }
    let mut report = RewriteReport::default();
    for &(owner, sk) in targets {
        for key in store.keys_owned_by(owner) {
            let success = match store.rewrite_entry(&key, sk, rng) {
                Ok(_) => true,
                Err(StoreError::TrapdoorMismatch(_)) => false,
                Err(e) => return Err(e.into()),
            };
            report.records.push(RewriteRecord { owner, round: rounds.get(&key).copied(), key, success });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
