//! A running federation: participants and their keys, the ledger, the
//! off-chain store, the global model trajectory and a simulated clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::chameleon::{ch_gen, ChHashValue, ChameleonParams, KeyPair, PublicKey};
use crate::fl::{
    apply_update, fedavg_aggregate, local_train, Architecture, ClientDataset, FlError, GlobalModel,
    ModelUpdate, TrainConfig,
};
use crate::ledger::{ClientId, ConsensusStub, Ledger, LedgerError, Registration, SealReport, Transaction};
use crate::offchain::{OffchainStore, StoreError};
use crate::scalar::Scalar;
use crate::unlearning::{compute_theta, ContributionTracker, UnlearnError};

/// Simulated cost of each operation, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Fixed execution delay of one contract call.
    pub contract_latency_ms: f64,
    /// Sealing cost of one block under DPoS.
    pub seal_ms: f64,
    /// Cost of one PoW puzzle attempt.
    pub pow_attempt_ms: f64,
    /// Local training cost of one example for one epoch.
    pub train_example_ms: f64,
    /// One chameleon hash evaluation during verification.
    pub verify_op_ms: f64,
    /// One trapdoor rewrite.
    pub rewrite_op_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            contract_latency_ms: 500.0,
            seal_ms: 50.0,
            pow_attempt_ms: 0.01,
            train_example_ms: 10.0,
            verify_op_ms: 20.0,
            rewrite_op_ms: 25.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.contract_latency_ms,
            self.seal_ms,
            self.pow_attempt_ms,
            self.train_example_ms,
            self.verify_op_ms,
            self.rewrite_op_ms,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err("costs must be finite and non-negative".into())
        }
    }
}

/// Simulated time per operation class, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Unlearning verification.
    pub lv: f64,
    /// Unlearning rewriting.
    pub lr: f64,
    pub commit: f64,
    pub seal: f64,
    pub train: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.lv + self.lr + self.commit + self.seal + self.train
    }

    /// Time spent on training and getting it on-chain, without the
    /// verification and rewriting that run beside it.
    pub fn retrain(&self) -> f64 {
        self.commit + self.seal + self.train
    }

    pub fn since(&self, earlier: &Timing) -> Timing {
        Timing {
            lv: self.lv - earlier.lv,
            lr: self.lr - earlier.lr,
            commit: self.commit - earlier.commit,
            seal: self.seal - earlier.seal,
            train: self.train - earlier.train,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub lv: u64,
    pub lr: u64,
    pub commits: u64,
    pub seals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimClock {
    pub cost: CostModel,
    pub timing: Timing,
    pub ops: OpCounts,
}

impl SimClock {
    pub fn new(cost: CostModel) -> Self {
        Self { cost, timing: Timing::default(), ops: OpCounts::default() }
    }

    pub fn commits(&mut self, n: u64) {
        self.ops.commits += n;
        self.timing.commit += n as f64 * self.cost.contract_latency_ms;
    }

    /// Charges contract latency for calls that leave no transaction.
    pub fn contract_calls(&mut self, n: u64) {
        self.timing.commit += n as f64 * self.cost.contract_latency_ms;
    }

    pub fn seal(&mut self, report: &SealReport) {
        self.ops.seals += 1;
        self.timing.seal += self.cost.seal_ms + report.pow_attempts as f64 * self.cost.pow_attempt_ms;
    }

    pub fn train(&mut self, example_epochs: u64) {
        self.timing.train += example_epochs as f64 * self.cost.train_example_ms;
    }

    pub fn verify_ops(&mut self, n: u64) {
        self.ops.lv += n;
        self.timing.lv += n as f64 * self.cost.verify_op_ms;
    }

    pub fn rewrite_ops(&mut self, n: u64) {
        self.ops.lr += n;
        self.timing.lr += n as f64 * self.cost.rewrite_op_ms;
    }
}

#[derive(Debug)]
pub struct Participant<T: Scalar> {
    pub data: ClientDataset<T>,
    keys: KeyPair,
}

impl<T: Scalar> Participant<T> {
    pub fn public_key(&self) -> &PublicKey {
        &self.keys.pk
    }

    /// The client's own trapdoor.
    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }
}

/// One finished training round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub server: String,
    pub local_hashes: BTreeMap<ClientId, ChHashValue>,
    pub global_hash: ChHashValue,
}

#[derive(Debug)]
pub struct Federation<T: Scalar = f64> {
    params: Arc<ChameleonParams>,
    pub ledger: Ledger,
    pub store: OffchainStore<T>,
    server: KeyPair,
    participants: BTreeMap<ClientId, Participant<T>>,
    pub model: GlobalModel<T>,
    pub train: TrainConfig,
    pub tracker: ContributionTracker,
    pub clock: SimClock,
    rng: ChaCha20Rng,
}

impl<T: Scalar> Federation<T> {
    /// Generates keys, registers every participant and the server on-chain,
    /// and stores and commits the initial model as global round 0.
    pub fn new(
        params: Arc<ChameleonParams>,
        consensus: ConsensusStub,
        clients: Vec<ClientDataset<T>>,
        arch: Architecture,
        train: TrainConfig,
        cost: CostModel,
    ) -> Result<Self, UnlearnError> {
        train.validate()?;
        cost.validate().map_err(UnlearnError::Config)?;
        if clients.len() < 2 {
            return Err(UnlearnError::Config("at least two clients are required".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(train.seed ^ 0x6b65_7973);
        let server = ch_gen(params.clone(), &mut rng);
        let mut participants = BTreeMap::new();
        for data in clients {
            let id = data.client_id;
            if id.is_server() || participants.contains_key(&id) {
                return Err(UnlearnError::Config(format!("duplicate or reserved client id {id}")));
            }
            let keys = ch_gen(params.clone(), &mut rng);
            participants.insert(id, Participant { data, keys });
        }
        let ledger = Ledger::new(params.clone(), consensus)?;
        let mut fed = Self {
            store: OffchainStore::new(params.clone()),
            params,
            ledger,
            server,
            participants,
            model: GlobalModel::init(arch, train.seed),
            train,
            tracker: ContributionTracker::default(),
            clock: SimClock::new(cost),
            rng,
        };

        let server_reg = Registration { h: fed.server.pk.h().clone(), weight: 1.0 };
        fed.submit(Transaction::register(ClientId::SERVER, server_reg, 0))?;
        let regs: Vec<_> = fed
            .participants
            .iter()
            .map(|(&id, p)| {
                let reg = Registration { h: p.keys.pk.h().clone(), weight: p.data.weight.to_f64_lossless() };
                Transaction::register(id, reg, 0)
            })
            .collect();
        for tx in regs {
            fed.submit(tx)?;
        }
        let initial = fed.model.clone();
        let key = fed.store_global(&initial)?;
        let nonce = fed.ledger.next_nonce(ClientId::SERVER);
        fed.submit(Transaction::commit_global(0, key, nonce))?;
        fed.seal()?;
        Ok(fed)
    }

    pub fn params(&self) -> &Arc<ChameleonParams> {
        &self.params
    }

    pub fn server_key(&self) -> &PublicKey {
        &self.server.pk
    }

    pub fn participants(&self) -> &BTreeMap<ClientId, Participant<T>> {
        &self.participants
    }

    pub fn participant(&self, id: ClientId) -> Result<&Participant<T>, UnlearnError> {
        self.participants.get(&id).ok_or(UnlearnError::Ledger(LedgerError::UnknownClient(id)))
    }

    pub fn client_ids(&self) -> Vec<ClientId> {
        self.participants.keys().copied().collect()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    /// Submits one transaction and charges its contract latency.
    pub(crate) fn submit(&mut self, tx: Transaction) -> Result<(), UnlearnError> {
        self.ledger.submit_tx(tx)?;
        self.clock.commits(1);
        Ok(())
    }

    pub(crate) fn seal(&mut self) -> Result<SealReport, UnlearnError> {
        let report = self.ledger.seal_block(false)?;
        self.clock.seal(&report);
        Ok(report)
    }

    /// Stores a model under the server key and returns its hash.
    pub(crate) fn store_global(&mut self, model: &GlobalModel<T>) -> Result<ChHashValue, StoreError> {
        let pk = self.server.pk.clone();
        let (key, _) = self.store.put_random(ClientId::SERVER, &model.weights, &pk, &mut self.rng)?;
        Ok(key)
    }

    /// The stored global model of `round`, checked against its commitment.
    pub fn stored_global(&self, round: u64) -> Result<GlobalModel<T>, UnlearnError> {
        let key = self
            .ledger
            .state()
            .global_hashes
            .get(&round)
            .ok_or(UnlearnError::Ledger(LedgerError::UnknownRound(round)))?;
        if !self.store.verify_entry(key)? {
            return Err(StoreError::Corrupt(key.clone()).into());
        }
        let (weights, _) = self.store.get(key)?;
        let mut model = GlobalModel::new(self.model.arch, weights)?;
        model.round = round;
        Ok(model)
    }

    /// Trains `model` on each listed client in parallel.
    pub(crate) fn train_clients(
        &mut self,
        ids: &[ClientId],
        model: &GlobalModel<T>,
        cfg: &TrainConfig,
    ) -> Result<Vec<ModelUpdate<T>>, FlError> {
        let parts: Vec<&ClientDataset<T>> =
            ids.iter().filter_map(|id| self.participants.get(id).map(|p| &p.data)).collect();
        let results: Vec<Result<ModelUpdate<T>, FlError>> = std::thread::scope(|s| {
            let handles: Vec<_> =
                parts.iter().map(|data| s.spawn(move || local_train(model, data, cfg))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        let examples: u64 = parts.iter().map(|d| d.data.len() as u64).sum();
        self.clock.train(examples * cfg.local_epochs as u64);
        results.into_iter().collect()
    }

    /// Stores each update under its owner's key and commits the hashes for
    /// `round` in one block.
    pub(crate) fn commit_locals(
        &mut self,
        round: u64,
        updates: &[ModelUpdate<T>],
    ) -> Result<BTreeMap<ClientId, ChHashValue>, UnlearnError> {
        let mut hashes = BTreeMap::new();
        for u in updates {
            let pk = self.participant(u.client_id)?.keys.pk.clone();
            let (key, _) = self.store.put_random(u.client_id, &u.delta, &pk, &mut self.rng)?;
            let nonce = self.ledger.next_nonce(u.client_id);
            self.submit(Transaction::commit_local(round, u.client_id, key.clone(), nonce))?;
            hashes.insert(u.client_id, key);
        }
        self.seal()?;
        Ok(hashes)
    }

    /// One round of blockchain-backed FedAvg over every participant.
    pub fn train_round(&mut self) -> Result<RoundReport, UnlearnError> {
        let round = self.model.round;
        let server = self.ledger.consensus().selected_server(round)?;
        let ids = self.client_ids();
        let model = self.model.clone();
        let cfg = self.train.clone();
        let updates = self.train_clients(&ids, &model, &cfg)?;
        let local_hashes = self.commit_locals(round, &updates)?;

        let weights: Vec<T> = ids.iter().map(|id| self.participants[id].data.weight).collect();
        let agg = fedavg_aggregate(&updates, &weights)?;
        for u in &updates {
            let theta = compute_theta(u, &agg)?;
            self.tracker.update_theta_tilde(u.client_id, theta, round + 1)?;
        }
        self.model = apply_update(&model, &agg)?;
        let next = self.model.clone();
        let global_hash = self.store_global(&next)?;
        let nonce = self.ledger.next_nonce(ClientId::SERVER);
        self.submit(Transaction::commit_global(round + 1, global_hash.clone(), nonce))?;
        self.seal()?;
        Ok(RoundReport { round, server, local_hashes, global_hash })
    }
}
