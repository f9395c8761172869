use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::chameleon::{ChHashValue, Randomizer};
use crate::codec::decimal;

/// Participant identifier. Clients are numbered from 1; [`ClientId::SERVER`]
/// is the aggregator role, whichever node consensus selects for a round.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub const SERVER: ClientId = ClientId(0);

    pub fn is_server(self) -> bool {
        self == Self::SERVER
    }
}

impl fmt::Debug for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_server() {
            f.write_str("server")
        } else {
            write!(f, "client{}", self.0)
        }
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    CommitLocalHash,
    CommitGlobalHash,
    CommitCalibrationHash,
    UnlearnRequest,
    PublicKeyRegistration,
}

/// Calibration commitment published by the server. Carries everything a
/// third party needs to recompute it: the blinding randomizer, the round
/// whose local commitments were aggregated, and the excluded clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationCommit {
    pub hash: ChHashValue,
    pub randomizer: Randomizer,
    pub source_round: u64,
    pub excluded: Vec<ClientId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    #[serde(with = "decimal")]
    pub h: BigUint,
    /// Aggregation weight `w_k` the client declares for itself.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Hash(ChHashValue),
    Calibration(CalibrationCommit),
    Targets(Vec<ClientId>),
    PublicKey(Registration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    pub round: u64,
    pub client_id: ClientId,
    pub payload: Payload,
    pub nonce: u64,
}

impl Transaction {
    pub fn commit_local(round: u64, client: ClientId, hash: ChHashValue, nonce: u64) -> Self {
        Self { kind: TxKind::CommitLocalHash, round, client_id: client, payload: Payload::Hash(hash), nonce }
    }

    pub fn commit_global(round: u64, hash: ChHashValue, nonce: u64) -> Self {
        Self {
            kind: TxKind::CommitGlobalHash,
            round,
            client_id: ClientId::SERVER,
            payload: Payload::Hash(hash),
            nonce,
        }
    }

    pub fn commit_calibration(round: u64, commit: CalibrationCommit, nonce: u64) -> Self {
        Self {
            kind: TxKind::CommitCalibrationHash,
            round,
            client_id: ClientId::SERVER,
            payload: Payload::Calibration(commit),
            nonce,
        }
    }

    pub fn unlearn_request(round: u64, issuer: ClientId, targets: Vec<ClientId>, nonce: u64) -> Self {
        Self {
            kind: TxKind::UnlearnRequest,
            round,
            client_id: issuer,
            payload: Payload::Targets(targets),
            nonce,
        }
    }

    pub fn register(client: ClientId, registration: Registration, nonce: u64) -> Self {
        Self {
            kind: TxKind::PublicKeyRegistration,
            round: 0,
            client_id: client,
            payload: Payload::PublicKey(registration),
            nonce,
        }
    }

    /// Canonical bytes covered by the block's transaction root.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("transactions serialize")
    }
}
