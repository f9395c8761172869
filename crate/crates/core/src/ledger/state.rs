use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tx::{CalibrationCommit, ClientId, Payload, Registration, Transaction, TxKind};
use super::LedgerError;
use crate::chameleon::{ChHashValue, ChameleonParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRequest {
    pub issuer: ClientId,
    pub round: u64,
    pub targets: Vec<ClientId>,
}

/// Smart-contract state: a pure fold over the ordered transaction log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContractState {
    pub local_hashes: BTreeMap<u64, BTreeMap<ClientId, ChHashValue>>,
    pub global_hashes: BTreeMap<u64, ChHashValue>,
    pub calibration_hashes: BTreeMap<u64, CalibrationCommit>,
    pub pending_requests: Vec<PendingRequest>,
    pub registered_keys: BTreeMap<ClientId, Registration>,
    /// Next expected nonce per participant.
    pub nonces: BTreeMap<ClientId, u64>,
}

impl ContractState {
    /// Validates `tx` against the current state and applies it. On error the
    /// state is left untouched.
    pub fn apply(&mut self, tx: &Transaction, params: &ChameleonParams) -> Result<(), LedgerError> {
        let expected = self.nonces.get(&tx.client_id).copied().unwrap_or(0);
        if tx.nonce < expected {
            return Err(LedgerError::DuplicateNonce { client: tx.client_id, nonce: tx.nonce });
        }
        if tx.nonce > expected {
            return Err(LedgerError::NonceGap { client: tx.client_id, expected, got: tx.nonce });
        }

        match (tx.kind, &tx.payload) {
            (TxKind::PublicKeyRegistration, Payload::PublicKey(reg)) => {
                if self.registered_keys.contains_key(&tx.client_id) {
                    return Err(LedgerError::OverwriteAttempt {
                        kind: tx.kind,
                        round: tx.round,
                        client: tx.client_id,
                    });
                }
                if !params.in_subgroup(&reg.h) || !(reg.weight.is_finite() && reg.weight > 0.0) {
                    return Err(LedgerError::Malformed("registration key or weight"));
                }
                self.registered_keys.insert(tx.client_id, reg.clone());
            }
            (TxKind::CommitLocalHash, Payload::Hash(h)) => {
                self.require_registered(tx.client_id)?;
                Self::require_element(h, params)?;
                let round = self.local_hashes.entry(tx.round).or_default();
                if round.contains_key(&tx.client_id) {
                    return Err(LedgerError::OverwriteAttempt {
                        kind: tx.kind,
                        round: tx.round,
                        client: tx.client_id,
                    });
                }
                round.insert(tx.client_id, h.clone());
            }
            (TxKind::CommitGlobalHash, Payload::Hash(h)) => {
                self.require_server(tx)?;
                Self::require_element(h, params)?;
                if self.global_hashes.contains_key(&tx.round) {
                    return Err(LedgerError::OverwriteAttempt {
                        kind: tx.kind,
                        round: tx.round,
                        client: tx.client_id,
                    });
                }
                self.global_hashes.insert(tx.round, h.clone());
            }
            (TxKind::CommitCalibrationHash, Payload::Calibration(c)) => {
                self.require_server(tx)?;
                Self::require_element(&c.hash, params)?;
                if c.randomizer.0 >= *params.q() {
                    return Err(LedgerError::Malformed("calibration randomizer"));
                }
                if self.calibration_hashes.contains_key(&tx.round) {
                    return Err(LedgerError::OverwriteAttempt {
                        kind: tx.kind,
                        round: tx.round,
                        client: tx.client_id,
                    });
                }
                self.calibration_hashes.insert(tx.round, c.clone());
            }
            (TxKind::UnlearnRequest, Payload::Targets(targets)) => {
                self.require_registered(tx.client_id)?;
                if targets.is_empty() {
                    return Err(LedgerError::Malformed("empty target set"));
                }
                for &t in targets {
                    if t.is_server() {
                        return Err(LedgerError::Malformed("server cannot be an unlearning target"));
                    }
                    self.require_registered(t)?;
                }
                if !self.local_hashes.contains_key(&tx.round) {
                    return Err(LedgerError::UnknownRound(tx.round));
                }
                self.pending_requests.push(PendingRequest {
                    issuer: tx.client_id,
                    round: tx.round,
                    targets: targets.clone(),
                });
            }
            _ => return Err(LedgerError::Malformed("payload does not match transaction kind")),
        }
        self.nonces.insert(tx.client_id, expected + 1);
        Ok(())
    }

    fn require_registered(&self, client: ClientId) -> Result<(), LedgerError> {
        if self.registered_keys.contains_key(&client) {
            Ok(())
        } else {
            Err(LedgerError::UnknownClient(client))
        }
    }

    fn require_server(&self, tx: &Transaction) -> Result<(), LedgerError> {
        if !tx.client_id.is_server() {
            return Err(LedgerError::Malformed("server-only transaction"));
        }
        self.require_registered(tx.client_id)
    }

    fn require_element(h: &ChHashValue, params: &ChameleonParams) -> Result<(), LedgerError> {
        if params.in_subgroup(&h.0) {
            Ok(())
        } else {
            Err(LedgerError::Malformed("hash is not a subgroup element"))
        }
    }

    /// Committed local hashes of `round`, minus the excluded clients.
    pub fn query_hashes(
        &self,
        round: u64,
        exclude: &[ClientId],
    ) -> Result<BTreeMap<ClientId, ChHashValue>, LedgerError> {
        let all = self.local_hashes.get(&round).ok_or(LedgerError::UnknownRound(round))?;
        Ok(all.iter().filter(|(c, _)| !exclude.contains(c)).map(|(c, h)| (*c, h.clone())).collect())
    }

    pub fn next_nonce(&self, client: ClientId) -> u64 {
        self.nonces.get(&client).copied().unwrap_or(0)
    }

    /// Registered clients excluding the server role.
    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.registered_keys.keys().copied().filter(|c| !c.is_server())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }
}
