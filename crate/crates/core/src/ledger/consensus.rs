use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::block::{leading_zero_bits, BlockHeader, ConsensusProof};
use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusKind {
    Dpos,
    Pow,
}

impl std::str::FromStr for ConsensusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dpos" => Ok(Self::Dpos),
            "pow" => Ok(Self::Pow),
            other => Err(format!("unknown consensus kind {other:?}")),
        }
    }
}

/// Single-honest-proposer consensus simulation.
///
/// DPoS rotates through the validator list. PoW runs a seeded puzzle race
/// between the validators at a fixed difficulty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusStub {
    pub kind: ConsensusKind,
    pub validators: Vec<String>,
    /// Required leading zero bits of a PoW block hash.
    pub difficulty: u32,
    pub seed: u64,
    /// Total puzzle attempts, across all validators, before giving up.
    pub max_attempts: u64,
}

/// Result of running consensus for one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Election {
    pub proposer: String,
    pub proof: ConsensusProof,
    pub attempts: u64,
}

impl ConsensusStub {
    pub fn dpos(validators: Vec<String>) -> Self {
        Self { kind: ConsensusKind::Dpos, validators, difficulty: 0, seed: 0, max_attempts: 0 }
    }

    pub fn pow(validators: Vec<String>, difficulty: u32, seed: u64) -> Self {
        Self { kind: ConsensusKind::Pow, validators, difficulty, seed, max_attempts: 1 << 24 }
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.validators.is_empty() {
            return Err(LedgerError::Config("validator list is empty"));
        }
        if self.kind == ConsensusKind::Pow && self.difficulty > 32 {
            return Err(LedgerError::Config("toy PoW difficulty is capped at 32 bits"));
        }
        Ok(())
    }

    /// The server role for training round `round`.
    ///
    /// DPoS: `validators[round mod n]`. PoW: the winner of a puzzle race
    /// over the round number alone.
    pub fn selected_server(&self, round: u64) -> Result<String, LedgerError> {
        match self.kind {
            ConsensusKind::Dpos => Ok(self.rotation(round).to_owned()),
            ConsensusKind::Pow => {
                let header = BlockHeader { height: round, prev_hash: [0; 32], tx_root: [0; 32] };
                Ok(self.race(&header, round ^ 0x726f_756e_6400)?.proposer)
            }
        }
    }

    fn rotation(&self, index: u64) -> &str {
        &self.validators[(index % self.validators.len() as u64) as usize]
    }

    /// Elects a proposer for the block described by `header`.
    pub fn elect(&self, header: &BlockHeader) -> Result<Election, LedgerError> {
        match self.kind {
            ConsensusKind::Dpos => {
                let index = header.height % self.validators.len() as u64;
                Ok(Election {
                    proposer: self.rotation(header.height).to_owned(),
                    proof: ConsensusProof::Dpos { rotation_index: index },
                    attempts: 0,
                })
            }
            ConsensusKind::Pow => self.race(header, header.height),
        }
    }

    /// Validators take turns, each trying the next nonce from its own seeded
    /// stream; the first hash meeting the difficulty wins.
    fn race(&self, header: &BlockHeader, salt: u64) -> Result<Election, LedgerError> {
        let mut streams: Vec<ChaCha20Rng> = (0..self.validators.len())
            .map(|i| {
                let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ salt.rotate_left(17));
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        let mut attempts = 0u64;
        while attempts < self.max_attempts {
            for (i, stream) in streams.iter_mut().enumerate() {
                let nonce = stream.next_u64();
                attempts += 1;
                let proposer = &self.validators[i];
                let proof = ConsensusProof::Pow { nonce };
                if leading_zero_bits(&header.hash_with(proposer, &proof)) >= self.difficulty {
                    return Ok(Election { proposer: proposer.clone(), proof, attempts });
                }
            }
        }
        Err(LedgerError::PowTimeout { height: header.height, attempts })
    }

    /// Checks the consensus witness of a sealed block.
    pub fn check(&self, header: &BlockHeader, proposer: &str, proof: &ConsensusProof) -> bool {
        match (self.kind, proof) {
            (ConsensusKind::Dpos, ConsensusProof::Dpos { rotation_index }) => {
                *rotation_index == header.height % self.validators.len() as u64
                    && proposer == self.rotation(header.height)
            }
            (ConsensusKind::Pow, ConsensusProof::Pow { .. }) => {
                self.validators.iter().any(|v| v == proposer)
                    && leading_zero_bits(&header.hash_with(proposer, proof)) >= self.difficulty
            }
            _ => false,
        }
    }
}
