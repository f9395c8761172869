use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tx::Transaction;

pub type Hash256 = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusProof {
    Dpos { rotation_index: u64 },
    Pow { nonce: u64 },
}

/// The fields a block hash commits to, apart from proposer and proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Hash256,
    pub tx_root: Hash256,
}

impl BlockHeader {
    pub fn hash_with(&self, proposer: &str, proof: &ConsensusProof) -> Hash256 {
        let mut h = Sha256::new();
        h.update(self.height.to_le_bytes());
        h.update(self.prev_hash);
        h.update(self.tx_root);
        h.update((proposer.len() as u64).to_le_bytes());
        h.update(proposer.as_bytes());
        match proof {
            ConsensusProof::Dpos { rotation_index } => {
                h.update([0u8]);
                h.update(rotation_index.to_le_bytes());
            }
            ConsensusProof::Pow { nonce } => {
                h.update([1u8]);
                h.update(nonce.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    #[serde(with = "hex_hash")]
    pub prev_hash: Hash256,
    #[serde(with = "hex_hash")]
    pub tx_root: Hash256,
    pub proposer: String,
    pub consensus_proof: ConsensusProof,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn header(&self) -> BlockHeader {
        BlockHeader { height: self.height, prev_hash: self.prev_hash, tx_root: self.tx_root }
    }

    pub fn hash(&self) -> Hash256 {
        self.header().hash_with(&self.proposer, &self.consensus_proof)
    }
}

/// SHA-256 over the concatenated per-transaction SHA-256 digests.
pub fn tx_root(txs: &[Transaction]) -> Hash256 {
    let mut outer = Sha256::new();
    for tx in txs {
        outer.update(Sha256::digest(tx.canonical_bytes()));
    }
    outer.finalize().into()
}

pub fn leading_zero_bits(hash: &Hash256) -> u32 {
    let mut bits = 0;
    for byte in hash {
        if *byte == 0 {
            bits += 8;
        } else {
            bits += byte.leading_zeros();
            break;
        }
    }
    bits
}

mod hex_hash {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(D::Error::custom)?;
        bytes.try_into().map_err(|_| D::Error::custom("expected 32-byte hash"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_zeros() {
        let mut h = [0xffu8; 32];
        assert_eq!(leading_zero_bits(&h), 0);
        h[0] = 0;
        h[1] = 0x10;
        assert_eq!(leading_zero_bits(&h), 11);
        assert_eq!(leading_zero_bits(&[0; 32]), 256);
    }
}
