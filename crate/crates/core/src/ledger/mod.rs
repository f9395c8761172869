//! Simulated permissioned ledger: hash-linked blocks of smart-contract
//! transactions plus the contract state they fold into.

mod block;
mod consensus;
mod state;
mod tx;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

pub use block::{leading_zero_bits, tx_root, Block, BlockHeader, ConsensusProof, Hash256};
pub use consensus::{ConsensusKind, ConsensusStub, Election};
pub use state::{ContractState, PendingRequest};
pub use tx::{CalibrationCommit, ClientId, Payload, Registration, Transaction, TxKind};

use crate::chameleon::{ChHashValue, ChameleonParams};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("nonce {nonce} already used by {client}")]
    DuplicateNonce { client: ClientId, nonce: u64 },
    #[error("nonce gap for {client}: expected {expected}, got {got}")]
    NonceGap { client: ClientId, expected: u64, got: u64 },
    #[error("{kind:?} for round {round} by {client} is already committed")]
    OverwriteAttempt { kind: TxKind, round: u64, client: ClientId },
    #[error("{0} has no registered key")]
    UnknownClient(ClientId),
    #[error("round {0} has no committed local hashes")]
    UnknownRound(u64),
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
    #[error("no pending transactions to seal")]
    EmptyBlock,
    #[error("proof of work for height {height} unsolved after {attempts} attempts")]
    PowTimeout { height: u64, attempts: u64 },
    #[error("consensus configuration: {0}")]
    Config(&'static str),
    #[error("ledger dump line {line}: {reason}")]
    Load { line: usize, reason: String },
    #[error("replay of block {height} failed: {source}")]
    Replay {
        height: u64,
        #[source]
        source: Box<LedgerError>,
    },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::Io(e.to_string())
    }
}

/// Accepted transaction: it will be included in the block at `height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub height: u64,
}

/// What sealing a block cost, for interaction-time accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealReport {
    pub height: u64,
    pub proposer: String,
    pub tx_count: usize,
    /// Puzzle attempts across all validators; zero under DPoS.
    pub pow_attempts: u64,
}

/// Single-writer ledger. Submissions are validated against the state with
/// all pending transactions applied; readers see only sealed state.
#[derive(Debug, Clone)]
pub struct Ledger {
    params: Arc<ChameleonParams>,
    consensus: ConsensusStub,
    blocks: Vec<Block>,
    state: ContractState,
    pending: Vec<Transaction>,
    pending_state: ContractState,
}

impl Ledger {
    /// Creates a chain holding only its genesis block.
    pub fn new(params: Arc<ChameleonParams>, consensus: ConsensusStub) -> Result<Self, LedgerError> {
        consensus.validate()?;
        let mut ledger = Self {
            params,
            consensus,
            blocks: Vec::new(),
            state: ContractState::default(),
            pending: Vec::new(),
            pending_state: ContractState::default(),
        };
        ledger.seal_block(true)?;
        Ok(ledger)
    }

    pub fn params(&self) -> &Arc<ChameleonParams> {
        &self.params
    }

    pub fn consensus(&self) -> &ConsensusStub {
        &self.consensus
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    /// Sealed contract state.
    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    /// Nonce the next transaction from `client` must carry, counting
    /// pending submissions.
    pub fn next_nonce(&self, client: ClientId) -> u64 {
        self.pending_state.next_nonce(client)
    }

    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Receipt, LedgerError> {
        self.pending_state.apply(&tx, &self.params)?;
        self.pending.push(tx);
        Ok(Receipt { height: self.blocks.len() as u64 })
    }

    /// Seals all pending transactions into the next block.
    pub fn seal_block(&mut self, allow_empty: bool) -> Result<SealReport, LedgerError> {
        if self.pending.is_empty() && !allow_empty {
            return Err(LedgerError::EmptyBlock);
        }
        let header = BlockHeader {
            height: self.blocks.len() as u64,
            prev_hash: self.blocks.last().map(Block::hash).unwrap_or([0; 32]),
            tx_root: tx_root(&self.pending),
        };
        let election = self.consensus.elect(&header)?;
        let txs = std::mem::take(&mut self.pending);
        let report = SealReport {
            height: header.height,
            proposer: election.proposer.clone(),
            tx_count: txs.len(),
            pow_attempts: election.attempts,
        };
        self.blocks.push(Block {
            height: header.height,
            prev_hash: header.prev_hash,
            tx_root: header.tx_root,
            proposer: election.proposer,
            consensus_proof: election.proof,
            txs,
        });
        self.state = self.pending_state.clone();
        Ok(report)
    }

    /// Committed local hashes of `round` except those of `exclude`.
    pub fn query_hashes(
        &self,
        round: u64,
        exclude: &[ClientId],
    ) -> Result<BTreeMap<ClientId, ChHashValue>, LedgerError> {
        self.state.query_hashes(round, exclude)
    }

    /// Returns the height of the first block whose link, transaction root or
    /// consensus witness fails to validate.
    pub fn verify_chain(&self) -> Result<(), u64> {
        verify_blocks(&self.blocks, &self.consensus)
    }

    /// Rebuilds the contract state from the block log alone.
    pub fn replay(&self) -> Result<ContractState, LedgerError> {
        replay(&self.blocks, &self.params)
    }

    /// One JSON block per line.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<(), LedgerError> {
        for block in &self.blocks {
            serde_json::to_writer(&mut out, block).map_err(|e| LedgerError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Loads a dump. Blocks are not verified here (see
    /// [`Ledger::verify_chain`]); the state is rebuilt by replay.
    pub fn load<R: BufRead>(
        input: R,
        params: Arc<ChameleonParams>,
        consensus: ConsensusStub,
    ) -> Result<Self, LedgerError> {
        consensus.validate()?;
        let blocks = read_blocks(input)?;
        let state = replay(&blocks, &params)?;
        Ok(Self { params, consensus, blocks, pending: Vec::new(), pending_state: state.clone(), state })
    }

    /// Test hook: mutable access to sealed blocks, bypassing every invariant.
    #[doc(hidden)]
    pub fn blocks_mut_unchecked(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}

/// Parses a dump without validating or replaying it.
pub fn read_blocks<R: BufRead>(input: R) -> Result<Vec<Block>, LedgerError> {
    let mut blocks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let block: Block = serde_json::from_str(&line)
            .map_err(|e| LedgerError::Load { line: i + 1, reason: e.to_string() })?;
        blocks.push(block);
    }
    if blocks.is_empty() {
        return Err(LedgerError::Load { line: 0, reason: "no genesis block".into() });
    }
    Ok(blocks)
}

pub fn verify_blocks(blocks: &[Block], consensus: &ConsensusStub) -> Result<(), u64> {
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let ok = block.height == i as u64
            && block.prev_hash == prev
            && block.tx_root == tx_root(&block.txs)
            && consensus.check(&block.header(), &block.proposer, &block.consensus_proof);
        if !ok {
            return Err(i as u64);
        }
        prev = block.hash();
    }
    Ok(())
}

pub fn replay(blocks: &[Block], params: &ChameleonParams) -> Result<ContractState, LedgerError> {
    let mut state = ContractState::default();
    for block in blocks {
        for tx in &block.txs {
            state
                .apply(tx, params)
                .map_err(|e| LedgerError::Replay { height: block.height, source: Box::new(e) })?;
        }
    }
    Ok(state)
}
