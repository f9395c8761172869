//! Verifiable federated unlearning on a redactable ledger.
//!
//! Clients commit chameleon hashes of their model updates on-chain and keep
//! the payloads off-chain. To forget a client, the server calibrates the
//! model from the retained clients' stored updates and commits a hash anyone
//! can recompute; the forgotten client then overwrites its stored updates
//! with noise using its trapdoor, leaving every on-chain hash valid.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod chameleon;
pub mod codec;
pub mod federation;
pub mod fl;
pub mod harness;
pub mod ledger;
pub mod offchain;
pub mod scalar;
pub mod unlearning;

pub use chameleon::{ChHashValue, ChameleonParams, KeyPair, PublicKey, Randomizer, SecretKey};
pub use federation::{CostModel, Federation, Timing};
pub use fl::{ClientDataset, Dataset, GlobalModel, ModelUpdate};
pub use ledger::{ClientId, ContractState, Ledger};
pub use offchain::OffchainStore;
pub use scalar::Scalar;
pub use unlearning::{run_unlearning, UnlearnOptions, UnlearnOutcome, UnlearnRequest};

pub type GlobalModel64 = GlobalModel<f64>;
pub type GlobalModel32 = GlobalModel<f32>;
pub type ModelUpdate64 = ModelUpdate<f64>;
pub type ModelUpdate32 = ModelUpdate<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type ClientDataset64 = ClientDataset<f64>;
pub type ClientDataset32 = ClientDataset<f32>;
pub type Federation64 = Federation<f64>;
pub type Federation32 = Federation<f32>;
pub type OffchainStore64 = OffchainStore<f64>;
pub type OffchainStore32 = OffchainStore<f32>;
pub type UnlearnOutcome64 = UnlearnOutcome<f64>;
pub type UnlearnOutcome32 = UnlearnOutcome<f32>;
