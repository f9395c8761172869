//! Off-chain payload store keyed by chameleon hash.
//!
//! Entries are immutable except through [`OffchainStore::rewrite_entry`],
//! which swaps the payload for random noise under the same key using the
//! owner's trapdoor. The key, and therefore the on-chain commitment, never
//! changes.

use std::collections::BTreeMap;
use std::fs;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use sha2::{Digest as _, Sha256};

use crate::chameleon::{
    ch_hash, ch_rewrite, ch_verify, digest_bytes, ChHashValue, ChameleonError, ChameleonParams, PublicKey,
    Randomizer, SecretKey,
};
use crate::codec::{self, DecodeError};
use crate::ledger::ClientId;
use crate::scalar::Scalar;

const ENTRY_MAGIC: &[u8; 4] = b"FUE2";
const ENTRY_SUFFIX: &str = "entry";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no entry under key {0}")]
    UnknownKey(ChHashValue),
    #[error("no public key registered for owner {0}")]
    UnknownOwner(ClientId),
    #[error("owner {0} is already registered with a different public key")]
    OwnerKeyMismatch(ClientId),
    #[error("an entry already exists under key {0}")]
    DuplicateKey(ChHashValue),
    #[error("unauthorized rewrite of {0}: trapdoor does not match the owner's key")]
    TrapdoorMismatch(ChHashValue),
    #[error(transparent)]
    Chameleon(#[from] ChameleonError),
    #[error("entry file {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error("entry {0} fails verification against its key")]
    Corrupt(ChHashValue),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredEntry {
    pub key: ChHashValue,
    /// Canonical vector encoding of the payload.
    pub payload: Vec<u8>,
    pub randomizer: Randomizer,
    pub owner: ClientId,
    pub rewritten: bool,
}

impl StoredEntry {
    /// Binary envelope: magic, owner (u32 LE), flags (u8), key and
    /// randomizer each as u32-length-prefixed ASCII decimal, then the
    /// canonical payload.
    pub fn encode(&self) -> Vec<u8> {
        let k = self.key.0.to_str_radix(10);
        let r = self.randomizer.0.to_str_radix(10);
        let mut out = Vec::with_capacity(17 + k.len() + r.len() + self.payload.len());
        out.extend_from_slice(ENTRY_MAGIC);
        out.extend_from_slice(&self.owner.0.to_le_bytes());
        out.push(u8::from(self.rewritten));
        for text in [&k, &r] {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, DecodeError> {
        if bytes.get(..4) != Some(ENTRY_MAGIC.as_slice()) {
            return Err(DecodeError::Malformed("bad entry magic"));
        }
        let owner = ClientId(codec::read_u32(bytes, 4)?);
        let flags = *bytes.get(8).ok_or(DecodeError::Truncated { needed: 9, available: bytes.len() })?;
        if flags > 1 {
            return Err(DecodeError::Malformed("unknown entry flags"));
        }
        let (key, at) = read_decimal(bytes, 9, "key is not decimal")?;
        let (r, at) = read_decimal(bytes, at, "randomizer is not decimal")?;
        let payload = bytes[at..].to_vec();
        // Validate the payload framing.
        codec::decode_vector::<f64>(&payload)?;
        Ok(Self { key: ChHashValue(key), payload, randomizer: Randomizer(r), owner, rewritten: flags == 1 })
    }

    /// File name stem: hex SHA-256 of the key's big-endian bytes. Keys are
    /// too long to serve as file names at production sizes.
    pub fn file_stem(key: &ChHashValue) -> String {
        hex::encode(Sha256::digest(key.0.to_bytes_be()))
    }
}

fn read_decimal(
    bytes: &[u8],
    at: usize,
    what: &'static str,
) -> std::result::Result<(num_bigint::BigUint, usize), DecodeError> {
    let len = codec::read_u32(bytes, at)? as usize;
    let end = at + 4 + len;
    let text =
        bytes.get(at + 4..end).ok_or(DecodeError::Truncated { needed: end, available: bytes.len() })?;
    let v = std::str::from_utf8(text)
        .ok()
        .and_then(|s| codec::decimal::parse(s).ok())
        .ok_or(DecodeError::Malformed(what))?;
    Ok((v, end))
}

/// In-memory store with optional one-file-per-key persistence.
#[derive(Debug)]
pub struct OffchainStore<T: Scalar = f64> {
    params: Arc<ChameleonParams>,
    owners: BTreeMap<ClientId, PublicKey>,
    entries: BTreeMap<ChHashValue, StoredEntry>,
    dir: Option<PathBuf>,
    replacement_scale: T,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> OffchainStore<T> {
    pub fn new(params: Arc<ChameleonParams>) -> Self {
        Self {
            params,
            owners: BTreeMap::new(),
            entries: BTreeMap::new(),
            dir: None,
            replacement_scale: T::one(),
            _scalar: PhantomData,
        }
    }

    /// Persists every entry under `dir` from now on, writing out what is
    /// already held.
    pub fn persist_to(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        self.dir = Some(dir);
        for entry in self.entries.values() {
            self.write_entry(entry)?;
        }
        Ok(())
    }

    /// Loads a persisted store. Owner keys must be supplied (they live on
    /// chain); every entry is verified against its key.
    pub fn open(
        dir: impl AsRef<Path>,
        params: Arc<ChameleonParams>,
        owners: BTreeMap<ClientId, PublicKey>,
    ) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut store = Self::new(params);
        store.owners = owners;
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ENTRY_SUFFIX))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = fs::read(&path)?;
            let entry = StoredEntry::decode(&bytes)
                .map_err(|source| StoreError::Decode { path: path.clone(), source })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != StoredEntry::file_stem(&entry.key) {
                return Err(StoreError::Decode {
                    path,
                    source: DecodeError::Malformed("file name does not match the key"),
                });
            }
            let key = entry.key.clone();
            store.entries.insert(key.clone(), entry);
            if !store.verify_entry(&key)? {
                return Err(StoreError::Corrupt(key));
            }
        }
        store.dir = Some(dir);
        Ok(store)
    }

    /// Half-width `s` of the uniform `[-s, s]` replacement distribution.
    pub fn set_replacement_scale(&mut self, s: T) {
        self.replacement_scale = s;
    }

    pub fn params(&self) -> &Arc<ChameleonParams> {
        &self.params
    }

    pub fn register_owner(&mut self, owner: ClientId, pk: PublicKey) -> Result<()> {
        match self.owners.get(&owner) {
            Some(existing) if *existing != pk => Err(StoreError::OwnerKeyMismatch(owner)),
            Some(_) => Ok(()),
            None => {
                self.owners.insert(owner, pk);
                Ok(())
            }
        }
    }

    pub fn owner_key(&self, owner: ClientId) -> Result<&PublicKey> {
        self.owners.get(&owner).ok_or(StoreError::UnknownOwner(owner))
    }

    /// Stores `payload` under `ch_hash(pk, digest(payload), r)` and returns
    /// the key for on-chain commitment.
    pub fn put(
        &mut self,
        owner: ClientId,
        payload: &[T],
        pk: &PublicKey,
        r: Randomizer,
    ) -> Result<ChHashValue> {
        if let Some(i) = payload.iter().position(|v| !v.is_finite()) {
            return Err(ChameleonError::NonFinite(i).into());
        }
        let bytes = codec::encode_vector(payload);
        let key = ch_hash(pk, &digest_bytes(&bytes, pk.params()), &r)?;
        if self.entries.contains_key(&key) {
            return Err(StoreError::DuplicateKey(key));
        }
        self.register_owner(owner, pk.clone())?;
        let entry = StoredEntry { key: key.clone(), payload: bytes, randomizer: r, owner, rewritten: false };
        self.write_entry(&entry)?;
        self.entries.insert(key.clone(), entry);
        Ok(key)
    }

    /// [`put`](Self::put) with a fresh uniform randomizer.
    pub fn put_random<R: Rng + ?Sized>(
        &mut self,
        owner: ClientId,
        payload: &[T],
        pk: &PublicKey,
        rng: &mut R,
    ) -> Result<(ChHashValue, Randomizer)> {
        let r = Randomizer::random(pk.params(), rng);
        let key = self.put(owner, payload, pk, r.clone())?;
        Ok((key, r))
    }

    pub fn get(&self, key: &ChHashValue) -> Result<(Vec<T>, Randomizer)> {
        let entry = self.entry(key)?;
        let values = codec::decode_vector(&entry.payload)
            .map_err(|source| StoreError::Decode { path: PathBuf::from(key.to_hex()), source })?;
        Ok((values, entry.randomizer.clone()))
    }

    pub fn entry(&self, key: &ChHashValue) -> Result<&StoredEntry> {
        self.entries.get(key).ok_or_else(|| StoreError::UnknownKey(key.clone()))
    }

    pub fn contains(&self, key: &ChHashValue) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &StoredEntry> {
        self.entries.values()
    }

    pub fn keys_owned_by(&self, owner: ClientId) -> Vec<ChHashValue> {
        self.entries.values().filter(|e| e.owner == owner).map(|e| e.key.clone()).collect()
    }

    /// Checks the entry against its key under the owner's public key.
    pub fn verify_entry(&self, key: &ChHashValue) -> Result<bool> {
        let entry = self.entry(key)?;
        let pk = self.owner_key(entry.owner)?;
        let m = digest_bytes(&entry.payload, pk.params());
        Ok(ch_verify(pk, &m, key, &entry.randomizer))
    }

    /// Replaces the payload under `key` with uniform noise of the same
    /// length, re-blinding with the trapdoor so the key still verifies.
    /// The original bytes are zeroed and dropped. On a trapdoor mismatch the
    /// entry is left untouched.
    pub fn rewrite_entry<R: Rng + ?Sized>(
        &mut self,
        key: &ChHashValue,
        sk: &SecretKey,
        rng: &mut R,
    ) -> Result<Randomizer> {
        let entry = self.entry(key)?;
        let pk = self.owner_key(entry.owner)?.clone();
        let len = codec::read_u64(&entry.payload, 0)
            .map_err(|source| StoreError::Decode { path: PathBuf::from(key.to_hex()), source })?
            as usize;
        let s = self.replacement_scale;
        let noise: Vec<T> = (0..len).map(|_| rng.gen_range(-s..=s)).collect();
        let new_bytes = codec::encode_vector(&noise);

        let m = digest_bytes(&entry.payload, pk.params());
        let m_new = digest_bytes(&new_bytes, pk.params());
        let r_new = match ch_rewrite(&pk, sk, &m, &m_new, &entry.randomizer) {
            Ok(r) => r,
            Err(ChameleonError::TrapdoorMismatch) => return Err(StoreError::TrapdoorMismatch(key.clone())),
            Err(e) => return Err(e.into()),
        };
        if !ch_verify(&pk, &m_new, key, &r_new) {
            return Err(StoreError::TrapdoorMismatch(key.clone()));
        }

        let mut updated = StoredEntry {
            key: key.clone(),
            payload: new_bytes,
            randomizer: r_new.clone(),
            owner: entry.owner,
            rewritten: true,
        };
        self.write_entry(&updated)?;
        let slot = self.entries.get_mut(key).expect("entry exists");
        std::mem::swap(slot, &mut updated);
        updated.payload.fill(0);
        Ok(r_new)
    }

    /// True if `needle` occurs in any entry, in memory or on disk.
    pub fn contains_bytes(&self, needle: &[u8]) -> Result<bool> {
        if needle.is_empty() {
            return Ok(true);
        }
        let hit = |hay: &[u8]| hay.windows(needle.len()).any(|w| w == needle);
        if self.entries.values().any(|e| hit(&e.encode())) {
            return Ok(true);
        }
        if let Some(dir) = &self.dir {
            for file in fs::read_dir(dir)? {
                if hit(&fs::read(file?.path())?) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Test hook: overwrite a payload without the trapdoor, as a dishonest
    /// storage operator would.
    #[doc(hidden)]
    pub fn overwrite_payload_unchecked(&mut self, key: &ChHashValue, payload: &[T]) -> Result<()> {
        let bytes = codec::encode_vector(payload);
        let entry = self.entries.get_mut(key).ok_or_else(|| StoreError::UnknownKey(key.clone()))?;
        entry.payload = bytes;
        let entry = entry.clone();
        self.write_entry(&entry)
    }

    fn write_entry(&self, entry: &StoredEntry) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let stem = StoredEntry::file_stem(&entry.key);
        let path = dir.join(format!("{stem}.{ENTRY_SUFFIX}"));
        let tmp = dir.join(format!("{stem}.tmp"));
        fs::write(&tmp, entry.encode())?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}
