//! Discrete-log chameleon hash over the order-`q` subgroup of `Z_p^*`.
//!
//! `H = g^m * h^r mod p` with public key `h = g^x`. Anyone holding the public
//! key can hash and verify; the holder of the trapdoor `x` can open a hash to
//! any other message by solving for a new randomizer.

mod prime;

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec::{self, decimal};
use crate::scalar::Scalar;

pub use prime::{is_probable_prime, prime_with_subgroup, random_prime, MR_ROUNDS};

/// Bit length of `p` used by [`ch_setup`] once `q` reaches production size.
pub const PRODUCTION_P_BITS: u64 = 2048;
/// Smallest `q` width treated as production-size by [`ch_setup`].
pub const PRODUCTION_MIN_LAMBDA: u32 = 224;
/// Extra bits given to `p` over `q` for test-profile parameters.
pub const TEST_EXTRA_P_BITS: u64 = 32;

const PRIME_BUDGET_PER_BIT: usize = 200;
const GENERATOR_BUDGET: usize = 256;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ChameleonError {
    #[error("no valid group parameters found within the retry budget ({0})")]
    GenerationTimeout(&'static str),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("{what} out of range: must be < q")]
    Domain { what: &'static str },
    #[error("trapdoor does not match the public key")]
    TrapdoorMismatch,
    #[error("update contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("malformed key record: {0}")]
    Record(String),
}

pub type Result<T> = std::result::Result<T, ChameleonError>;

/// Group description `(p, q, g)` with `q | p - 1` and `g` of order `q`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChameleonParams {
    #[serde(with = "decimal")]
    p: BigUint,
    #[serde(with = "decimal")]
    q: BigUint,
    #[serde(with = "decimal")]
    g: BigUint,
}

impl fmt::Debug for ChameleonParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChameleonParams")
            .field("p_bits", &self.p.bits())
            .field("q_bits", &self.q.bits())
            .finish()
    }
}

impl ChameleonParams {
    /// Validates and wraps an explicit `(p, q, g)` triple.
    pub fn new(p: BigUint, q: BigUint, g: BigUint) -> Result<Self> {
        let params = Self { p, q, g };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    /// Security parameter: the bit length of `q`.
    pub fn lambda(&self) -> u32 {
        self.q.bits() as u32
    }

    pub fn validate(&self) -> Result<()> {
        // Witnesses only matter above 2^64; a fixed seed keeps this pure.
        let mut rng = <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(0x5eed);
        if !is_probable_prime(&self.q, MR_ROUNDS, &mut rng) {
            return Err(ChameleonError::InvalidParams("q is not prime"));
        }
        if !is_probable_prime(&self.p, MR_ROUNDS, &mut rng) {
            return Err(ChameleonError::InvalidParams("p is not prime"));
        }
        if !((&self.p - 1u32) % &self.q).is_zero() {
            return Err(ChameleonError::InvalidParams("q does not divide p - 1"));
        }
        if self.g <= BigUint::one() || self.g >= self.p {
            return Err(ChameleonError::InvalidParams("g outside (1, p)"));
        }
        if !self.g.modpow(&self.q, &self.p).is_one() {
            return Err(ChameleonError::InvalidParams("g does not have order q"));
        }
        Ok(())
    }

    /// True when `v` lies in the order-`q` subgroup.
    pub fn in_subgroup(&self, v: &BigUint) -> bool {
        !v.is_zero() && *v < self.p && v.modpow(&self.q, &self.p).is_one()
    }

    fn check_exponent(&self, v: &BigUint, what: &'static str) -> Result<()> {
        if *v >= self.q {
            Err(ChameleonError::Domain { what })
        } else {
            Ok(())
        }
    }
}

/// Generates group parameters with a `lambda`-bit `q`.
///
/// Test-size `q` (below [`PRODUCTION_MIN_LAMBDA`] bits) gets a `p` that is
/// [`TEST_EXTRA_P_BITS`] wider; production-size `q` gets a
/// [`PRODUCTION_P_BITS`]-bit `p`.
pub fn ch_setup<R: Rng + ?Sized>(lambda: u32, rng: &mut R) -> Result<ChameleonParams> {
    let p_bits = if lambda >= PRODUCTION_MIN_LAMBDA {
        PRODUCTION_P_BITS.max(u64::from(lambda) + 1)
    } else {
        u64::from(lambda) + TEST_EXTRA_P_BITS
    };
    ch_setup_sized(lambda, p_bits, rng)
}

/// [`ch_setup`] with an explicit bit length for `p`.
pub fn ch_setup_sized<R: Rng + ?Sized>(lambda: u32, p_bits: u64, rng: &mut R) -> Result<ChameleonParams> {
    if !(3..=4096).contains(&lambda) {
        return Err(ChameleonError::InvalidParams("lambda must be in 3..=4096"));
    }
    if p_bits <= u64::from(lambda) || p_bits > 16_384 {
        return Err(ChameleonError::InvalidParams("p must be wider than q"));
    }
    let q_bits = u64::from(lambda);
    let q = random_prime(q_bits, PRIME_BUDGET_PER_BIT * q_bits as usize, rng)
        .ok_or(ChameleonError::GenerationTimeout("q"))?;
    let p = prime_with_subgroup(&q, p_bits, PRIME_BUDGET_PER_BIT * p_bits as usize, rng)
        .ok_or(ChameleonError::GenerationTimeout("p"))?;

    let cofactor = (&p - 1u32) / &q;
    let upper = &p - 1u32;
    for _ in 0..GENERATOR_BUDGET {
        let a = rng.gen_biguint_range(&BigUint::from(2u32), &upper);
        let g = a.modpow(&cofactor, &p);
        if !g.is_one() {
            return Ok(ChameleonParams { p, q, g });
        }
    }
    Err(ChameleonError::GenerationTimeout("generator"))
}

/// Message representative in `[0, q)`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "decimal")] pub BigUint);

/// Blinding exponent in `[0, q)`. Public.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Randomizer(#[serde(with = "decimal")] pub BigUint);

/// A chameleon hash value: an element of the order-`q` subgroup.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChHashValue(#[serde(with = "decimal")] pub BigUint);

macro_rules! decimal_debug {
    ($($t:ty),*) => {$(
        impl fmt::Debug for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($t), self.0)
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Display::fmt(&self.0, f)
            }
        }
    )*};
}
decimal_debug!(Digest, Randomizer, ChHashValue);

impl Randomizer {
    /// Uniform draw from `[0, q)`.
    pub fn random<R: Rng + ?Sized>(params: &ChameleonParams, rng: &mut R) -> Self {
        Randomizer(rng.gen_biguint_below(&params.q))
    }
}

impl ChHashValue {
    /// Big-endian bytes, as used for store file names.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes_be())
    }
}

/// Public key `(g, h)` together with the group it lives in.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    params: Arc<ChameleonParams>,
    h: BigUint,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey(h={})", self.h)
    }
}

impl PublicKey {
    /// Accepts `h` only if it lies in the order-`q` subgroup.
    pub fn new(params: Arc<ChameleonParams>, h: BigUint) -> Result<Self> {
        if !params.in_subgroup(&h) || h.is_one() {
            return Err(ChameleonError::InvalidParams("h is not a subgroup element"));
        }
        Ok(Self { params, h })
    }

    pub fn params(&self) -> &ChameleonParams {
        &self.params
    }

    pub fn shared_params(&self) -> &Arc<ChameleonParams> {
        &self.params
    }

    pub fn g(&self) -> &BigUint {
        &self.params.g
    }

    pub fn h(&self) -> &BigUint {
        &self.h
    }
}

/// Trapdoor exponent `x`.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    x: BigUint,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    /// Wraps a raw trapdoor; the caller is responsible for `1 <= x < q`.
    pub fn from_exponent(x: BigUint) -> Self {
        Self { x }
    }

    pub fn exponent(&self) -> &BigUint {
        &self.x
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub pk: PublicKey,
    pub sk: SecretKey,
}

impl KeyPair {
    /// Builds a key pair from an explicit trapdoor in `[1, q-1]`.
    pub fn from_trapdoor(params: Arc<ChameleonParams>, x: BigUint) -> Result<Self> {
        if x.is_zero() || x >= params.q {
            return Err(ChameleonError::Domain { what: "trapdoor" });
        }
        let h = params.g.modpow(&x, &params.p);
        Ok(Self { pk: PublicKey { params, h }, sk: SecretKey { x } })
    }
}

/// Key generation: `x` uniform in `[1, q-1]`, `h = g^x mod p`.
pub fn ch_gen<R: Rng + ?Sized>(params: Arc<ChameleonParams>, rng: &mut R) -> KeyPair {
    let x = loop {
        let x = rng.gen_biguint_below(&params.q);
        if !x.is_zero() {
            break x;
        }
    };
    KeyPair::from_trapdoor(params, x).expect("x drawn in range")
}

/// `g^m * h^r mod p`.
pub fn ch_hash(pk: &PublicKey, m: &Digest, r: &Randomizer) -> Result<ChHashValue> {
    let params = pk.params();
    params.check_exponent(&m.0, "message digest")?;
    params.check_exponent(&r.0, "randomizer")?;
    let gm = params.g.modpow(&m.0, &params.p);
    let hr = pk.h.modpow(&r.0, &params.p);
    Ok(ChHashValue((gm * hr) % &params.p))
}

/// Accepts iff `hash` is the chameleon hash of `(m, r)` under `pk`.
/// Out-of-range inputs reject rather than error.
pub fn ch_verify(pk: &PublicKey, m: &Digest, hash: &ChHashValue, r: &Randomizer) -> bool {
    let params = pk.params();
    if hash.0.is_zero() || hash.0 >= params.p {
        return false;
    }
    matches!(ch_hash(pk, m, r), Ok(v) if v == *hash)
}

/// Trapdoor collision: returns `r' = (m - m_new) * x^-1 + r mod q`, so that
/// `(m_new, r')` hashes to the same value as `(m, r)`.
///
/// The collision is checked before returning; a trapdoor that does not
/// belong to `pk` yields [`ChameleonError::TrapdoorMismatch`].
pub fn ch_rewrite(
    pk: &PublicKey,
    sk: &SecretKey,
    m: &Digest,
    m_new: &Digest,
    r: &Randomizer,
) -> Result<Randomizer> {
    let params = pk.params();
    let q = &params.q;
    params.check_exponent(&m.0, "message digest")?;
    params.check_exponent(&m_new.0, "message digest")?;
    params.check_exponent(&r.0, "randomizer")?;
    let x = &sk.x % q;
    if x.is_zero() {
        return Err(ChameleonError::TrapdoorMismatch);
    }
    let x_inv = mod_inverse(&x, q).ok_or(ChameleonError::TrapdoorMismatch)?;
    let diff = (&m.0 + q - &m_new.0) % q;
    let r_new = Randomizer((diff * x_inv + &r.0) % q);

    let original = ch_hash(pk, m, r)?;
    if !ch_verify(pk, m_new, &original, &r_new) {
        return Err(ChameleonError::TrapdoorMismatch);
    }
    Ok(r_new)
}

/// Inverse of `a` modulo `m` via the extended Euclidean algorithm.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let (a, m) = (BigInt::from(a.clone()), BigInt::from(m.clone()));
    let e = a.extended_gcd(&m);
    if !e.gcd.is_one() {
        return None;
    }
    e.x.mod_floor(&m).to_biguint()
}

/// Embeds a parameter vector into `[0, q)`: SHA-256 of the canonical
/// encoding, read big-endian, reduced mod `q`.
pub fn digest_update<T: Scalar>(update: &[T], params: &ChameleonParams) -> Result<Digest> {
    if let Some(i) = update.iter().position(|v| !v.is_finite()) {
        return Err(ChameleonError::NonFinite(i));
    }
    Ok(digest_bytes(&codec::encode_vector(update), params))
}

/// Digest of an already canonical byte string.
pub fn digest_bytes(bytes: &[u8], params: &ChameleonParams) -> Digest {
    let hash = Sha256::digest(bytes);
    Digest(BigUint::from_bytes_be(&hash) % &params.q)
}

/// Text fixture for parameters and keys; big integers as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    #[serde(with = "decimal")]
    pub p: BigUint,
    #[serde(with = "decimal")]
    pub q: BigUint,
    #[serde(with = "decimal")]
    pub g: BigUint,
    #[serde(with = "decimal::option", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<BigUint>,
    #[serde(with = "decimal::option", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<BigUint>,
}

impl KeyRecord {
    pub fn from_params(params: &ChameleonParams) -> Self {
        Self { p: params.p.clone(), q: params.q.clone(), g: params.g.clone(), h: None, x: None }
    }

    pub fn from_public(pk: &PublicKey) -> Self {
        Self { h: Some(pk.h.clone()), ..Self::from_params(pk.params()) }
    }

    pub fn from_keypair(kp: &KeyPair) -> Self {
        Self { x: Some(kp.sk.x.clone()), ..Self::from_public(&kp.pk) }
    }

    pub fn params(&self) -> Result<ChameleonParams> {
        ChameleonParams::new(self.p.clone(), self.q.clone(), self.g.clone())
    }

    pub fn public_key(&self) -> Result<PublicKey> {
        let h = self.h.clone().ok_or_else(|| ChameleonError::Record("missing h".into()))?;
        PublicKey::new(Arc::new(self.params()?), h)
    }

    /// Rebuilds the key pair, checking that `h = g^x`.
    pub fn keypair(&self) -> Result<KeyPair> {
        let x = self.x.clone().ok_or_else(|| ChameleonError::Record("missing x".into()))?;
        let kp = KeyPair::from_trapdoor(Arc::new(self.params()?), x)?;
        if let Some(h) = &self.h {
            if *h != kp.pk.h {
                return Err(ChameleonError::TrapdoorMismatch);
            }
        }
        Ok(kp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("key record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| ChameleonError::Record(e.to_string()))
    }
}
