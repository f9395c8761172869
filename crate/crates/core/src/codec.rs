//! Canonical byte encodings shared by hashing, the off-chain store and
//! checkpoints.

use num_bigint::BigUint;

use crate::scalar::Scalar;

/// Length-prefixed little-endian `f64` encoding of a parameter vector:
/// `u64 len (LE) || f64[0] (LE) || ... || f64[len-1] (LE)`.
pub fn encode_vector<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_f64_lossless().to_le_bytes());
    }
    out
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("malformed field: {0}")]
    Malformed(&'static str),
}

/// Inverse of [`encode_vector`]. Returns the vector and the number of bytes
/// consumed.
pub fn decode_vector_prefix<T: Scalar>(bytes: &[u8]) -> Result<(Vec<T>, usize), DecodeError> {
    let len = read_u64(bytes, 0)? as usize;
    let needed = len
        .checked_mul(8)
        .and_then(|n| n.checked_add(8))
        .ok_or(DecodeError::Malformed("vector length overflows"))?;
    if bytes.len() < needed {
        return Err(DecodeError::Truncated { needed, available: bytes.len() });
    }
    let values = bytes[8..needed]
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((values, needed))
}

pub fn decode_vector<T: Scalar>(bytes: &[u8]) -> Result<Vec<T>, DecodeError> {
    let (v, used) = decode_vector_prefix(bytes)?;
    if used != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - used));
    }
    Ok(v)
}

pub(crate) fn read_u64(bytes: &[u8], at: usize) -> Result<u64, DecodeError> {
    bytes
        .get(at..at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or(DecodeError::Truncated { needed: at + 8, available: bytes.len() })
}

pub(crate) fn read_u32(bytes: &[u8], at: usize) -> Result<u32, DecodeError> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
        .ok_or(DecodeError::Truncated { needed: at + 4, available: bytes.len() })
}

/// Serde adapter writing big integers as decimal strings.
pub mod decimal {
    use super::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(D::Error::custom)
    }

    pub fn parse(s: &str) -> Result<BigUint, String> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("not a decimal integer: {s:?}"));
        }
        BigUint::parse_bytes(s.as_bytes(), 10).ok_or_else(|| format!("bad integer {s:?}"))
    }

    pub mod option {
        use super::BigUint;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigUint>, D::Error> {
            let s: Option<String> = Option::deserialize(d)?;
            s.map(|s| super::parse(&s).map_err(serde::de::Error::custom)).transpose()
        }
    }
}
