//! Primality testing and prime-order group construction.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

/// Miller–Rabin rounds applied to every accepted prime.
pub const MR_ROUNDS: usize = 64;

/// Witnesses that make Miller–Rabin deterministic for all n < 3.3 * 10^24.
const SMALL_WITNESSES: [u32; 13] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41];

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
    227, 229, 233, 239, 241, 251,
];

/// Miller–Rabin probable-prime test.
///
/// Inputs below 2^64 are decided exactly with a fixed witness set. Larger
/// inputs get `rounds` uniformly drawn witnesses from `rng`.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &sp in SMALL_PRIMES.iter() {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }

    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;

    let passes = |a: &BigUint| -> bool {
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            return true;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                return true;
            }
            if x.is_one() {
                return false;
            }
        }
        false
    };

    if n.bits() <= 64 {
        return SMALL_WITNESSES.iter().all(|&w| passes(&BigUint::from(w)));
    }

    let upper = n - 2u32;
    (0..rounds).all(|_| {
        let a = rng.gen_biguint_range(&two, &upper);
        passes(&a)
    })
}

fn passes_trial_division(n: &BigUint) -> bool {
    SMALL_PRIMES.iter().all(|&sp| {
        let sp = BigUint::from(sp);
        *n == sp || !(n % &sp).is_zero()
    })
}

/// Draws a uniformly random prime of exactly `bits` bits, giving up after
/// `budget` candidates.
pub fn random_prime<R: Rng + ?Sized>(bits: u64, budget: usize, rng: &mut R) -> Option<BigUint> {
    debug_assert!(bits >= 2);
    let top = BigUint::one() << (bits - 1);
    for _ in 0..budget {
        let mut candidate = rng.gen_biguint(bits) | &top;
        if bits > 2 {
            candidate |= BigUint::one();
        }
        if passes_trial_division(&candidate) && is_probable_prime(&candidate, MR_ROUNDS, rng) {
            return Some(candidate);
        }
    }
    None
}

/// Searches for a prime `p = n*q + 1` of exactly `p_bits` bits.
pub fn prime_with_subgroup<R: Rng + ?Sized>(
    q: &BigUint,
    p_bits: u64,
    budget: usize,
    rng: &mut R,
) -> Option<BigUint> {
    let low = (BigUint::one() << (p_bits - 1)).div_ceil(q);
    let high = ((BigUint::one() << p_bits) - 1u32) / q;
    if low > high {
        return None;
    }
    let two = BigUint::from(2u32);
    for _ in 0..budget {
        let mut n = if low == high { low.clone() } else { rng.gen_biguint_range(&low, &(&high + 1u32)) };
        // q is odd, so an even cofactor keeps p odd.
        if n.is_odd() {
            n += 1u32;
        }
        if n < two {
            continue;
        }
        let p = &n * q + 1u32;
        if p.bits() != p_bits {
            continue;
        }
        if passes_trial_division(&p) && is_probable_prime(&p, MR_ROUNDS, rng) {
            return Some(p);
        }
    }
    None
}
