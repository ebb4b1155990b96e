//! Prime field arithmetic over GF(q).
//!
//! A [`FieldModulus`] is a prime `q < 2^64`, checked once at construction.
//! [`FieldElement`] carries its modulus so that residues of different fields
//! can never be mixed: the `try_*` methods report a [`FieldError`] and the
//! operator impls panic.
//!
//! ```
//! use fpgmm::field::FieldModulus;
//!
//! let gf7 = FieldModulus::new(7).unwrap();
//! let a = gf7.element(3);
//! let b = gf7.element(5);
//! assert_eq!((a + b).value(), 1);
//! assert_eq!((a * b).value(), 1);
//! assert_eq!(gf7.element(2).inv().unwrap().value(), 4);
//! ```

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Deterministic generator used for every experiment.
pub type SeededRng = ChaCha8Rng;

/// The Mersenne prime 2^31 - 1, used when no modulus is configured.
pub const DEFAULT_MODULUS: u64 = 2_147_483_647;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("cannot combine elements of GF({0}) and GF({1})")]
    ModulusMismatch(u64, u64),
    #[error("division by zero in GF({0})")]
    DivisionByZero(u64),
    #[error("need {requested} distinct elements outside {excluded} excluded ones, but GF({q}) has only {q}")]
    InsufficientFieldSize {
        requested: usize,
        excluded: usize,
        q: u64,
    },
}

/// Independent streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Libraries = 1,
    Desired = 2,
    Grouping = 3,
    Plan = 4,
    Noise = 5,
    Stragglers = 6,
}

/// Generator for one purpose of an experiment; streams never overlap.
pub fn rng_for(seed: u64, stream: RngStream) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A prime modulus `q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldModulus(u64);

impl FieldModulus {
    pub fn new(q: u64) -> Result<Self, FieldError> {
        if is_prime(q) {
            Ok(FieldModulus(q))
        } else {
            Err(FieldError::NotPrime(q))
        }
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    /// The element `value mod q`.
    #[inline]
    pub fn element(self, value: u64) -> FieldElement {
        FieldElement {
            value: value % self.0,
            modulus: self,
        }
    }

    /// Reduces a signed integer into the field.
    pub fn element_i64(self, value: i64) -> FieldElement {
        let r = (value as i128).rem_euclid(self.0 as i128);
        FieldElement {
            value: r as u64,
            modulus: self,
        }
    }

    #[inline]
    pub fn zero(self) -> FieldElement {
        FieldElement {
            value: 0,
            modulus: self,
        }
    }

    #[inline]
    pub fn one(self) -> FieldElement {
        self.element(1)
    }

    /// Iterates every residue `0..q` in ascending order.
    pub fn elements(self) -> impl Iterator<Item = FieldElement> {
        (0..self.0).map(move |v| FieldElement {
            value: v,
            modulus: self,
        })
    }

    #[inline]
    pub(crate) fn add_raw(self, a: u64, b: u64) -> u64 {
        let s = a as u128 + b as u128;
        let q = self.0 as u128;
        (if s >= q { s - q } else { s }) as u64
    }

    #[inline]
    pub(crate) fn sub_raw(self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            (a as u128 + self.0 as u128 - b as u128) as u64
        }
    }

    #[inline]
    pub(crate) fn mul_raw(self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.0 as u128) as u64
    }

    /// `acc + a * b mod q`.
    #[inline]
    pub(crate) fn mul_add_raw(self, acc: u64, a: u64, b: u64) -> u64 {
        ((acc as u128 + a as u128 * b as u128) % self.0 as u128) as u64
    }

    pub(crate) fn inv_raw(self, a: u64) -> Option<u64> {
        if a == 0 {
            return None;
        }
        // extended Euclid on (a, q)
        let (mut old_r, mut r) = (a as i128, self.0 as i128);
        let (mut old_s, mut s) = (1i128, 0i128);
        while r != 0 {
            let quot = old_r / r;
            (old_r, r) = (r, old_r - quot * r);
            (old_s, s) = (s, old_s - quot * s);
        }
        debug_assert_eq!(old_r, 1);
        Some(old_s.rem_euclid(self.0 as i128) as u64)
    }

    /// Uniform residue by rejection sampling on the generator's 64-bit words.
    pub fn sample_uniform<R: RngCore + ?Sized>(self, rng: &mut R) -> FieldElement {
        let q = self.0;
        // largest multiple of q that fits in 2^64
        let zone = u64::MAX - (u64::MAX % q + 1) % q;
        loop {
            let w = rng.next_u64();
            if w <= zone {
                return FieldElement {
                    value: w % q,
                    modulus: self,
                };
            }
        }
    }

    /// Draws `count` pairwise distinct elements, none of them in `exclude`.
    ///
    /// Output order is the draw order and is a deterministic function of the
    /// generator state.
    pub fn sample_distinct<R: RngCore + ?Sized>(
        self,
        count: usize,
        exclude: &HashSet<FieldElement>,
        rng: &mut R,
    ) -> Result<Vec<FieldElement>, FieldError> {
        for e in exclude {
            self.check(*e)?;
        }
        let needed = count as u128 + exclude.len() as u128;
        if needed > self.0 as u128 {
            return Err(FieldError::InsufficientFieldSize {
                requested: count,
                excluded: exclude.len(),
                q: self.0,
            });
        }
        // Dense regime: shuffle the admissible residues. Sparse regime: rejection.
        if (self.0 as u128) <= 4 * needed.max(64) {
            let mut pool: Vec<u64> = (0..self.0)
                .filter(|v| {
                    !exclude.contains(&FieldElement {
                        value: *v,
                        modulus: self,
                    })
                })
                .collect();
            for slot in 0..count {
                let remaining = (pool.len() - slot) as u64;
                let pick = slot + uniform_below(rng, remaining) as usize;
                pool.swap(slot, pick);
            }
            pool.truncate(count);
            Ok(pool.into_iter().map(|v| self.element(v)).collect())
        } else {
            let mut seen: HashSet<FieldElement> = exclude.clone();
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let e = self.sample_uniform(rng);
                if seen.insert(e) {
                    out.push(e);
                }
            }
            Ok(out)
        }
    }

    fn check(self, e: FieldElement) -> Result<(), FieldError> {
        if e.modulus == self {
            Ok(())
        } else {
            Err(FieldError::ModulusMismatch(self.0, e.modulus.0))
        }
    }
}

fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
    loop {
        let w = rng.next_u64();
        if w <= zone {
            return w % bound;
        }
    }
}

impl fmt::Display for FieldModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF({})", self.0)
    }
}

impl Serialize for FieldModulus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.0)
    }
}

impl<'de> Deserialize<'de> for FieldModulus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let q = u64::deserialize(d)?;
        FieldModulus::new(q).map_err(serde::de::Error::custom)
    }
}

/// Deterministic Miller-Rabin, exact for all `n < 2^64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mul(acc, b);
            }
            b = mul(b, b);
            e >>= 1;
        }
        acc
    };
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in BASES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A fully reduced residue of GF(q).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u64,
    modulus: FieldModulus,
}

impl FieldElement {
    #[inline]
    pub fn value(self) -> u64 {
        self.value
    }

    #[inline]
    pub fn modulus(self) -> FieldModulus {
        self.modulus
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    fn same_field(self, other: Self) -> Result<FieldModulus, FieldError> {
        if self.modulus == other.modulus {
            Ok(self.modulus)
        } else {
            Err(FieldError::ModulusMismatch(self.modulus.0, other.modulus.0))
        }
    }

    pub fn try_add(self, rhs: Self) -> Result<Self, FieldError> {
        let q = self.same_field(rhs)?;
        Ok(FieldElement {
            value: q.add_raw(self.value, rhs.value),
            modulus: q,
        })
    }

    pub fn try_sub(self, rhs: Self) -> Result<Self, FieldError> {
        let q = self.same_field(rhs)?;
        Ok(FieldElement {
            value: q.sub_raw(self.value, rhs.value),
            modulus: q,
        })
    }

    pub fn try_mul(self, rhs: Self) -> Result<Self, FieldError> {
        let q = self.same_field(rhs)?;
        Ok(FieldElement {
            value: q.mul_raw(self.value, rhs.value),
            modulus: q,
        })
    }

    pub fn try_div(self, rhs: Self) -> Result<Self, FieldError> {
        self.same_field(rhs)?;
        self.try_mul(rhs.inv()?)
    }

    /// Multiplicative inverse.
    pub fn inv(self) -> Result<Self, FieldError> {
        self.modulus
            .inv_raw(self.value)
            .map(|value| FieldElement {
                value,
                modulus: self.modulus,
            })
            .ok_or(FieldError::DivisionByZero(self.modulus.0))
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let q = self.modulus;
        let mut base = self.value;
        let mut acc = 1 % q.0;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = q.mul_raw(acc, base);
            }
            base = q.mul_raw(base, base);
            exp >>= 1;
        }
        FieldElement {
            value: acc,
            modulus: q,
        }
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $assign_trait:ident, $assign:ident, $checked:ident) => {
        impl $trait for FieldElement {
            type Output = FieldElement;
            #[inline]
            fn $method(self, rhs: FieldElement) -> FieldElement {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }
        impl $assign_trait for FieldElement {
            #[inline]
            fn $assign(&mut self, rhs: FieldElement) {
                *self = $trait::$method(*self, rhs);
            }
        }
    };
}

binop!(Add, add, AddAssign, add_assign, try_add);
binop!(Sub, sub, SubAssign, sub_assign, try_sub);
binop!(Mul, mul, MulAssign, mul_assign, try_mul);

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        FieldElement {
            value: self.modulus.sub_raw(0, self.value),
            modulus: self.modulus,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL_PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

    fn gf(q: u64) -> FieldModulus {
        FieldModulus::new(q).unwrap()
    }

    #[test]
    fn add_and_mul_examples() {
        let f = gf(7);
        assert_eq!(f.element(3).try_add(f.element(5)).unwrap(), f.element(1));
        assert_eq!(f.element(3).try_mul(f.element(5)).unwrap(), f.element(1));
        for x in f.elements() {
            assert_eq!(f.zero() + x, x);
            assert_eq!(f.one() * x, x);
            assert_eq!(f.zero() * x, f.zero());
            assert_eq!(x + f.element(7 - x.value()), f.zero());
        }
    }

    #[test]
    fn inverse_examples() {
        let f = gf(7);
        assert_eq!(f.one().inv().unwrap(), f.one());
        // brute-force search for 2^-1 mod 7
        let brute = (0..7).find(|v| (2 * v) % 7 == 1).unwrap();
        assert_eq!(f.element(2).inv().unwrap().value(), brute);
        assert_eq!(brute, 4);
        assert_eq!(f.zero().inv(), Err(FieldError::DivisionByZero(7)));
    }

    #[test]
    fn mismatched_moduli_error() {
        let a = gf(7).element(3);
        let b = gf(11).element(3);
        assert_eq!(a.try_add(b), Err(FieldError::ModulusMismatch(7, 11)));
        assert_eq!(a.try_mul(b), Err(FieldError::ModulusMismatch(7, 11)));
    }

    #[test]
    #[should_panic(expected = "cannot combine")]
    fn mismatched_operator_panics() {
        let _ = gf(7).element(3) + gf(11).element(3);
    }

    #[test]
    fn field_axioms_exhaustive() {
        for q in SMALL_PRIMES {
            let f = gf(q);
            for a in f.elements() {
                if !a.is_zero() {
                    let ai = a.inv().unwrap();
                    assert_eq!(a * ai, f.one());
                    assert_eq!(ai.inv().unwrap(), a);
                }
                assert_eq!(a + (-a), f.zero());
                for b in f.elements() {
                    assert_eq!(a + b, b + a);
                    assert_eq!(a * b, b * a);
                    for c in f.elements() {
                        assert_eq!((a + b) + c, a + (b + c));
                        assert_eq!((a * b) * c, a * (b * c));
                        assert_eq!(a * (b + c), a * b + a * c);
                    }
                }
            }
        }
    }

    #[test]
    fn large_modulus_arithmetic() {
        let big = gf(18_446_744_073_709_551_557); // largest prime below 2^64
        let a = big.element(u64::MAX - 100);
        let ai = a.inv().unwrap();
        assert_eq!(a * ai, big.one());
        assert_eq!((a + a) - a, a);
    }

    #[test]
    fn primality() {
        let small: Vec<u64> = (0..60).filter(|n| is_prime(*n)).collect();
        let sieve: Vec<u64> = (0..60u64)
            .filter(|n| *n >= 2 && (2..*n).all(|d| n % d != 0))
            .collect();
        assert_eq!(small, sieve);
        assert!(is_prime(DEFAULT_MODULUS));
        assert!(!is_prime(DEFAULT_MODULUS + 2));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2,3,5,7
        assert!(FieldModulus::new(1).is_err());
        assert_eq!(FieldModulus::new(12), Err(FieldError::NotPrime(12)));
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let f = gf(7);
        let draw = |seed| {
            let mut rng = SeededRng::seed_from_u64(seed);
            (0..32)
                .map(|_| f.sample_uniform(&mut rng).value())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));

        let two = gf(2);
        let mut rng = SeededRng::seed_from_u64(1);
        assert!((0..1000).all(|_| two.sample_uniform(&mut rng).value() < 2));
    }

    #[test]
    fn uniform_histogram_within_five_sigma() {
        let f = gf(11);
        let draws = 1_000_000u64;
        let mut rng = SeededRng::seed_from_u64(2024);
        let mut bins = [0u64; 11];
        for _ in 0..draws {
            bins[f.sample_uniform(&mut rng).value() as usize] += 1;
        }
        let p = 1.0 / 11.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for b in bins {
            assert!(
                (b as f64 - mean).abs() < 5.0 * sigma,
                "bin {b} vs mean {mean}"
            );
        }
        let chi2: f64 = bins.iter().map(|b| (*b as f64 - mean).powi(2) / mean).sum();
        // 10 degrees of freedom; 0.999 quantile is 29.59
        assert!(chi2 < 29.59, "chi-square {chi2}");
    }

    #[test]
    fn sample_distinct_examples() {
        let f = gf(13);
        let mut rng = SeededRng::seed_from_u64(5);
        let mut all = f.sample_distinct(13, &HashSet::new(), &mut rng).unwrap();
        all.sort();
        assert_eq!(all, f.elements().collect::<Vec<_>>());

        let f5 = gf(5);
        let exclude: HashSet<_> = [f5.zero()].into_iter().collect();
        let got = f5.sample_distinct(3, &exclude, &mut rng).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|e| !e.is_zero()));
        assert_eq!(got.iter().collect::<HashSet<_>>().len(), 3);

        let exclude: HashSet<_> = (0..9).map(|v| f.element(v)).collect(); // size q - 4
        assert!(matches!(
            f.sample_distinct(5, &exclude, &mut rng),
            Err(FieldError::InsufficientFieldSize { .. })
        ));
    }

    #[test]
    fn sample_distinct_many_calls() {
        let mut rng = SeededRng::seed_from_u64(99);
        for call in 0..10_000u64 {
            let f = if call % 2 == 0 {
                gf(13)
            } else {
                gf(DEFAULT_MODULUS)
            };
            let exclude: HashSet<_> = (0..(call % 4)).map(|v| f.element(v * 3)).collect();
            let count = 1 + (call % 9) as usize;
            let out = f.sample_distinct(count, &exclude, &mut rng).unwrap();
            assert_eq!(out.len(), count);
            let set: HashSet<_> = out.iter().copied().collect();
            assert_eq!(set.len(), count);
            assert!(set.is_disjoint(&exclude));
        }
    }

    #[test]
    fn pow_and_signed_reduction() {
        let f = gf(13);
        assert_eq!(f.element(2).pow(12), f.one());
        assert_eq!(f.element(5).pow(0), f.one());
        assert_eq!(f.element_i64(-1), f.element(12));
        assert_eq!(gf(2).element(1).pow(0).value(), 1);
    }
}
