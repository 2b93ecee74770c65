//! Exact, order-independent summation of f64 values and f64 products.
//!
//! Values are held as a fixed-point integer spanning the whole f64 range,
//! split into 32-bit digits stored in i64 limbs. Adding a product of two
//! doubles is exact because the 106-bit mantissa product is computed in
//! u128. The normalized digits are a canonical form, so two sums compare
//! equal exactly when they hold the same real number, whatever order the
//! terms arrived in.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Digit index of the least significant limb. Products of subnormals reach
/// down to 2^-2148.
const LO: i32 = -68;
/// Enough limbs for products up to 2^2048 plus 2^64 of carry headroom.
const N_LIMBS: usize = 140;
/// Normalize before any limb could approach overflow.
const NORMALIZE_EVERY: u32 = 1 << 24;

#[derive(Clone)]
pub struct ExactSum {
    limbs: Vec<i64>,
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum {
            limbs: vec![0; N_LIMBS],
            pending: 0,
        }
    }
}

/// Splits a finite double into (mantissa, exponent, negative).
fn decompose(x: f64) -> (u64, i32, bool) {
    assert!(
        x.is_finite(),
        "ExactSum only accepts finite values, got {x}"
    );
    let bits = x.to_bits();
    let neg = bits >> 63 == 1;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074, neg)
    } else {
        (frac | (1u64 << 52), exp - 1075, neg)
    }
}

/// `x * 2^e` in steps that stay within the normal exponent range.
fn ldexp(mut x: f64, mut e: i32) -> f64 {
    let pow2 = |k: i32| f64::from_bits(((k + 1023) as u64) << 52);
    while e > 1000 {
        x *= pow2(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= pow2(-1000);
        e += 1000;
    }
    x * pow2(e)
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let (m, e, neg) = decompose(x);
        self.add_scaled(m as u128, e, neg);
    }

    /// Adds `a * b` without rounding.
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (ma, ea, na) = decompose(a);
        let (mb, eb, nb) = decompose(b);
        self.add_scaled(ma as u128 * mb as u128, ea + eb, na != nb);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for (l, o) in self.limbs.iter_mut().zip(&other.limbs) {
            *l += o;
        }
        self.normalize();
    }

    fn add_scaled(&mut self, m: u128, e: i32, neg: bool) {
        if m == 0 {
            return;
        }
        let k0 = (e.div_euclid(32) - LO) as usize;
        let r = e.rem_euclid(32) as u32;
        let mut rest = m;
        let mut j = 0;
        while rest != 0 {
            let digit = (rest & 0xffff_ffff) as u64;
            rest >>= 32;
            if digit != 0 {
                let shifted = digit << r;
                let lo = (shifted & 0xffff_ffff) as i64;
                let hi = (shifted >> 32) as i64;
                let sign = if neg { -1 } else { 1 };
                self.limbs[k0 + j] += sign * lo;
                self.limbs[k0 + j + 1] += sign * hi;
            }
            j += 1;
        }
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            self.normalize();
        }
    }

    /// Carries so every limb but the top lies in [0, 2^32).
    fn normalize(&mut self) {
        let mut carry = 0i64;
        let top = N_LIMBS - 1;
        for l in &mut self.limbs[..top] {
            let v = *l + carry;
            *l = v.rem_euclid(1 << 32);
            carry = v.div_euclid(1 << 32);
        }
        self.limbs[top] += carry;
        self.pending = 0;
    }

    fn normalized(&self) -> ExactSum {
        let mut c = self.clone();
        if c.pending > 0 {
            c.normalize();
        }
        c
    }

    fn is_negative(&self) -> bool {
        self.limbs[N_LIMBS - 1] < 0
    }

    pub fn is_zero(&self) -> bool {
        self.normalized().limbs.iter().all(|&l| l == 0)
    }

    /// Converts by summing digits of the magnitude from the top down.
    pub fn to_f64(&self) -> f64 {
        let mut c = self.normalized();
        let neg = c.is_negative();
        if neg {
            for l in &mut c.limbs {
                *l = -*l;
            }
            c.normalize();
        }
        let mut acc = 0.0f64;
        for (i, &l) in c.limbs.iter().enumerate().rev() {
            if l != 0 {
                acc += ldexp(l as f64, 32 * (i as i32 + LO));
            }
        }
        if neg {
            -acc
        } else {
            acc
        }
    }

    fn sparse(&self) -> Vec<(i32, i64)> {
        self.normalized()
            .limbs
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, &l)| (i as i32 + LO, l))
            .collect()
    }
}

impl PartialEq for ExactSum {
    fn eq(&self, other: &Self) -> bool {
        self.normalized().limbs == other.normalized().limbs
    }
}

impl Eq for ExactSum {}

impl fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactSum({})", self.to_f64())
    }
}

impl Serialize for ExactSum {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.sparse().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExactSum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let digits: Vec<(i32, i64)> = Vec::deserialize(d)?;
        // only the canonical form is accepted, which keeps later carries
        // far from overflow
        let mut sum = ExactSum::new();
        let mut seen = [false; N_LIMBS];
        for (k, l) in digits {
            let idx = k
                .checked_sub(LO)
                .filter(|i| (0..N_LIMBS as i32).contains(i));
            let Some(idx) = idx.map(|i| i as usize) else {
                return Err(D::Error::custom(format!("digit index {k} out of range")));
            };
            let in_range = if idx == N_LIMBS - 1 {
                l.unsigned_abs() < 1 << 32
            } else {
                (0..1 << 32).contains(&l)
            };
            if !in_range || seen[idx] {
                return Err(D::Error::custom(format!("digit {k} is not canonical")));
            }
            seen[idx] = true;
            sum.limbs[idx] = l;
        }
        Ok(sum)
    }
}
