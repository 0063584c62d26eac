//! Seeded hash families over a prime field.
//!
//! Every random quantity a sketch uses (bucket choices, Rademacher signs,
//! the uniform variates behind the precision weights) is a pure function of
//! a 64-bit master seed and the index being hashed. Two processes holding the
//! same master seed therefore build bit-identical sketches, which is what
//! makes sketches mergeable across machines.
//!
//! # Seed expansion
//!
//! A [`SeedTree`] expands the master seed with a counter-based scheme built
//! on the SplitMix64 finalizer [`mix64`]:
//!
//! ```text
//! child(role, index) = mix64(mix64(master ^ (role_tag * 0x9E3779B97F4A7C15)) ^ index)
//! ```
//!
//! Role tags are fixed (see [`SeedRole::tag`]). A child seed `s` becomes an
//! [`AffineSeed`] through `a = 1 + mix64(s ^ 1) mod (P - 1)` and
//! `b = mix64(s ^ 2) mod P`, and a degree-(κ-1) [`PolySeed`] through
//! `c_d = mix64(s ^ (d + 1)) mod P` for `d` in `0..κ`.

use crate::error::{invalid, Result};

/// The Mersenne prime 2^61 - 1, the field used on every production path.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose of a derived seed. Distinct roles never share seed material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedRole {
    /// Bucket hash `h_j` of table `j`.
    Bucket,
    /// Rademacher sign `g_j` of table `j`.
    Sign,
    /// Uniform column `j` feeding the precision weights.
    WeightColumn,
    /// Sign family of one AMS counter.
    AmsSign,
    /// Master seed of the inner sketch of a cascaded sketch.
    Inner,
    /// Master seed of an independent replica.
    Replica,
}

impl SeedRole {
    pub const fn tag(self) -> u64 {
        match self {
            SeedRole::Bucket => 1,
            SeedRole::Sign => 2,
            SeedRole::WeightColumn => 3,
            SeedRole::AmsSign => 4,
            SeedRole::Inner => 5,
            SeedRole::Replica => 6,
        }
    }
}

/// Counter-based expansion of one master seed into per-role seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn child(&self, role: SeedRole, index: u64) -> u64 {
        mix64(mix64(self.master ^ role.tag().wrapping_mul(GOLDEN_GAMMA)) ^ index)
    }

    pub fn affine(&self, role: SeedRole, index: u64) -> AffineSeed {
        AffineSeed::from_u64(self.child(role, index))
    }

    pub fn poly(&self, role: SeedRole, index: u64, kappa: usize) -> PolySeed {
        PolySeed::from_u64(self.child(role, index), kappa)
    }
}

#[inline]
fn reduce_mersenne(v: u128) -> u64 {
    let lo = (v as u64) & MERSENNE_61;
    let hi = (v >> 61) as u64;
    let mut s = lo + hi;
    s = (s & MERSENNE_61) + (s >> 61);
    if s >= MERSENNE_61 {
        s -= MERSENNE_61;
    }
    s
}

/// `(a * x + b) mod p` with `a, b < p`.
#[inline]
fn mul_add_mod(a: u64, x: u64, b: u64, p: u64) -> u64 {
    if p == MERSENNE_61 {
        let x = if x >= MERSENNE_61 { x - MERSENNE_61 } else { x };
        reduce_mersenne(a as u128 * x as u128 + b as u128)
    } else {
        ((a as u128 * (x % p) as u128 + b as u128) % p as u128) as u64
    }
}

#[inline]
fn bucket_of(raw: u64, m: u64) -> u64 {
    debug_assert!(m >= 1);
    raw % m
}

#[inline]
fn sign_of(raw: u64) -> f64 {
    if raw & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Maps a raw field element to `(raw + 1) / p`, a value in `(0, 1]`.
#[inline]
pub fn uniform_from_raw(raw: u64, p: u64) -> f64 {
    (raw + 1) as f64 / p as f64
}

/// Seed of the pairwise-independent family `i -> (a*i + b) mod P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineSeed {
    a: u64,
    b: u64,
    p: u64,
}

impl AffineSeed {
    /// Builds a seed over an arbitrary prime. The primality of `p` is the
    /// caller's responsibility; small primes are meant for exhaustive tests.
    pub fn new(a: u64, b: u64, p: u64) -> Result<Self> {
        if p < 2 {
            return invalid(format!("modulus {p} is not a prime"));
        }
        if a == 0 || a >= p {
            return invalid(format!("multiplier a={a} must satisfy 1 <= a < {p}"));
        }
        if b >= p {
            return invalid(format!("offset b={b} must satisfy 0 <= b < {p}"));
        }
        Ok(AffineSeed { a, b, p })
    }

    /// Expands a 64-bit seed into a seed over `P = 2^61 - 1`.
    pub fn from_u64(seed: u64) -> Self {
        let a = 1 + mix64(seed ^ 1) % (MERSENNE_61 - 1);
        let b = mix64(seed ^ 2) % MERSENNE_61;
        AffineSeed {
            a,
            b,
            p: MERSENNE_61,
        }
    }

    pub fn a(&self) -> u64 {
        self.a
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    #[inline]
    pub fn raw(&self, i: u64) -> u64 {
        mul_add_mod(self.a, i, self.b, self.p)
    }

    /// Bucket in `[0, m)`.
    #[inline]
    pub fn bucket(&self, i: u64, m: u64) -> u64 {
        bucket_of(self.raw(i), m)
    }

    /// Rademacher sign as `+1.0` / `-1.0`.
    #[inline]
    pub fn sign(&self, i: u64) -> f64 {
        sign_of(self.raw(i))
    }

    /// Uniform variate in `(0, 1]`; never zero, so `1/u` is finite.
    #[inline]
    pub fn uniform01(&self, i: u64) -> f64 {
        uniform_from_raw(self.raw(i), self.p)
    }

    /// Raw values for the consecutive indices `0..len`, computed by repeated
    /// addition of `a`. Bit-identical to calling [`AffineSeed::raw`] per index.
    pub fn raw_sweep(&self) -> RawSweep {
        RawSweep {
            next: self.b,
            step: self.a,
            p: self.p,
        }
    }
}

/// Iterator over `(a*i + b) mod p` for `i = 0, 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct RawSweep {
    next: u64,
    step: u64,
    p: u64,
}

impl Iterator for RawSweep {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        let out = self.next;
        let mut v = out + self.step;
        if v >= self.p {
            v -= self.p;
        }
        self.next = v;
        Some(out)
    }
}

/// Seed of a κ-wise independent family: a polynomial of degree κ-1 over `P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolySeed {
    /// `coeffs[d]` multiplies `i^d`.
    coeffs: Vec<u64>,
    p: u64,
}

impl PolySeed {
    pub fn new(coeffs: Vec<u64>, p: u64) -> Result<Self> {
        if coeffs.len() < 2 {
            return invalid("independence degree must be at least 2");
        }
        if p < 2 {
            return invalid(format!("modulus {p} is not a prime"));
        }
        if let Some(c) = coeffs.iter().find(|&&c| c >= p) {
            return invalid(format!("coefficient {c} is not reduced mod {p}"));
        }
        Ok(PolySeed { coeffs, p })
    }

    pub fn from_u64(seed: u64, kappa: usize) -> Self {
        let kappa = kappa.max(2);
        let coeffs = (0..kappa as u64)
            .map(|d| mix64(seed ^ (d + 1)) % MERSENNE_61)
            .collect();
        PolySeed {
            coeffs,
            p: MERSENNE_61,
        }
    }

    /// The degree-1 polynomial `a*i + b`, equal in value to the affine seed.
    pub fn from_affine(seed: &AffineSeed) -> Self {
        PolySeed {
            coeffs: vec![seed.b, seed.a],
            p: seed.p,
        }
    }

    pub fn kappa(&self) -> usize {
        self.coeffs.len()
    }

    pub fn raw(&self, i: u64) -> u64 {
        // Horner from the leading coefficient down.
        let mut acc = 0u64;
        for &c in self.coeffs.iter().rev() {
            acc = mul_add_mod(acc, i, c, self.p);
        }
        acc
    }

    pub fn bucket(&self, i: u64, m: u64) -> u64 {
        bucket_of(self.raw(i), m)
    }

    pub fn sign(&self, i: u64) -> f64 {
        sign_of(self.raw(i))
    }
}

/// A bucket/sign hash that is either pairwise (affine) or κ-wise (polynomial).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexHash {
    Affine(AffineSeed),
    Poly(PolySeed),
}

impl IndexHash {
    /// Affine when `kappa <= 2`, polynomial otherwise.
    pub fn derive(tree: &SeedTree, role: SeedRole, index: u64, kappa: usize) -> Self {
        if kappa <= 2 {
            IndexHash::Affine(tree.affine(role, index))
        } else {
            IndexHash::Poly(tree.poly(role, index, kappa))
        }
    }

    #[inline]
    pub fn bucket(&self, i: u64, m: u64) -> u64 {
        match self {
            IndexHash::Affine(s) => s.bucket(i, m),
            IndexHash::Poly(s) => s.bucket(i, m),
        }
    }

    #[inline]
    pub fn sign(&self, i: u64) -> f64 {
        match self {
            IndexHash::Affine(s) => s.sign(i),
            IndexHash::Poly(s) => s.sign(i),
        }
    }
}
