//! Unbiased random compressors, their variance factors and bit costs.
//!
//! Each operator `C` satisfies `E[C(v)] = v` and
//! `E||C(v) − v||² ≤ ω ||v||²`. Bit costs follow fixed closed-form
//! conventions per kind rather than a real encoder, so counters are exact
//! integers:
//!
//! | kind            | bits per message                                  |
//! |-----------------|---------------------------------------------------|
//! | identity        | `32·d`                                            |
//! | quantize, s = 1 | `⌈32·√d·log₂ d⌉`                                  |
//! | quantize, s > 1 | `⌈32 + d·(log₂ s + 1)⌉ + ⌈√d·log₂ d⌉`             |
//! | sparsify        | `⌈p·d⌉·(32 + ⌈log₂ d⌉)`                           |
//!
//! A zero message costs its header only: the 32-bit norm for quantization,
//! nothing for sparsification, and the full `32·d` for identity. Quantized
//! messages never cost less than their header.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::{Error, ParamVector, Result};

const FLOAT_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitCost(pub u64);

impl Add for BitCost {
    type Output = BitCost;

    fn add(self, rhs: BitCost) -> BitCost {
        BitCost(self.0 + rhs.0)
    }
}

impl AddAssign for BitCost {
    fn add_assign(&mut self, rhs: BitCost) {
        self.0 += rhs.0;
    }
}

impl Sum for BitCost {
    fn sum<I: Iterator<Item = BitCost>>(iter: I) -> Self {
        BitCost(iter.map(|b| b.0).sum())
    }
}

impl fmt::Display for BitCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bits", self.0)
    }
}

/// Operator family, as written in run configs:
/// `{ kind = "quantize", s = 1 }`, `{ kind = "sparsify", p = 0.1 }`,
/// `{ kind = "identity" }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CompressorKind {
    Identity,
    Quantize { s: u32 },
    Sparsify { p: f64 },
}

impl CompressorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressorKind::Identity => Ok(()),
            CompressorKind::Quantize { s } if s >= 1 => Ok(()),
            CompressorKind::Quantize { .. } => Err(Error::config("s", "quantization needs s ≥ 1")),
            CompressorKind::Sparsify { p } if p > 0.0 && p <= 1.0 => Ok(()),
            CompressorKind::Sparsify { p } => Err(Error::config("p", format!("{p} is not in (0, 1]"))),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CompressorKind::Identity)
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorKind::Identity => write!(f, "identity"),
            CompressorKind::Quantize { s } => write!(f, "quantize(s={s})"),
            CompressorKind::Sparsify { p } => write!(f, "sparsify(p={p})"),
        }
    }
}

/// A compressor bound to a dimension, with its variance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub d: usize,
    pub omega: f64,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, d: usize) -> Result<Self> {
        kind.validate()?;
        if d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        Ok(Self { kind, d, omega: omega(kind, d) })
    }

    pub fn identity(d: usize) -> Self {
        Self { kind: CompressorKind::Identity, d, omega: 0.0 }
    }

    pub fn quantize(s: u32, d: usize) -> Result<Self> {
        Self::new(CompressorKind::Quantize { s }, d)
    }

    pub fn sparsify(p: f64, d: usize) -> Result<Self> {
        Self::new(CompressorKind::Sparsify { p }, d)
    }

    pub fn is_identity(&self) -> bool {
        self.kind.is_identity()
    }

    /// Cost of a non-zero message.
    pub fn bit_cost(&self) -> BitCost {
        bit_cost(self.kind, self.d)
    }

    /// Cost of an all-zero message.
    pub fn zero_cost(&self) -> BitCost {
        match self.kind {
            CompressorKind::Identity => BitCost(FLOAT_BITS * self.d as u64),
            CompressorKind::Quantize { .. } => BitCost(FLOAT_BITS),
            CompressorKind::Sparsify { .. } => BitCost(0),
        }
    }

    /// Compresses `v`. Identity consumes no randomness.
    pub fn compress(&self, v: &ParamVector, rng: &mut Stream) -> (ParamVector, BitCost) {
        debug_assert_eq!(v.dim(), self.d);
        if v.is_zero() {
            return (ParamVector::zeros(v.dim()), self.zero_cost());
        }
        let out = match self.kind {
            CompressorKind::Identity => v.clone(),
            CompressorKind::Quantize { s } => quantize_s(v, s, rng),
            CompressorKind::Sparsify { p } => sparsify_p(v, p, rng),
        };
        (out, self.bit_cost())
    }
}

/// Any unbiased operator the moment checks can certify.
pub trait Compressor {
    fn omega(&self) -> f64;
    fn apply(&self, v: &ParamVector, rng: &mut Stream) -> ParamVector;
}

impl Compressor for CompressorSpec {
    fn omega(&self) -> f64 {
        self.omega
    }

    fn apply(&self, v: &ParamVector, rng: &mut Stream) -> ParamVector {
        self.compress(v, rng).0
    }
}

/// Variance factor of `kind` in dimension `d`.
pub fn omega(kind: CompressorKind, d: usize) -> f64 {
    match kind {
        CompressorKind::Identity => 0.0,
        CompressorKind::Quantize { s } => {
            let (d, s) = (d as f64, s as f64);
            (d / (s * s)).min(d.sqrt() / s)
        }
        CompressorKind::Sparsify { p } => 1.0 / p - 1.0,
    }
}

pub fn bit_cost(kind: CompressorKind, d: usize) -> BitCost {
    let df = d as f64;
    let bits = match kind {
        CompressorKind::Identity => FLOAT_BITS * d as u64,
        CompressorKind::Quantize { s: 1 } => (32.0 * df.sqrt() * df.log2()).ceil() as u64,
        CompressorKind::Quantize { s } => {
            let body = (32.0 + df * ((s as f64).log2() + 1.0)).ceil() as u64;
            body + (df.sqrt() * df.log2()).ceil() as u64
        }
        CompressorKind::Sparsify { p } => {
            let kept = (p * df).ceil() as u64;
            kept * (FLOAT_BITS + df.log2().ceil() as u64)
        }
    };
    match kind {
        CompressorKind::Quantize { .. } => BitCost(bits.max(FLOAT_BITS)),
        _ => BitCost(bits),
    }
}

/// Stochastic `s`-level quantization with respect to the 2-norm.
///
/// Coordinate `i` becomes `||v||·sign(v_i)·ξ_i`, where `ξ_i` rounds
/// `|v_i|/||v||` to one of its two neighbouring levels `l/s` so that the
/// expectation is exact. Coordinates already on a level draw nothing.
pub fn quantize_s(v: &ParamVector, s: u32, rng: &mut Stream) -> ParamVector {
    let norm = v.norm();
    if norm == 0.0 {
        return ParamVector::zeros(v.dim());
    }
    let sf = s as f64;
    let out = v
        .iter()
        .map(|&x| {
            let level = sf * x.abs() / norm;
            let lower = level.floor();
            let frac = level - lower;
            let q = if frac == 0.0 {
                lower
            } else if rng.random::<f64>() < frac {
                lower + 1.0
            } else {
                lower
            };
            norm * x.signum() * q / sf
        })
        .collect();
    ParamVector::from_vec_unchecked(out)
}

/// Keeps each coordinate independently with probability `p`, scaled by
/// `1/p`.
pub fn sparsify_p(v: &ParamVector, p: f64, rng: &mut Stream) -> ParamVector {
    if p >= 1.0 {
        return v.clone();
    }
    let out = v.iter().map(|&x| if rng.random::<f64>() < p { x / p } else { 0.0 }).collect();
    ParamVector::from_vec_unchecked(out)
}

/// `α = 1/(2(1+ω))` on each side.
pub fn default_alpha(spec: &CompressorSpec) -> f64 {
    1.0 / (2.0 * (1.0 + spec.omega))
}

pub fn default_alphas(up: &CompressorSpec, dwn: &CompressorSpec) -> (f64, f64) {
    (default_alpha(up), default_alpha(dwn))
}
