//! Radix-4 fixed-point arithmetic over engine blocks.
//!
//! A value is a vector of blocks, least significant first, each holding two
//! payload bits. Alongside the blocks lives `carry_state`: the worst-case
//! plaintext value of every block, maintained by each operation so that
//! compositions know when a block might exceed lookup capacity and carries
//! must be propagated.

mod div;
mod mul;
mod ops;
mod reduce;

pub use div::{div, div_bounded, div_const};
pub use mul::{execute_mul, execute_mul_many, schedule_mul, MulHints, MulSchedule};
pub use ops::{
    add, add_plain, cmp_ge, cmp_ge_many, drop_high_blocks, drop_low_blocks, max_tree, mul_by_bit,
    mul_by_bit_many, negate, propagate_carries, propagate_carries_many, refresh_many, select,
    select_many, shift_blocks_left, sub, sum_many, zero_extend,
};
pub use reduce::{execute_reduction, execute_reduction_many, plan_reduction, ReducePlan, Term};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cipher::{Level, LweCiphertext};
use crate::engine::BlockEngine;
use crate::error::{Error, Result};
use crate::keys::KeyBundle;
use crate::params::{BLOCK_DELTA_LOG, BLOCK_MAX_VAL, CLEAN_MAX_VAL, RADIX_MESSAGE_BITS};
use crate::torus::decode_plain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signedness {
    Unsigned,
    TwosComplement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub integer_bits: u32,
    pub fractional_bits: u32,
    pub signedness: Signedness,
}

/// Softmax and GELU operate on signed (12, 20) values.
pub const FMT_SOFTMAX: FixedPointFormat = FixedPointFormat::signed(12, 20);
/// LayerNorm inputs are signed (14, 20).
pub const FMT_LAYERNORM: FixedPointFormat = FixedPointFormat::signed(14, 20);
/// The variance accumulator feeding InvSqrt is unsigned (12, 40).
pub const FMT_VARIANCE: FixedPointFormat = FixedPointFormat::unsigned(12, 40);

impl FixedPointFormat {
    pub const fn new(integer_bits: u32, fractional_bits: u32, signedness: Signedness) -> Self {
        Self { integer_bits, fractional_bits, signedness }
    }

    pub const fn unsigned(integer_bits: u32, fractional_bits: u32) -> Self {
        Self::new(integer_bits, fractional_bits, Signedness::Unsigned)
    }

    pub const fn signed(integer_bits: u32, fractional_bits: u32) -> Self {
        Self::new(integer_bits, fractional_bits, Signedness::TwosComplement)
    }

    pub const fn total_bits(&self) -> u32 {
        self.integer_bits + self.fractional_bits
    }

    pub const fn block_count(&self) -> usize {
        (self.total_bits() / RADIX_MESSAGE_BITS) as usize
    }

    pub const fn is_signed(&self) -> bool {
        matches!(self.signedness, Signedness::TwosComplement)
    }

    pub fn check(&self) -> Result<()> {
        if self.total_bits() == 0 || self.total_bits() % RADIX_MESSAGE_BITS != 0 {
            return Err(Error::config(format!(
                "total width {} is not a positive multiple of {}",
                self.total_bits(),
                RADIX_MESSAGE_BITS
            )));
        }
        if self.total_bits() > 120 {
            return Err(Error::config("fixed-point width above 120 bits"));
        }
        Ok(())
    }

    /// Raw two's-complement range as half-open `[lo, hi)` in LSB units.
    fn raw_range(&self) -> (i128, i128) {
        let t = self.total_bits();
        match self.signedness {
            Signedness::Unsigned => (0, 1i128 << t),
            Signedness::TwosComplement => (-(1i128 << (t - 1)), 1i128 << (t - 1)),
        }
    }
}

/// Round-to-nearest encoding of a real into raw LSB units, range-checked.
pub fn encode_raw(value: f64, fmt: &FixedPointFormat) -> Result<i128> {
    fmt.check()?;
    if !value.is_finite() {
        return Err(Error::range("cannot encode a non-finite value"));
    }
    let scaled = value * (fmt.fractional_bits as f64).exp2();
    let raw = scaled.round() as i128;
    let (lo, hi) = fmt.raw_range();
    if raw < lo || raw >= hi {
        return Err(Error::range(format!("{value} overflows ({}, {})", fmt.integer_bits, fmt.fractional_bits)));
    }
    Ok(raw)
}

/// Clean block values, least significant first, of a raw integer reduced
/// modulo the format width.
pub fn raw_to_blocks(raw: i128, fmt: &FixedPointFormat) -> Vec<u8> {
    let t = fmt.total_bits();
    let u = (raw as u128) & (((1u128 << (t - 1)) << 1) - 1);
    (0..fmt.block_count()).map(|i| ((u >> (2 * i)) & 3) as u8).collect()
}

pub fn blocks_to_raw(blocks: &[u8], fmt: &FixedPointFormat) -> i128 {
    let mut u: u128 = 0;
    for (i, &b) in blocks.iter().enumerate() {
        u |= u128::from(b & 3) << (2 * i);
    }
    let t = fmt.total_bits();
    if fmt.is_signed() && (u >> (t - 1)) & 1 == 1 {
        (u as i128) - (1i128 << t)
    } else {
        u as i128
    }
}

pub fn encode(value: f64, fmt: &FixedPointFormat) -> Result<Vec<u8>> {
    Ok(raw_to_blocks(encode_raw(value, fmt)?, fmt))
}

pub fn decode(blocks: &[u8], fmt: &FixedPointFormat) -> f64 {
    blocks_to_raw(blocks, fmt) as f64 * (-(fmt.fractional_bits as f64)).exp2()
}

/// A fixed-point number over any engine's blocks.
#[derive(Clone)]
pub struct FixedPoint<B> {
    pub format: FixedPointFormat,
    /// Least significant block first.
    pub blocks: Vec<B>,
    /// Worst-case plaintext value of each block.
    pub carry_state: Vec<u8>,
}

/// The encrypted instantiation.
pub type FixedPointCiphertext = FixedPoint<LweCiphertext>;

impl<B: Clone + Send + Sync> FixedPoint<B> {
    pub fn from_parts(format: FixedPointFormat, blocks: Vec<B>, carry_state: Vec<u8>) -> Self {
        debug_assert_eq!(blocks.len(), format.block_count());
        debug_assert_eq!(blocks.len(), carry_state.len());
        debug_assert!(carry_state.iter().all(|&c| c <= BLOCK_MAX_VAL));
        Self { format, blocks, carry_state }
    }

    /// Trivial (unencrypted-content) value usable with any engine.
    pub fn from_plain<E>(engine: &E, raw: i128, fmt: FixedPointFormat) -> Self
    where
        E: BlockEngine<Block = B>,
    {
        let vals = raw_to_blocks(raw, &fmt);
        let blocks = vals.iter().map(|&v| engine.trivial_block(u64::from(v))).collect();
        Self { format: fmt, blocks, carry_state: vals }
    }

    pub fn zero<E>(engine: &E, fmt: FixedPointFormat) -> Self
    where
        E: BlockEngine<Block = B>,
    {
        Self::from_plain(engine, 0, fmt)
    }

    pub fn is_clean(&self) -> bool {
        self.carry_state.iter().all(|&c| c <= CLEAN_MAX_VAL)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub(crate) fn require_clean(&self, what: &str) -> Result<()> {
        if self.is_clean() {
            Ok(())
        } else {
            Err(Error::range(format!("{what} requires propagated operands")))
        }
    }

    pub(crate) fn require_same_format(&self, other: &Self) -> Result<()> {
        if self.format == other.format {
            Ok(())
        } else {
            Err(Error::FormatMismatch(format!(
                "({},{}) vs ({},{})",
                self.format.integer_bits,
                self.format.fractional_bits,
                other.format.integer_bits,
                other.format.fractional_bits
            )))
        }
    }
}

impl FixedPointCiphertext {
    pub fn encrypt<R: Rng>(
        bundle: &KeyBundle,
        value: f64,
        fmt: FixedPointFormat,
        rng: &mut R,
    ) -> Result<Self> {
        let vals = encode(value, &fmt)?;
        Ok(Self::encrypt_blocks(bundle, &vals, fmt, rng))
    }

    pub fn encrypt_blocks<R: Rng>(
        bundle: &KeyBundle,
        vals: &[u8],
        fmt: FixedPointFormat,
        rng: &mut R,
    ) -> Self {
        let blocks = vals
            .iter()
            .map(|&v| bundle.encrypt_lwe(u64::from(v) << BLOCK_DELTA_LOG, Level::L1, rng))
            .collect();
        // Worst-case bounds, not the actual values: carry state is public
        // metadata and steers scheduling.
        Self { format: fmt, blocks, carry_state: vec![CLEAN_MAX_VAL; vals.len()] }
    }

    pub fn decrypt_blocks(&self, bundle: &KeyBundle) -> Vec<u8> {
        self.blocks
            .iter()
            .map(|ct| (decode_plain(bundle.decrypt_lwe(ct), 5) & 0xF) as u8)
            .collect()
    }

    pub fn decrypt_raw(&self, bundle: &KeyBundle) -> i128 {
        let vals = self.decrypt_blocks(bundle);
        debug_assert!(vals.iter().all(|&v| v <= CLEAN_MAX_VAL), "decrypting unpropagated blocks");
        blocks_to_raw(&vals, &self.format)
    }

    pub fn decrypt(&self, bundle: &KeyBundle) -> f64 {
        self.decrypt_raw(bundle) as f64 * (-(self.format.fractional_bits as f64)).exp2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_places_one_at_fraction_width() {
        let fmt = FixedPointFormat::unsigned(12, 20);
        assert_eq!(fmt.block_count(), 16);
        let blocks = encode(1.0, &fmt).unwrap();
        assert_eq!(blocks[10], 1);
        assert!(blocks.iter().enumerate().all(|(i, &b)| i == 10 || b == 0));
        assert_eq!(encode(0.0, &fmt).unwrap(), vec![0u8; 16]);
    }

    #[test]
    fn encode_decode_roundtrip_error_bound() {
        let fmt = FMT_SOFTMAX;
        let mut worst: f64 = 0.0;
        for k in 0..10_000 {
            // Low-discrepancy sweep over the signed range.
            let x = (k as f64 * 0.6180339887498949).fract() * 4000.0 - 2000.0;
            let back = decode(&encode(x, &fmt).unwrap(), &fmt);
            worst = worst.max((back - x).abs());
        }
        assert!(worst <= (-21.0f64).exp2(), "worst {worst}");
    }

    #[test]
    fn encode_rejects_overflow_and_nan() {
        let fmt = FixedPointFormat::unsigned(12, 20);
        assert!(encode(4096.0, &fmt).is_err());
        assert!(encode(-0.5, &fmt).is_err());
        assert!(encode(f64::NAN, &fmt).is_err());
        assert!(encode(4095.9, &fmt).is_ok());
        let s = FMT_SOFTMAX;
        assert!(encode(-2048.0, &s).is_ok());
        assert!(encode(2048.0, &s).is_err());
    }

    #[test]
    fn signed_raw_roundtrip() {
        let fmt = FixedPointFormat::signed(4, 4);
        for raw in -128i128..128 {
            let blocks = raw_to_blocks(raw, &fmt);
            assert_eq!(blocks_to_raw(&blocks, &fmt), raw);
        }
        let wide = FMT_VARIANCE;
        let raw = (1i128 << 51) + 12345;
        assert_eq!(blocks_to_raw(&raw_to_blocks(raw, &wide), &wide), raw);
    }

    #[test]
    fn format_validation() {
        assert!(FixedPointFormat::unsigned(3, 20).check().is_err());
        assert!(FixedPointFormat::unsigned(0, 0).check().is_err());
        assert!(FMT_LAYERNORM.check().is_ok());
        assert_eq!(FMT_LAYERNORM.block_count(), 17);
        assert_eq!(FMT_VARIANCE.block_count(), 26);
    }
}
