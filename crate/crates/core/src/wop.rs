//! Lookup evaluation beyond the padded-PBS precision limit: bit
//! extraction, circuit bootstrapping, and vertical packing.
//!
//! The pipeline turns radix blocks into GGSW-encrypted selector bits (one
//! multi-output bootstrap per block, one level-2 bootstrap plus two private
//! functional key switches per bit), then folds each output table around
//! the selectors: a CMux tree over the high input bits picks a polynomial,
//! conditional monomial rotations over the low bits pick a coefficient.

use rayon::prelude::*;

use crate::boot::{
    cmux, external_product, fourier_ggsw, pbs_many_lut, private_functional_keyswitch, EvalKeys,
    FourierGgsw, TestPolynomial,
};
use crate::cipher::{GgswCiphertext, GlweCiphertext, Level, LweCiphertext};
use crate::error::{Error, Result};
use crate::params::{BLOCK_DELTA_LOG, MAX_LOOKUP_BITS};
use crate::torus::TorusWord;

/// Widest value a single ciphertext can feed through [`extract_bits`].
/// Shifting bit i to the top multiplies the running noise by 2^(width-1-i),
/// so wider values must arrive as radix blocks instead.
pub const MAX_EXTRACT_BITS: u32 = 8;

/// Plaintext lookup table for [`wop_pbs`]: one torus-word column per output
/// entry, indexed by the full input value.
#[derive(Clone, Debug)]
pub struct LookupTable {
    pub input_bits: usize,
    pub output_entries: Vec<Vec<TorusWord>>,
}

impl LookupTable {
    pub fn new(input_bits: usize, output_entries: Vec<Vec<TorusWord>>) -> Result<Self> {
        if input_bits == 0 || input_bits > MAX_LOOKUP_BITS {
            return Err(Error::config(format!(
                "lookup input width {input_bits} outside 1..={MAX_LOOKUP_BITS}"
            )));
        }
        let len = 1usize << input_bits;
        for (i, e) in output_entries.iter().enumerate() {
            if e.len() != len {
                return Err(Error::config(format!(
                    "output entry {i} has {} values, expected {len}",
                    e.len()
                )));
            }
        }
        Ok(Self { input_bits, output_entries })
    }

    /// Builds block-valued entries: entry b holds bits 2b..2b+2 of f(x) at
    /// the radix block scale.
    pub fn from_fn(input_bits: usize, out_blocks: usize, f: impl Fn(u64) -> u64) -> Result<Self> {
        let len = 1usize << input_bits;
        let values: Vec<u64> = (0..len as u64).map(f).collect();
        let entries = (0..out_blocks)
            .map(|b| {
                values.iter().map(|v| ((v >> (2 * b)) & 3) << BLOCK_DELTA_LOG).collect()
            })
            .collect();
        Self::new(input_bits, entries)
    }
}

/// Bits of a value, most significant first, each at the top-bit scale.
#[derive(Clone, Debug)]
pub struct ExtractedBits {
    pub width: u32,
    pub bits: Vec<LweCiphertext>,
}

/// Splits a top-aligned `width`-bit value (phase v * 2^(64-width)) into
/// individual bit ciphertexts. Bits are computed least significant first –
/// shift to the top bit, quarter-torus offset, sign lookup – and each
/// extracted bit is subtracted at its source scale before the next round,
/// so the junk below the target bit is always exactly zero.
pub fn extract_bits(ct: &LweCiphertext, width: u32, keys: &EvalKeys) -> Result<ExtractedBits> {
    if width == 0 || width > MAX_EXTRACT_BITS {
        return Err(Error::range(format!("extract width {width} outside 1..={MAX_EXTRACT_BITS}")));
    }
    if ct.level != Level::L1 {
        return Err(Error::LevelMismatch { expected: "L1", actual: ct.level.as_str() });
    }
    let degree = keys.bundle.params.level1_poly_degree;
    let mut rem = ct.clone();
    let mut bits_lsb = Vec::with_capacity(width as usize);
    for i in 0..width {
        let mut top = rem.clone();
        top.scalar_mul(1u64 << (width - 1 - i));
        top.add_word(1 << 62);
        // Two sign tables per rotation: the bit at the top scale (the
        // result) and at its source scale (for peeling it off `rem`).
        let src_log = 64 - width + i;
        let consts = [1u64 << 62, 1u64 << (src_log - 1)];
        let tp = TestPolynomial::sign_many(degree, &consts);
        let outs = pbs_many_lut(&top, &tp, keys, Level::L1, 2);
        let mut bit_top = outs[0].clone();
        bit_top.add_word(consts[0]);
        if i + 1 < width {
            let mut bit_src = outs[1].clone();
            bit_src.add_word(consts[1]);
            rem.sub_assign(&bit_src);
        }
        bits_lsb.push(bit_top);
    }
    bits_lsb.reverse();
    Ok(ExtractedBits { width, bits: bits_lsb })
}

/// Converts a bit ciphertext (phase bit * 2^63) into a GGSW selector at
/// level 1: one multi-output level-2 bootstrap produces the bit at every
/// gadget scale, then each scale goes through the two private functional
/// key switches to become the GGSW's mask and body rows.
pub fn circuit_bootstrap(bit_ct: &LweCiphertext, keys: &EvalKeys) -> FourierGgsw {
    let params = &keys.bundle.params;
    let gadget = params.bk_cmux.gadget;
    let l = gadget.level_count;
    let consts: Vec<TorusWord> =
        (0..l).map(|j| 1u64 << (gadget.level_scale_log(j) - 1)).collect();
    let tp = TestPolynomial::sign_many(params.level2_poly_degree, &consts);
    let mut input = bit_ct.clone();
    input.add_word(1 << 62);
    let lwes = pbs_many_lut(&input, &tp, keys, Level::L2, l);
    let mut mask_rows = Vec::with_capacity(l);
    let mut body_rows = Vec::with_capacity(l);
    for (j, mut lwe) in lwes.into_iter().enumerate() {
        lwe.add_word(consts[j]);
        mask_rows.push(private_functional_keyswitch(&lwe, &keys.bundle.pfks_mask));
        body_rows.push(private_functional_keyswitch(&lwe, &keys.bundle.pfks_body));
    }
    let ggsw = GgswCiphertext { gadget, mask_rows, body_rows };
    fourier_ggsw(&ggsw, &keys.table1, &keys.cfg)
}

/// Evaluates one table column against GGSW selector bits (least significant
/// first): CMux tree over the high bits, conditional rotations over the low
/// bits, sample extraction of coefficient 0.
pub fn vertical_pack(
    selectors: &[FourierGgsw],
    table: &[TorusWord],
    keys: &EvalKeys,
) -> LweCiphertext {
    let n1 = keys.bundle.params.level1_poly_degree;
    let w = selectors.len();
    assert_eq!(table.len(), 1usize << w, "table length must be 2^selectors");
    let low = w.min(n1.trailing_zeros() as usize);
    let high = w - low;
    let leaf_len = 1usize << low;
    let ring = &keys.table1;
    let cfg = &keys.cfg;

    let to_poly = |leaf: &[TorusWord]| {
        let mut p = vec![0u64; n1];
        p[..leaf.len()].copy_from_slice(leaf);
        GlweCiphertext::trivial(p, Level::L1)
    };

    // Tree over the high bits. The first level works on plaintext leaves:
    // equal pairs copy through, and unequal pairs decompose a plaintext
    // difference whose higher gadget digits are mostly zero, so those
    // CMuxes cost a fraction of a generic one.
    let mut level: Vec<GlweCiphertext> = if high == 0 {
        vec![to_poly(table)]
    } else {
        (0..(1usize << high) / 2)
            .map(|t| {
                let l0 = &table[2 * t * leaf_len..(2 * t + 1) * leaf_len];
                let l1 = &table[(2 * t + 1) * leaf_len..(2 * t + 2) * leaf_len];
                if l0 == l1 {
                    to_poly(l0)
                } else {
                    cmux(&to_poly(l0), &to_poly(l1), &selectors[low], ring, cfg)
                }
            })
            .collect()
    };
    for j in 1..high {
        let sel = &selectors[low + j];
        level = (0..level.len() / 2)
            .map(|t| {
                if level[2 * t] == level[2 * t + 1] {
                    level[2 * t].clone()
                } else {
                    cmux(&level[2 * t], &level[2 * t + 1], sel, ring, cfg)
                }
            })
            .collect();
    }
    debug_assert_eq!(level.len(), 1);
    let mut acc = level.pop().expect("tree root");

    // Conditional rotations over the low bits.
    let mut rot = GlweCiphertext::zero(n1, Level::L1);
    for (j, sel) in selectors[..low].iter().enumerate() {
        rot.rotate_from(&acc, 2 * n1 - (1 << j));
        let mut diff = rot.clone();
        diff.sub_assign(&acc);
        let prod = external_product(&diff, sel, ring, cfg);
        acc.add_assign(&prod);
    }
    acc.sample_extract(0)
}

/// Full-precision lookup: clean input blocks (least significant first) are
/// split into bits, circuit-bootstrapped into selectors, and every output
/// entry of the table is vertically packed against them. Outputs are raw
/// table words at level 1; callers refresh before further arithmetic.
pub fn wop_pbs(
    blocks: &[LweCiphertext],
    table: &LookupTable,
    keys: &EvalKeys,
) -> Result<Vec<LweCiphertext>> {
    let w = table.input_bits;
    let need = w.div_ceil(2);
    if blocks.len() != need {
        return Err(Error::FormatMismatch(format!(
            "{w}-bit lookup needs {need} blocks, got {}",
            blocks.len()
        )));
    }
    let degree = keys.bundle.params.level1_poly_degree;
    // After the x4 rescale a clean block value occupies a padded 2-bit
    // space (grid q/8), so one two-table bootstrap reads both bits with a
    // sixteenth-torus margin.
    let b0 = |m: u64| (m & 1) << 63;
    let b1 = |m: u64| ((m >> 1) & 1) << 63;
    let tp = TestPolynomial::many(degree, 2, &[&b0, &b1]);
    let mut bit_cts = Vec::with_capacity(w);
    for (i, blk) in blocks.iter().enumerate() {
        debug_assert_eq!(blk.level, Level::L1);
        let mut x = blk.clone();
        x.scalar_mul(4);
        let take = if 2 * (i + 1) <= w { 2 } else { 1 };
        bit_cts.extend(pbs_many_lut(&x, &tp, keys, Level::L1, take));
    }
    let selectors: Vec<FourierGgsw> =
        bit_cts.par_iter().map(|b| circuit_bootstrap(b, keys)).collect();
    Ok(table
        .output_entries
        .par_iter()
        .map(|entry| vertical_pack(&selectors, entry, keys))
        .collect())
}
