//! Division.
//!
//! `div_const` multiplies by the radix-4 digit expansion of `1/d`, which
//! costs no bootstraps for the terms themselves, then compresses columns
//! and rounds. `div` is restoring long division: one quotient digit per
//! round from three batched comparisons against the divisor, with the
//! remainder update folded into a single carry propagation via a
//! nines-complement trick. Both paths are unsigned.

use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::ops::{add, add_plain, cmp_ge_many, drop_low_blocks, propagate_carries};
use crate::fixed::reduce::{execute_reduction, plan_reduction, Term};
use crate::fixed::{FixedPoint, FixedPointFormat, Signedness};

const GUARD_BLOCKS: usize = 4;

fn require_unsigned(fmt: &FixedPointFormat, what: &str) -> Result<()> {
    if fmt.signedness == Signedness::Unsigned {
        Ok(())
    } else {
        Err(Error::config(format!("{what} operates on unsigned values")))
    }
}

/// Radix-4 digits of `1/d`, most significant first: `1/d = sum b_k 4^-k`.
fn reciprocal_digits(d: u64, count: usize) -> Vec<u8> {
    let mut digits = Vec::with_capacity(count);
    let mut r: u64 = 1;
    for _ in 0..count {
        r *= 4;
        digits.push((r / d) as u8);
        r %= d;
        if r == 0 {
            break;
        }
    }
    digits
}

/// `a / d` in `a`'s format, within one ulp of the true quotient.
pub fn div_const<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    d: u64,
) -> Result<FixedPoint<E::Block>> {
    require_unsigned(&a.format, "div_const")?;
    a.require_clean("div_const")?;
    if d == 0 {
        return Err(Error::config("division by zero"));
    }
    if d == 1 {
        return Ok(a.clone());
    }
    let w = a.block_count();
    if d.is_power_of_two() && d.trailing_zeros() % 2 == 0 {
        // A power of four is a pure block shift.
        let s = (d.trailing_zeros() / 2) as usize;
        let mut blocks: Vec<E::Block> = a.blocks.iter().skip(s).cloned().collect();
        let mut cs: Vec<u8> = a.carry_state.iter().skip(s).copied().collect();
        while blocks.len() < w {
            blocks.push(engine.trivial_block(0));
            cs.push(0);
        }
        return Ok(FixedPoint::from_parts(a.format, blocks, cs));
    }
    let fmt = a.format;
    let digit_count = (fmt.fractional_bits as usize + 4).div_ceil(2)
        + (fmt.integer_bits as usize).div_ceil(2);
    let digits = reciprocal_digits(d, digit_count);
    let cols = w + GUARD_BLOCKS;
    let mut terms = Vec::new();
    let mut inputs = Vec::new();
    for (k1, &bk) in digits.iter().enumerate() {
        let k = k1 + 1;
        if bk == 0 {
            continue;
        }
        for j in 0..w {
            if a.carry_state[j] == 0 || j + GUARD_BLOCKS < k {
                continue;
            }
            let col = j + GUARD_BLOCKS - k;
            terms.push(Term { col, bound: a.carry_state[j] * bk });
            inputs.push(engine.scalar_mul(&a.blocks[j], u64::from(bk)));
        }
    }
    // Half an output ulp turns the final truncation into rounding.
    terms.push(Term { col: GUARD_BLOCKS - 1, bound: 2 });
    inputs.push(engine.trivial_block(2));
    let plan = plan_reduction(&terms, cols, 12);
    let (blocks, bounds) = execute_reduction(engine, inputs, &plan);
    let wide_fmt = FixedPointFormat::unsigned(
        fmt.integer_bits,
        fmt.fractional_bits + 2 * GUARD_BLOCKS as u32,
    );
    let wide = propagate_carries(engine, FixedPoint::from_parts(wide_fmt, blocks, bounds))?;
    drop_low_blocks(&wide, GUARD_BLOCKS)
}

/// `a / b` with a caller-supplied digit budget: the quotient must be below
/// `4^q_digits` (raw). Fewer digits cost proportionally fewer bootstraps.
pub fn div_bounded<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
    q_digits: usize,
) -> Result<FixedPoint<E::Block>> {
    a.require_same_format(b)?;
    require_unsigned(&a.format, "div")?;
    a.require_clean("div")?;
    b.require_clean("div")?;
    let fmt = a.format;
    if fmt.fractional_bits % 2 != 0 {
        return Err(Error::config("div needs an even fraction width"));
    }
    let w = fmt.block_count();
    if q_digits == 0 || q_digits > w {
        return Err(Error::config(format!("quotient digits must be in 1..={w}")));
    }
    let f_blocks = (fmt.fractional_bits / 2) as usize;
    let positions = w + f_blocks;
    let wr = w + 1;
    let r_fmt = FixedPointFormat::unsigned(2 * wr as u32, 0);
    r_fmt.check()?;

    // Numerator digit at position p: `a` shifted up by the fraction width.
    let numer = |p: usize| -> (E::Block, u8) {
        if p >= f_blocks && p - f_blocks < w {
            (a.blocks[p - f_blocks].clone(), a.carry_state[p - f_blocks])
        } else {
            (engine.trivial_block(0), 0)
        }
    };
    let lift = |src: &FixedPoint<E::Block>| -> FixedPoint<E::Block> {
        let mut blocks = src.blocks.clone();
        let mut cs = src.carry_state.clone();
        while blocks.len() < wr {
            blocks.push(engine.trivial_block(0));
            cs.push(0);
        }
        FixedPoint::from_parts(r_fmt, blocks, cs)
    };
    let b1 = lift(b);
    let b2 = propagate_carries(engine, add(engine, &b1, &b1)?)?;
    let b3 = propagate_carries(engine, add(engine, &b2, &b1)?)?;

    // Remainder starts as the numerator above the processed digits; the
    // digit-budget contract keeps it below the divisor.
    let mut r_blocks = Vec::with_capacity(wr);
    let mut r_cs = Vec::with_capacity(wr);
    for p in q_digits..positions.min(q_digits + wr) {
        let (blk, cs) = numer(p);
        r_blocks.push(blk);
        r_cs.push(cs);
    }
    while r_blocks.len() < wr {
        r_blocks.push(engine.trivial_block(0));
        r_cs.push(0);
    }
    let mut rem = FixedPoint::from_parts(r_fmt, r_blocks, r_cs);

    let pick = BlockLut::univariate(|c| if c & 1 == 1 { c >> 2 } else { 0 });
    let mut out_blocks: Vec<Option<E::Block>> = vec![None; w];
    for k in (0..q_digits).rev() {
        // R' = 4R + n_k; the dropped top block is zero while R < B.
        let (nk, nk_cs) = numer(k);
        let mut blocks = vec![nk];
        blocks.extend(rem.blocks[..wr - 1].iter().cloned());
        let mut cs = vec![nk_cs];
        cs.extend(&rem.carry_state[..wr - 1]);
        let shifted = FixedPoint::from_parts(r_fmt, blocks, cs);

        let ge = cmp_ge_many(engine, &[(&shifted, &b1), (&shifted, &b2), (&shifted, &b3)])?;
        let digit = engine.add(&engine.add(&ge[0], &ge[1]), &ge[2]);
        out_blocks[k] = Some(digit);

        // d*B = (s1 + s2 + s3)*B, three gated copies of B per block.
        let mut reqs = Vec::with_capacity(3 * wr);
        for s in &ge {
            for blk in &b1.blocks {
                reqs.push((engine.add(&engine.scalar_mul(blk, 4), s), pick));
            }
        }
        let gated = engine.pbs_batch(&reqs);
        let mut t_blocks = Vec::with_capacity(wr);
        for i in 0..wr {
            let db = engine.add(&engine.add(&gated[i], &gated[wr + i]), &gated[2 * wr + i]);
            t_blocks.push(engine.sub_from_plain(9, &db));
        }
        // R - d*B, done as R + (9 - dB) + 3 which wraps mod 4^wr.
        let t = FixedPoint::from_parts(r_fmt, t_blocks, vec![9; wr]);
        let sum = add_plain(engine, &add(engine, &shifted, &t)?, 3)?;
        rem = propagate_carries(engine, sum)?;
    }
    let blocks = out_blocks
        .into_iter()
        .map(|b| b.unwrap_or_else(|| engine.trivial_block(0)))
        .collect();
    let mut cs = vec![3u8; q_digits];
    cs.resize(w, 0);
    Ok(FixedPoint::from_parts(fmt, blocks, cs))
}

/// `a / b` as an exact floored quotient in `a`'s format. The true quotient
/// must fit the format; `b` must be nonzero.
pub fn div<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    div_bounded(engine, a, b, a.format.block_count())
}
