//! Scheduled multiplication.
//!
//! A multiply is planned in plaintext first: partial products are pruned
//! by operand range, low columns that cannot move the rounded result are
//! skipped, and the surviving terms get a column-compression plan. The
//! schedule records its worst-case deviation from the truncated exact
//! product so callers can budget error before spending any bootstraps.

use serde::{Deserialize, Serialize};

use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::ops::{drop_low_blocks, propagate_carries_many};
use crate::fixed::reduce::{execute_reduction_many, plan_reduction, ReducePlan, Term};
use crate::fixed::{FixedPoint, FixedPointFormat, Signedness};

/// Caller knowledge that tightens a schedule. Bounds are raw (scaled)
/// magnitudes; operands at runtime must respect them.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MulHints {
    pub a_bound_raw: Option<u128>,
    pub b_bound_raw: Option<u128>,
    /// Keep every low column: output is exactly the truncated product.
    pub exact_truncation: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PartialProduct {
    pub i: usize,
    pub j: usize,
    pub low: bool,
    pub high: bool,
    pub bound: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MulSchedule {
    pub fmt_a: FixedPointFormat,
    pub fmt_b: FixedPointFormat,
    pub fmt_out: FixedPointFormat,
    /// Low columns kept below the output to absorb carries.
    pub guard_blocks: usize,
    /// Low columns of the full product that the output discards.
    pub trunc_blocks: usize,
    pub pps: Vec<PartialProduct>,
    pub plan: ReducePlan,
    /// Worst-case shortfall versus the truncated exact product, in output
    /// ulps. Skipped columns only ever remove mass, so the result lands in
    /// `[floor - ceil(err), floor]`.
    pub predicted_error_ulp: f64,
    pub bootstrap_estimate: usize,
}

fn block_bounds(fmt: &FixedPointFormat, raw_bound: u128) -> Vec<u8> {
    (0..fmt.block_count())
        .map(|i| {
            let shifted = if 2 * i >= 128 { 0 } else { raw_bound >> (2 * i) };
            shifted.min(3) as u8
        })
        .collect()
}

fn fmt_max_raw(fmt: &FixedPointFormat) -> u128 {
    (((1u128 << (fmt.total_bits() - 1)) << 1) - 1).min(u128::MAX)
}

/// Worst-case mass a guard choice drops, in raw full-product units.
fn dropped_mass(ba: &[u8], bb: &[u8], c0: usize) -> u128 {
    let mut mass: u128 = 0;
    for (i, &x) in ba.iter().enumerate() {
        for (j, &y) in bb.iter().enumerate() {
            let b = u32::from(x) * u32::from(y);
            if b == 0 {
                continue;
            }
            let c = i + j;
            if c < c0 {
                mass += u128::from(b.min(3)) << (2 * c);
                if b > 3 && c + 1 < c0 {
                    mass += u128::from(b >> 2) << (2 * (c + 1));
                }
            }
        }
    }
    mass
}

/// Plans `a * b -> out` for unsigned clean operands. Signed callers wrap
/// this with sign extraction and reapplication. Fails when the worst-case
/// product cannot fit the output format; pass magnitude hints if the
/// runtime domain is narrower than the formats.
pub fn schedule_mul(
    fmt_a: FixedPointFormat,
    fmt_b: FixedPointFormat,
    fmt_out: FixedPointFormat,
    hints: &MulHints,
) -> Result<MulSchedule> {
    for f in [&fmt_a, &fmt_b, &fmt_out] {
        f.check()?;
        if f.signedness != Signedness::Unsigned {
            return Err(Error::config("multiplication schedules are unsigned; handle signs outside"));
        }
    }
    let f_in = fmt_a.fractional_bits + fmt_b.fractional_bits;
    if f_in < fmt_out.fractional_bits || (f_in - fmt_out.fractional_bits) % 2 != 0 {
        return Err(Error::config(format!(
            "product has {f_in} fractional bits; cannot truncate to {}",
            fmt_out.fractional_bits
        )));
    }
    let lo = ((f_in - fmt_out.fractional_bits) / 2) as usize;
    let va = hints.a_bound_raw.unwrap_or(u128::MAX).min(fmt_max_raw(&fmt_a));
    let vb = hints.b_bound_raw.unwrap_or(u128::MAX).min(fmt_max_raw(&fmt_b));
    let w_out = fmt_out.block_count();
    let out_bound = va
        .checked_mul(vb)
        .map(|p| p >> (2 * lo))
        .ok_or_else(|| Error::range("product bound exceeds 128 bits".to_string()))?;
    if out_bound > fmt_max_raw(&fmt_out) {
        return Err(Error::range(format!(
            "worst-case product needs {} bits, output holds {}",
            128 - out_bound.leading_zeros(),
            fmt_out.total_bits()
        )));
    }
    let ba = block_bounds(&fmt_a, va);
    let bb = block_bounds(&fmt_b, vb);

    let ulp = (2.0f64).powi(2 * lo as i32);
    let mut guard = lo;
    if !hints.exact_truncation {
        for g in 0..=lo {
            let mass = dropped_mass(&ba, &bb, lo - g) as f64;
            if mass / ulp <= 1.0 / 16.0 {
                guard = g;
                break;
            }
        }
    }
    let c0 = lo - guard;
    let cols = w_out + guard;
    let end = lo + w_out;
    let predicted_error_ulp = dropped_mass(&ba, &bb, c0) as f64 / ulp;

    let mut pps = Vec::new();
    let mut terms = Vec::new();
    let mut pp_boots = 0usize;
    for (i, &x) in ba.iter().enumerate() {
        for (j, &y) in bb.iter().enumerate() {
            let bound = x * y;
            if bound == 0 {
                continue;
            }
            let c = i + j;
            let low = (c0..end).contains(&c);
            let high = bound > 3 && (c0..end).contains(&(c + 1));
            if !low && !high {
                continue;
            }
            pps.push(PartialProduct { i, j, low, high, bound });
            if low {
                terms.push(Term { col: c - c0, bound: bound.min(3) });
                pp_boots += 1;
            }
            if high {
                terms.push(Term { col: c + 1 - c0, bound: bound >> 2 });
                pp_boots += 1;
            }
        }
    }
    let plan = plan_reduction(&terms, cols, 12);
    let bootstrap_estimate = pp_boots + plan.bootstrap_count() + 2 * cols;
    Ok(MulSchedule {
        fmt_a,
        fmt_b,
        fmt_out,
        guard_blocks: guard,
        trunc_blocks: lo,
        pps,
        plan,
        predicted_error_ulp,
        bootstrap_estimate,
    })
}

/// Runs one schedule over many operand pairs, batching every stage across
/// the whole set.
pub fn execute_mul_many<E: BlockEngine>(
    engine: &E,
    pairs: &[(&FixedPoint<E::Block>, &FixedPoint<E::Block>)],
    sched: &MulSchedule,
) -> Result<Vec<FixedPoint<E::Block>>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let low_lut = BlockLut::bivariate(|x, y| (x * y) & 3);
    let high_lut = BlockLut::bivariate(|x, y| (x * y) >> 2);
    let mut reqs = Vec::new();
    for (a, b) in pairs {
        if a.format != sched.fmt_a || b.format != sched.fmt_b {
            return Err(Error::FormatMismatch("operands do not match schedule".to_string()));
        }
        a.require_clean("mul")?;
        b.require_clean("mul")?;
        for pp in &sched.pps {
            let packed = engine.add(&engine.scalar_mul(&a.blocks[pp.i], 4), &b.blocks[pp.j]);
            if pp.low && pp.high {
                reqs.push((packed.clone(), low_lut));
                reqs.push((packed, high_lut));
            } else if pp.low {
                reqs.push((packed, low_lut));
            } else {
                reqs.push((packed, high_lut));
            }
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    let per_pair = sched.plan.input_terms;
    let inputs: Vec<Vec<E::Block>> = (0..pairs.len())
        .map(|_| (0..per_pair).map(|_| outs.next().expect("partial product")).collect())
        .collect();
    let reduced = execute_reduction_many(engine, inputs, &sched.plan);
    let wide_fmt = FixedPointFormat::unsigned(
        sched.fmt_out.integer_bits,
        sched.fmt_out.fractional_bits + 2 * sched.guard_blocks as u32,
    );
    let wide: Vec<FixedPoint<E::Block>> = reduced
        .into_iter()
        .map(|(blocks, bounds)| FixedPoint::from_parts(wide_fmt, blocks, bounds))
        .collect();
    let clean = propagate_carries_many(engine, wide)?;
    clean.into_iter().map(|w| drop_low_blocks(&w, sched.guard_blocks)).collect()
}

pub fn execute_mul<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
    sched: &MulSchedule,
) -> Result<FixedPoint<E::Block>> {
    Ok(execute_mul_many(engine, &[(a, b)], sched)?.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchPolicy;
    use crate::engine::EncryptedEngine;
    use crate::fixed::FixedPointCiphertext;
    use crate::testutil::toy_keys_arc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn engine() -> EncryptedEngine {
        let policy = BatchPolicy { worker_count: 2, ..BatchPolicy::default() };
        EncryptedEngine::new(toy_keys_arc(), policy).unwrap()
    }

    #[test]
    fn schedule_rejections() {
        let s44 = FixedPointFormat::signed(4, 4);
        let u44 = FixedPointFormat::unsigned(4, 4);
        assert!(schedule_mul(s44, u44, u44, &MulHints::default()).is_err());
        // Full-range operands cannot fit the same-width output.
        assert!(schedule_mul(u44, u44, u44, &MulHints::default()).is_err());
        let hints = MulHints { a_bound_raw: Some(63), b_bound_raw: Some(63), ..Default::default() };
        assert!(schedule_mul(u44, u44, u44, &hints).is_ok());
    }

    #[test]
    fn in_format_product_is_exact_truncation() {
        let e = engine();
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let fmt = FixedPointFormat::unsigned(4, 4);
        let hints = MulHints { a_bound_raw: Some(63), b_bound_raw: Some(63), ..Default::default() };
        let sched = schedule_mul(fmt, fmt, fmt, &hints).unwrap();
        // With two truncated blocks, every skipped column would cost more
        // than a sixteenth of an ulp, so the planner keeps them all.
        assert_eq!(sched.guard_blocks, sched.trunc_blocks);
        assert_eq!(sched.predicted_error_ulp, 0.0);
        let grid = [1u128, 16, 40, 63];
        for &ra in &grid {
            for &rb in &grid {
                let a = FixedPointCiphertext::encrypt(&e.keys().bundle, ra as f64 / 16.0, fmt, &mut rng).unwrap();
                let b = FixedPointCiphertext::encrypt(&e.keys().bundle, rb as f64 / 16.0, fmt, &mut rng).unwrap();
                let p = execute_mul(&e, &a, &b, &sched).unwrap();
                assert_eq!(p.decrypt_raw(&e.keys().bundle), ((ra * rb) >> 4) as i128, "{ra} * {rb}");
            }
        }
    }

    #[test]
    fn widening_product_is_exact() {
        let e = engine();
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let fmt = FixedPointFormat::unsigned(4, 4);
        let out = FixedPointFormat::unsigned(8, 8);
        let sched = schedule_mul(fmt, fmt, out, &MulHints::default()).unwrap();
        assert_eq!(sched.trunc_blocks, 0);
        for (ra, rb) in [(255u128, 255u128), (255, 1), (37, 200), (0, 91)] {
            let a = FixedPointCiphertext::encrypt(&e.keys().bundle, ra as f64 / 16.0, fmt, &mut rng).unwrap();
            let b = FixedPointCiphertext::encrypt(&e.keys().bundle, rb as f64 / 16.0, fmt, &mut rng).unwrap();
            let p = execute_mul(&e, &a, &b, &sched).unwrap();
            assert_eq!(p.decrypt_raw(&e.keys().bundle), (ra * rb) as i128, "{ra} * {rb}");
        }
    }

    #[test]
    fn guarded_truncation_stays_within_one_ulp() {
        let e = engine();
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let fmt = FixedPointFormat::unsigned(2, 10);
        let hints = MulHints { a_bound_raw: Some(1 << 10), b_bound_raw: Some(1 << 10), ..Default::default() };
        let sched = schedule_mul(fmt, fmt, fmt, &hints).unwrap();
        assert!(sched.guard_blocks < sched.trunc_blocks, "planner should skip some columns");
        assert!(sched.predicted_error_ulp <= 1.0 / 16.0);
        let exact = schedule_mul(fmt, fmt, fmt, &MulHints { exact_truncation: true, ..hints }).unwrap();
        assert_eq!(exact.predicted_error_ulp, 0.0);
        assert!(exact.bootstrap_estimate > sched.bootstrap_estimate);
        let pairs_raw = [(1024u128, 1024u128), (1023, 1023), (713, 997), (512, 3)];
        for &(ra, rb) in &pairs_raw {
            let a = FixedPointCiphertext::encrypt(&e.keys().bundle, ra as f64 / 1024.0, fmt, &mut rng).unwrap();
            let b = FixedPointCiphertext::encrypt(&e.keys().bundle, rb as f64 / 1024.0, fmt, &mut rng).unwrap();
            let floor = ((ra * rb) >> 10) as i128;
            let got = execute_mul(&e, &a, &b, &sched).unwrap().decrypt_raw(&e.keys().bundle);
            assert!(floor - got <= 1 && got <= floor, "{ra} * {rb}: got {got}, floor {floor}");
            let got_exact = execute_mul(&e, &a, &b, &exact).unwrap().decrypt_raw(&e.keys().bundle);
            assert_eq!(got_exact, floor, "{ra} * {rb} exact");
        }
    }
}
