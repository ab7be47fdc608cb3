//! Radix arithmetic over fixed-point numbers: linear block ops, carry
//! propagation, comparison, selection and wide sums.

use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::reduce::{execute_reduction, plan_reduction, Term};
use crate::fixed::{raw_to_blocks, FixedPoint, FixedPointFormat};
use crate::params::{BLOCK_MAX_VAL, RADIX_MESSAGE_BITS};

const BLOCK_CAP: u32 = BLOCK_MAX_VAL as u32;

/// Blockwise sum without propagation. Fails if any block's worst case
/// would leave lookup range; propagate one operand first in that case.
pub fn add<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    a.require_same_format(b)?;
    let mut blocks = Vec::with_capacity(a.block_count());
    let mut cs = Vec::with_capacity(a.block_count());
    for j in 0..a.block_count() {
        let bound = u32::from(a.carry_state[j]) + u32::from(b.carry_state[j]);
        if bound > BLOCK_CAP {
            return Err(Error::range(format!("add overflows block {j} (bound {bound})")));
        }
        blocks.push(engine.add(&a.blocks[j], &b.blocks[j]));
        cs.push(bound as u8);
    }
    Ok(FixedPoint::from_parts(a.format, blocks, cs))
}

/// Adds an encoded plaintext, blockwise and unpropagated.
pub fn add_plain<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    raw: i128,
) -> Result<FixedPoint<E::Block>> {
    let vals = raw_to_blocks(raw, &a.format);
    let mut blocks = Vec::with_capacity(a.block_count());
    let mut cs = Vec::with_capacity(a.block_count());
    for j in 0..a.block_count() {
        let bound = u32::from(a.carry_state[j]) + u32::from(vals[j]);
        if bound > BLOCK_CAP {
            return Err(Error::range(format!("add_plain overflows block {j}")));
        }
        blocks.push(if vals[j] == 0 {
            a.blocks[j].clone()
        } else {
            engine.add_plain(&a.blocks[j], u64::from(vals[j]))
        });
        cs.push(bound as u8);
    }
    Ok(FixedPoint::from_parts(a.format, blocks, cs))
}

/// Two's complement negation: blockwise `3 - b` plus one at the bottom.
/// Output is unpropagated (bottom block bound 4).
pub fn negate<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    a.require_clean("negate")?;
    let mut blocks = Vec::with_capacity(a.block_count());
    let mut cs = Vec::with_capacity(a.block_count());
    for (j, b) in a.blocks.iter().enumerate() {
        let flipped = engine.sub_from_plain(3, b);
        if j == 0 {
            blocks.push(engine.add_plain(&flipped, 1));
            cs.push(4);
        } else {
            blocks.push(flipped);
            cs.push(3);
        }
    }
    Ok(FixedPoint::from_parts(a.format, blocks, cs))
}

/// `a - b`, propagated. `b` must be clean; `a` may carry small bounds.
pub fn sub<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    let nb = negate(engine, b)?;
    propagate_carries(engine, add(engine, a, &nb)?)
}

/// Ripples every block down to clean range. Costs up to two bootstraps per
/// dirty block, batched across all numbers at each position.
pub fn propagate_carries_many<E: BlockEngine>(
    engine: &E,
    nums: Vec<FixedPoint<E::Block>>,
) -> Result<Vec<FixedPoint<E::Block>>> {
    if nums.is_empty() {
        return Ok(nums);
    }
    let msg_lut = BlockLut::univariate(|m| m & 3);
    let carry_lut = BlockLut::univariate(|m| m >> 2);
    let widest = nums.iter().map(FixedPoint::block_count).max().unwrap();
    let mut carries: Vec<Option<(E::Block, u8)>> = vec![None; nums.len()];
    let mut done: Vec<(Vec<E::Block>, Vec<u8>)> =
        nums.iter().map(|n| (Vec::with_capacity(n.block_count()), Vec::new())).collect();
    for j in 0..widest {
        let mut reqs = Vec::new();
        let mut slots: Vec<(usize, bool, u8)> = Vec::new();
        for (i, n) in nums.iter().enumerate() {
            if j >= n.block_count() {
                continue;
            }
            let (cur, bound) = match carries[i].take() {
                Some((c, cb)) => (
                    engine.add(&n.blocks[j], &c),
                    u32::from(n.carry_state[j]) + u32::from(cb),
                ),
                None => (n.blocks[j].clone(), u32::from(n.carry_state[j])),
            };
            if bound > BLOCK_CAP {
                return Err(Error::range(format!("carry into block {j} overflows (bound {bound})")));
            }
            if bound <= 3 {
                done[i].0.push(cur);
                done[i].1.push(bound as u8);
                continue;
            }
            reqs.push((cur.clone(), msg_lut));
            let top = j + 1 == n.block_count();
            let carry_bound = (bound >> 2) as u8;
            let emits_carry = !top && carry_bound > 0;
            if emits_carry {
                reqs.push((cur, carry_lut));
            }
            slots.push((i, emits_carry, carry_bound));
        }
        let mut outs = engine.pbs_batch(&reqs).into_iter();
        for (i, emits_carry, carry_bound) in slots {
            done[i].0.push(outs.next().expect("msg block"));
            done[i].1.push(3);
            if emits_carry {
                carries[i] = Some((outs.next().expect("carry block"), carry_bound));
            }
        }
    }
    Ok(nums
        .into_iter()
        .zip(done)
        .map(|(n, (blocks, cs))| FixedPoint::from_parts(n.format, blocks, cs))
        .collect())
}

pub fn propagate_carries<E: BlockEngine>(
    engine: &E,
    num: FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(propagate_carries_many(engine, vec![num])?.pop().unwrap())
}

/// One identity bootstrap per block: values pass through unchanged and the
/// accumulated noise resets to a fresh bootstrap's.
pub fn refresh_many<E: BlockEngine>(
    engine: &E,
    items: Vec<FixedPoint<E::Block>>,
) -> Result<Vec<FixedPoint<E::Block>>> {
    let ident = BlockLut::univariate(|c| c & 3);
    let mut reqs = Vec::new();
    for it in &items {
        it.require_clean("refresh")?;
        for b in &it.blocks {
            reqs.push((b.clone(), ident));
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    Ok(items
        .into_iter()
        .map(|it| {
            let n = it.blocks.len();
            let blocks = (0..n).map(|_| outs.next().expect("refreshed block")).collect();
            FixedPoint::from_parts(it.format, blocks, it.carry_state)
        })
        .collect())
}

/// Multiplies by `4^k` in place of the format: low blocks fill with zeros,
/// top blocks fall off modularly.
pub fn shift_blocks_left<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    k: usize,
) -> FixedPoint<E::Block> {
    let w = a.block_count();
    let keep = w.saturating_sub(k);
    let mut blocks = Vec::with_capacity(w);
    let mut cs = Vec::with_capacity(w);
    for _ in 0..w - keep {
        blocks.push(engine.trivial_block(0));
        cs.push(0);
    }
    blocks.extend(a.blocks[..keep].iter().cloned());
    cs.extend(&a.carry_state[..keep]);
    FixedPoint::from_parts(a.format, blocks, cs)
}

/// Truncates `k` low blocks: divides by `4^k`, rounding toward minus
/// infinity for signed values. The format loses fraction width.
pub fn drop_low_blocks<B: Clone + Send + Sync>(
    a: &FixedPoint<B>,
    k: usize,
) -> Result<FixedPoint<B>> {
    let shed = RADIX_MESSAGE_BITS as u32 * k as u32;
    if a.format.fractional_bits < shed || a.block_count() <= k {
        return Err(Error::range(format!("cannot drop {k} low blocks from {:?}", a.format)));
    }
    let fmt = FixedPointFormat::new(
        a.format.integer_bits,
        a.format.fractional_bits - shed,
        a.format.signedness,
    );
    Ok(FixedPoint::from_parts(fmt, a.blocks[k..].to_vec(), a.carry_state[k..].to_vec()))
}

/// Reduces modulo `4^(w-k)` by discarding high blocks.
pub fn drop_high_blocks<B: Clone + Send + Sync>(
    a: &FixedPoint<B>,
    k: usize,
) -> Result<FixedPoint<B>> {
    let shed = RADIX_MESSAGE_BITS as u32 * k as u32;
    if a.format.integer_bits <= shed || a.block_count() <= k {
        return Err(Error::range(format!("cannot drop {k} high blocks from {:?}", a.format)));
    }
    let fmt = FixedPointFormat::new(
        a.format.integer_bits - shed,
        a.format.fractional_bits,
        a.format.signedness,
    );
    let keep = a.block_count() - k;
    Ok(FixedPoint::from_parts(fmt, a.blocks[..keep].to_vec(), a.carry_state[..keep].to_vec()))
}

/// Widens toward the integer side with zero blocks. High blocks carry no
/// sign, so signed inputs must be biased into nonnegative range first.
pub fn zero_extend<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    fmt: FixedPointFormat,
) -> Result<FixedPoint<E::Block>> {
    if fmt.fractional_bits != a.format.fractional_bits || fmt.block_count() < a.block_count() {
        return Err(Error::FormatMismatch(format!(
            "zero_extend {:?} -> {:?}",
            a.format, fmt
        )));
    }
    let mut blocks = a.blocks.clone();
    let mut cs = a.carry_state.clone();
    while blocks.len() < fmt.block_count() {
        blocks.push(engine.trivial_block(0));
        cs.push(0);
    }
    Ok(FixedPoint::from_parts(fmt, blocks, cs))
}

fn leaf_sign_flip(v: u64) -> u64 {
    v ^ 2
}

/// `a >= b` as a clean 0/1 block, `2w - 1` bootstraps per pair.
///
/// Each leaf packs one block pair into `4a + b` and reads out
/// greater/equal/less; a balanced tree then folds pairs most significant
/// first, and the root lookup emits the bit. Signed formats compare
/// exactly by flipping the sign bit inside the top leaf's table.
pub fn cmp_ge_many<E: BlockEngine>(
    engine: &E,
    pairs: &[(&FixedPoint<E::Block>, &FixedPoint<E::Block>)],
) -> Result<Vec<E::Block>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let leaf = BlockLut::bivariate(|x, y| 2 * u64::from(x > y) + u64::from(x == y));
    let leaf_signed = BlockLut::bivariate(|x, y| {
        let (x, y) = (leaf_sign_flip(x), leaf_sign_flip(y));
        2 * u64::from(x > y) + u64::from(x == y)
    });
    let leaf_final = BlockLut::bivariate(|x, y| u64::from(x >= y));
    let leaf_final_signed = BlockLut::bivariate(|x, y| u64::from(leaf_sign_flip(x) >= leaf_sign_flip(y)));
    let fold = |c: u64| {
        let (h, l) = (c >> 2, c & 3);
        let g = h == 2 || (h == 1 && l == 2);
        let e = h == 1 && l == 1;
        (g, e)
    };
    let combine = BlockLut::univariate(|c| {
        let (g, e) = fold(c);
        2 * u64::from(g) + u64::from(e)
    });
    let combine_final = BlockLut::univariate(|c| {
        let (g, e) = fold(c);
        u64::from(g || e)
    });

    let mut reqs = Vec::new();
    for (a, b) in pairs {
        a.require_same_format(b)?;
        a.require_clean("compare")?;
        b.require_clean("compare")?;
        let w = a.block_count();
        let signed = a.format.is_signed();
        for j in (0..w).rev() {
            let packed = engine.add(&engine.scalar_mul(&a.blocks[j], 4), &b.blocks[j]);
            let top = j + 1 == w;
            let lut = match (w == 1, top && signed) {
                (true, true) => leaf_final_signed,
                (true, false) => leaf_final,
                (false, true) => leaf_signed,
                (false, false) => leaf,
            };
            reqs.push((packed, lut));
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    let mut lists: Vec<Vec<E::Block>> = pairs
        .iter()
        .map(|(a, _)| (0..a.block_count()).map(|_| outs.next().expect("leaf")).collect())
        .collect();

    loop {
        let mut reqs = Vec::new();
        let mut shapes: Vec<(usize, usize)> = Vec::new();
        for (pi, list) in lists.iter().enumerate() {
            if list.len() <= 1 {
                continue;
            }
            let lut = if list.len() == 2 { combine_final } else { combine };
            let folds = list.len() / 2;
            for k in 0..folds {
                let packed = engine.add(&engine.scalar_mul(&list[2 * k], 4), &list[2 * k + 1]);
                reqs.push((packed, lut));
            }
            shapes.push((pi, folds));
        }
        if reqs.is_empty() {
            break;
        }
        let mut outs = engine.pbs_batch(&reqs).into_iter();
        for (pi, folds) in shapes {
            let mut next: Vec<E::Block> = (0..folds).map(|_| outs.next().expect("fold")).collect();
            if lists[pi].len() % 2 == 1 {
                next.push(lists[pi].pop().unwrap());
            }
            lists[pi] = next;
        }
    }
    Ok(lists.into_iter().map(|mut l| l.pop().expect("comparison bit")).collect())
}

pub fn cmp_ge<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
) -> Result<E::Block> {
    Ok(cmp_ge_many(engine, &[(a, b)])?.pop().unwrap())
}

/// `if s { a } else { b }` per entry, two bootstraps per block. `s` must be
/// a clean 0/1 block; both arms must be clean and share a format.
pub fn select_many<E: BlockEngine>(
    engine: &E,
    items: &[(&E::Block, &FixedPoint<E::Block>, &FixedPoint<E::Block>)],
) -> Result<Vec<FixedPoint<E::Block>>> {
    let pick_set = BlockLut::univariate(|c| if c & 1 == 1 { c >> 2 } else { 0 });
    let pick_clear = BlockLut::univariate(|c| if c & 1 == 0 { c >> 2 } else { 0 });
    let mut reqs = Vec::new();
    for (s, a, b) in items {
        a.require_same_format(b)?;
        a.require_clean("select")?;
        b.require_clean("select")?;
        for j in 0..a.block_count() {
            reqs.push((engine.add(&engine.scalar_mul(&a.blocks[j], 4), s), pick_set));
            reqs.push((engine.add(&engine.scalar_mul(&b.blocks[j], 4), s), pick_clear));
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    let mut picked = Vec::with_capacity(items.len());
    for (_, a, b) in items {
        let mut blocks = Vec::with_capacity(a.block_count());
        let mut cs = Vec::with_capacity(a.block_count());
        for j in 0..a.block_count() {
            let ra = outs.next().expect("arm a");
            let rb = outs.next().expect("arm b");
            blocks.push(engine.add(&ra, &rb));
            cs.push(a.carry_state[j].max(b.carry_state[j]));
        }
        picked.push(FixedPoint::from_parts(a.format, blocks, cs));
    }
    Ok(picked)
}

pub fn select<E: BlockEngine>(
    engine: &E,
    s: &E::Block,
    a: &FixedPoint<E::Block>,
    b: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(select_many(engine, &[(s, a, b)])?.pop().unwrap())
}

/// `s * a` per entry for clean 0/1 bits `s`: one bootstrap per block.
pub fn mul_by_bit_many<E: BlockEngine>(
    engine: &E,
    items: &[(&E::Block, &FixedPoint<E::Block>)],
) -> Result<Vec<FixedPoint<E::Block>>> {
    let pick = BlockLut::univariate(|c| if c & 1 == 1 { c >> 2 } else { 0 });
    let mut reqs = Vec::new();
    for (s, a) in items {
        a.require_clean("mul_by_bit")?;
        for b in &a.blocks {
            reqs.push((engine.add(&engine.scalar_mul(b, 4), s), pick));
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    Ok(items
        .iter()
        .map(|(_, a)| {
            let blocks = (0..a.block_count()).map(|_| outs.next().expect("gated block")).collect();
            FixedPoint::from_parts(a.format, blocks, a.carry_state.clone())
        })
        .collect())
}

pub fn mul_by_bit<E: BlockEngine>(
    engine: &E,
    s: &E::Block,
    a: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(mul_by_bit_many(engine, &[(s, a)])?.pop().unwrap())
}

/// Tournament maximum over clean same-format values.
pub fn max_tree<E: BlockEngine>(
    engine: &E,
    mut items: Vec<FixedPoint<E::Block>>,
) -> Result<FixedPoint<E::Block>> {
    if items.is_empty() {
        return Err(Error::config("max over empty set"));
    }
    while items.len() > 1 {
        let odd = if items.len() % 2 == 1 { items.pop() } else { None };
        let pairs: Vec<_> = items.chunks(2).map(|c| (&c[0], &c[1])).collect();
        let bits = cmp_ge_many(engine, &pairs)?;
        let sels: Vec<_> = bits
            .iter()
            .zip(items.chunks(2))
            .map(|(s, c)| (s, &c[0], &c[1]))
            .collect();
        let mut next = select_many(engine, &sels)?;
        if let Some(o) = odd {
            next.push(o);
        }
        // Selected values carry two bootstraps' noise; another round would
        // scale that by the comparison packing, so survivors are refreshed.
        if next.len() > 1 {
            next = refresh_many(engine, next)?;
        }
        items = next;
    }
    Ok(items.pop().unwrap())
}

/// Sums same-format values into `out_fmt` by column compression, then one
/// propagation. Signed inputs must already be biased nonnegative unless
/// the output keeps their exact width.
pub fn sum_many<E: BlockEngine>(
    engine: &E,
    items: &[FixedPoint<E::Block>],
    out_fmt: FixedPointFormat,
) -> Result<FixedPoint<E::Block>> {
    let first = items.first().ok_or_else(|| Error::config("sum over empty set"))?;
    if out_fmt.fractional_bits != first.format.fractional_bits
        || out_fmt.block_count() < first.format.block_count()
    {
        return Err(Error::FormatMismatch(format!("sum {:?} -> {:?}", first.format, out_fmt)));
    }
    if first.format.is_signed() && out_fmt.block_count() != first.format.block_count() {
        return Err(Error::range("widening sum needs biased (nonnegative) inputs".to_string()));
    }
    let mut terms = Vec::new();
    let mut inputs = Vec::new();
    for it in items {
        it.require_same_format(first)?;
        for (j, (b, &bound)) in it.blocks.iter().zip(&it.carry_state).enumerate() {
            if bound == 0 {
                continue;
            }
            terms.push(Term { col: j, bound });
            inputs.push(b.clone());
        }
    }
    let cols = out_fmt.block_count();
    let plan = plan_reduction(&terms, cols, 12);
    let (blocks, bounds) = execute_reduction(engine, inputs, &plan);
    propagate_carries(engine, FixedPoint::from_parts(out_fmt, blocks, bounds))
}
