//! Carry-save column compression.
//!
//! Multiplication, constant division and wide summation all end up with the
//! same shape of work: a multiset of blocks per radix column whose worst
//! case sums exceed lookup capacity. The planner below compresses columns
//! with low/carry splits (two bootstraps each) until every column's bound
//! fits under a cap, leaving room for one final ripple propagation. Plans
//! are plaintext-only, deterministic, and reusable.

use serde::{Deserialize, Serialize};

use crate::engine::{BlockEngine, BlockLut};
use crate::params::BLOCK_MAX_VAL;

pub type TermId = usize;

/// One schedulable block: its column and worst-case value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub col: usize,
    pub bound: u8,
}

/// A group of same-column terms summed and split into message and carry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub sources: Vec<TermId>,
    pub col: usize,
    pub low: TermId,
    /// Absent when the carry column falls off the high end (modular drop).
    pub carry: Option<TermId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducePlan {
    pub input_terms: usize,
    pub columns: usize,
    /// Each pass's splits depend only on terms from earlier passes, so one
    /// pass is one bootstrap batch.
    pub passes: Vec<Vec<Split>>,
    /// Terms left to sum per column at assembly.
    pub residual: Vec<Vec<TermId>>,
    /// Worst-case assembled value per column.
    pub residual_bound: Vec<u8>,
    pub term_count: usize,
}

impl ReducePlan {
    pub fn bootstrap_count(&self) -> usize {
        2 * self.passes.iter().map(Vec::len).sum::<usize>()
    }
}

/// Plans the compression of `terms` into `columns` columns, each bounded by
/// `cap` afterwards. Terms at columns past the end are dropped (the caller
/// chose a modular width); carries off the top are dropped the same way.
pub fn plan_reduction(terms: &[Term], columns: usize, cap: u8) -> ReducePlan {
    assert!((6..=12).contains(&cap), "cap {cap} leaves no carry headroom");
    let mut pending: Vec<Vec<(TermId, u8)>> = vec![Vec::new(); columns];
    for (id, t) in terms.iter().enumerate() {
        debug_assert!(t.bound <= BLOCK_MAX_VAL);
        if t.col < columns && t.bound > 0 {
            pending[t.col].push((id, t.bound));
        }
    }
    let mut term_count = terms.len();
    let mut passes = Vec::new();
    loop {
        let mut pass: Vec<Split> = Vec::new();
        let mut incoming: Vec<(usize, TermId, u8)> = Vec::new();
        for col in 0..columns {
            let mut sum: u32 = pending[col].iter().map(|&(_, b)| u32::from(b)).sum();
            if sum <= u32::from(cap) {
                continue;
            }
            let items = std::mem::take(&mut pending[col]);
            let mut keep = Vec::new();
            let mut idx = 0;
            while idx < items.len() {
                if sum <= u32::from(cap) {
                    keep.extend_from_slice(&items[idx..]);
                    break;
                }
                let mut gsum: u32 = 0;
                let start = idx;
                while idx < items.len() && gsum + u32::from(items[idx].1) <= 15 {
                    gsum += u32::from(items[idx].1);
                    idx += 1;
                }
                let group = &items[start..idx];
                if gsum <= 3 {
                    // Splitting cannot shrink this; park it for assembly.
                    keep.extend_from_slice(group);
                    continue;
                }
                sum -= gsum;
                let low = term_count;
                term_count += 1;
                let carry = if col + 1 < columns {
                    term_count += 1;
                    Some(term_count - 1)
                } else {
                    None
                };
                pass.push(Split {
                    sources: group.iter().map(|&(id, _)| id).collect(),
                    col,
                    low,
                    carry,
                });
                incoming.push((col, low, gsum.min(3) as u8));
                if let Some(c) = carry {
                    incoming.push((col + 1, c, (gsum >> 2).min(3) as u8));
                }
            }
            pending[col] = keep;
        }
        if pass.is_empty() {
            break;
        }
        for (col, id, bound) in incoming {
            pending[col].push((id, bound));
        }
        passes.push(pass);
        assert!(passes.len() <= 64, "column reduction failed to converge");
    }
    let residual_bound = pending
        .iter()
        .map(|col| col.iter().map(|&(_, b)| u32::from(b)).sum::<u32>().min(15) as u8)
        .collect();
    let residual = pending
        .into_iter()
        .map(|col| col.into_iter().map(|(id, _)| id).collect())
        .collect();
    ReducePlan {
        input_terms: terms.len(),
        columns,
        passes,
        residual,
        residual_bound,
        term_count,
    }
}

/// Runs a plan over the caller's input term blocks. Returns one block per
/// column (trivial zero where a column ended empty) plus its bound.
pub fn execute_reduction<E: BlockEngine>(
    engine: &E,
    inputs: Vec<E::Block>,
    plan: &ReducePlan,
) -> (Vec<E::Block>, Vec<u8>) {
    execute_reduction_many(engine, vec![inputs], plan).pop().unwrap()
}

/// Runs one plan over several independent input sets, batching each pass's
/// bootstraps across all of them.
pub fn execute_reduction_many<E: BlockEngine>(
    engine: &E,
    inputs: Vec<Vec<E::Block>>,
    plan: &ReducePlan,
) -> Vec<(Vec<E::Block>, Vec<u8>)> {
    let mut arenas: Vec<Vec<Option<E::Block>>> = inputs
        .into_iter()
        .map(|set| {
            assert_eq!(set.len(), plan.input_terms, "plan expects {} terms", plan.input_terms);
            let mut arena: Vec<Option<E::Block>> = set.into_iter().map(Some).collect();
            arena.resize(plan.term_count, None);
            arena
        })
        .collect();
    let low_lut = BlockLut::univariate(|m| m & 3);
    let carry_lut = BlockLut::univariate(|m| m >> 2);
    for pass in &plan.passes {
        let mut reqs = Vec::with_capacity(2 * pass.len() * arenas.len());
        for arena in &mut arenas {
            for split in pass {
                let mut acc = arena[split.sources[0]].take().expect("source term ready");
                for &s in &split.sources[1..] {
                    let t = arena[s].take().expect("source term ready");
                    acc = engine.add(&acc, &t);
                }
                reqs.push((acc.clone(), low_lut));
                reqs.push((acc, carry_lut));
            }
        }
        let outs = engine.pbs_batch(&reqs);
        let mut outs = outs.into_iter();
        for arena in &mut arenas {
            for split in pass {
                arena[split.low] = outs.next();
                let carried = outs.next();
                if let Some(c) = split.carry {
                    arena[c] = carried;
                }
            }
        }
    }
    arenas
        .into_iter()
        .map(|mut arena| {
            let mut blocks = Vec::with_capacity(plan.columns);
            for ids in &plan.residual {
                let mut acc: Option<E::Block> = None;
                for &id in ids {
                    let t = arena[id].take().expect("residual term ready");
                    acc = Some(match acc {
                        Some(a) => engine.add(&a, &t),
                        None => t,
                    });
                }
                blocks.push(acc.unwrap_or_else(|| engine.trivial_block(0)));
            }
            (blocks, plan.residual_bound.clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_respects_cap_and_conserves_mass() {
        let terms: Vec<Term> = (0..40).map(|k| Term { col: k % 5, bound: 3 + (k % 7) as u8 }).collect();
        let plan = plan_reduction(&terms, 7, 12);
        for (col, b) in plan.residual_bound.iter().enumerate() {
            assert!(*b <= 12, "column {col} bound {b}");
        }
        // Every input term is consumed exactly once: by one split or residual.
        let mut used = vec![0u32; plan.term_count];
        for pass in &plan.passes {
            for s in pass {
                for &src in &s.sources {
                    used[src] += 1;
                }
            }
        }
        for col in &plan.residual {
            for &id in col {
                used[id] += 1;
            }
        }
        for (id, &u) in used.iter().enumerate() {
            assert_eq!(u, 1, "term {id} used {u} times");
        }
    }

    #[test]
    fn small_column_left_alone() {
        let terms = [Term { col: 0, bound: 3 }, Term { col: 0, bound: 2 }];
        let plan = plan_reduction(&terms, 2, 12);
        assert!(plan.passes.is_empty());
        assert_eq!(plan.residual_bound[0], 5);
        assert_eq!(plan.bootstrap_count(), 0);
    }
}
