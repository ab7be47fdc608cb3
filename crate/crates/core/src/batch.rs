//! Batch scheduling for bootstrap and key-switch requests.
//!
//! Operators submit whole stages of independent requests. Oversized stages
//! are split into balanced chunks inside a throughput window; chunks run
//! sequentially to bound the working set while the requests of a chunk fan
//! out across the scheduler's worker pool. Scheduling never changes values:
//! every request is a pure function of its input and the shared keys.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boot::{keyswitch, programmable_bootstrap, EvalKeys, TestPolynomial};
use crate::cipher::{Level, LweCiphertext};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPolicy {
    #[serde(default = "default_min_batch")]
    pub min_batch: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_true")]
    pub split_enabled: bool,
    #[serde(default = "default_true")]
    pub batching_enabled: bool,
    #[serde(default = "default_workers")]
    pub worker_count: usize,
}

fn default_min_batch() -> usize {
    192
}

fn default_max_batch() -> usize {
    320
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            min_batch: default_min_batch(),
            max_batch: default_max_batch(),
            split_enabled: true,
            batching_enabled: true,
            worker_count: default_workers(),
        }
    }
}

impl BatchPolicy {
    pub fn check(&self) -> Result<()> {
        if self.min_batch > self.max_batch {
            return Err(Error::config(format!(
                "min_batch {} exceeds max_batch {}",
                self.min_batch, self.max_batch
            )));
        }
        if self.worker_count == 0 {
            return Err(Error::config("worker_count must be at least 1"));
        }
        Ok(())
    }
}

/// Chunk sizes for a stage of `total` requests.
///
/// Totals at or under `max_batch` stay whole; larger stages split into
/// `ceil(total / max_batch)` chunks balanced to within one request. For
/// totals strictly between `max_batch` and `2 * min_batch` no partition can
/// satisfy both bounds at once; the ceiling rule wins there and chunk sizes
/// dip below `min_batch`. Everywhere else the chunks land inside
/// `[min_batch, max_batch]` whenever the total itself is at least
/// `min_batch`.
pub fn split_plan(total: usize, policy: &BatchPolicy) -> Vec<usize> {
    if total == 0 {
        return Vec::new();
    }
    if !policy.split_enabled || total <= policy.max_batch {
        return vec![total];
    }
    let chunks = total.div_ceil(policy.max_batch);
    let base = total / chunks;
    let extra = total % chunks;
    (0..chunks).map(|i| base + usize::from(i < extra)).collect()
}

/// Which key-switch key a [`RequestKind::Keyswitch`] request uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KskSel {
    /// Level 1 to level 0, low-noise row.
    Cmux,
    /// Level 1 to level 0, fast row.
    Gpbs,
    /// Level 2 to level 1.
    L2ToL1,
}

#[derive(Clone)]
pub enum RequestKind {
    Pbs { table: Arc<TestPolynomial>, target: Level },
    Keyswitch(KskSel),
}

/// One unit of schedulable work producing exactly one ciphertext.
#[derive(Clone)]
pub struct Request {
    pub input: LweCiphertext,
    pub kind: RequestKind,
}

impl Request {
    pub fn pbs(input: LweCiphertext, table: Arc<TestPolynomial>, target: Level) -> Self {
        Self { input, kind: RequestKind::Pbs { table, target } }
    }

    pub fn keyswitch(input: LweCiphertext, sel: KskSel) -> Self {
        Self { input, kind: RequestKind::Keyswitch(sel) }
    }

    /// Requests only batch together when they hit the same ring and keys.
    fn group(&self) -> (u8, u8) {
        match &self.kind {
            RequestKind::Pbs { target, .. } => (0, *target as u8),
            RequestKind::Keyswitch(sel) => (1, *sel as u8),
        }
    }

    fn execute(&self, keys: &EvalKeys) -> LweCiphertext {
        match &self.kind {
            RequestKind::Pbs { table, target } => {
                programmable_bootstrap(&self.input, table, keys, *target)
            }
            RequestKind::Keyswitch(sel) => {
                let ksk = match sel {
                    KskSel::Cmux => &keys.bundle.ksk_cmux,
                    KskSel::Gpbs => &keys.bundle.ksk_gpbs,
                    KskSel::L2ToL1 => &keys.bundle.ksk_l2_l1,
                };
                keyswitch(&self.input, ksk)
            }
        }
    }
}

/// Shared execution counters, updated relaxed; snapshot for reports.
#[derive(Default)]
pub struct Stats {
    pbs_l1: AtomicU64,
    pbs_l2: AtomicU64,
    keyswitches: AtomicU64,
    batches: AtomicU64,
    chunks: AtomicU64,
    requests: AtomicU64,
    largest_chunk: AtomicU64,
    wop_lookups: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub pbs_l1: u64,
    pub pbs_l2: u64,
    pub keyswitches: u64,
    pub batches: u64,
    pub chunks: u64,
    pub requests: u64,
    pub largest_chunk: u64,
    pub wop_lookups: u64,
}

impl Stats {
    /// Blind rotations and key switches spent inside a full-precision
    /// lookup, metered by the caller since the lookup manages its own
    /// parallelism.
    pub fn record_wop(&self, l1_rotations: u64, l2_rotations: u64, keyswitches: u64) {
        self.wop_lookups.fetch_add(1, Ordering::Relaxed);
        self.pbs_l1.fetch_add(l1_rotations, Ordering::Relaxed);
        self.pbs_l2.fetch_add(l2_rotations, Ordering::Relaxed);
        self.keyswitches.fetch_add(keyswitches, Ordering::Relaxed);
    }

    /// One stage of level-1 bootstraps executed outside the scheduler, one
    /// request per chunk; keeps the mirror engine's counters aligned with an
    /// unbatched runner.
    pub(crate) fn record_stage_direct(&self, n: u64) {
        self.batches.fetch_add(1, Ordering::Relaxed);
        self.requests.fetch_add(n, Ordering::Relaxed);
        self.pbs_l1.fetch_add(n, Ordering::Relaxed);
        self.chunks.fetch_add(n, Ordering::Relaxed);
        self.largest_chunk.fetch_max(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            pbs_l1: self.pbs_l1.load(Ordering::Relaxed),
            pbs_l2: self.pbs_l2.load(Ordering::Relaxed),
            keyswitches: self.keyswitches.load(Ordering::Relaxed),
            batches: self.batches.load(Ordering::Relaxed),
            chunks: self.chunks.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
            largest_chunk: self.largest_chunk.load(Ordering::Relaxed),
            wop_lookups: self.wop_lookups.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.pbs_l1.store(0, Ordering::Relaxed);
        self.pbs_l2.store(0, Ordering::Relaxed);
        self.keyswitches.store(0, Ordering::Relaxed);
        self.batches.store(0, Ordering::Relaxed);
        self.chunks.store(0, Ordering::Relaxed);
        self.requests.store(0, Ordering::Relaxed);
        self.largest_chunk.store(0, Ordering::Relaxed);
        self.wop_lookups.store(0, Ordering::Relaxed);
    }
}

/// Owns the worker pool and policy; blocks until a submitted stage is done.
pub struct BatchRunner {
    policy: BatchPolicy,
    pool: rayon::ThreadPool,
    stats: Arc<Stats>,
}

impl BatchRunner {
    pub fn new(policy: BatchPolicy) -> Result<Self> {
        policy.check()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(policy.worker_count)
            .build()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
        Ok(Self { policy, pool, stats: Arc::new(Stats::default()) })
    }

    pub fn policy(&self) -> &BatchPolicy {
        &self.policy
    }

    pub fn stats(&self) -> &Arc<Stats> {
        &self.stats
    }

    /// Executes a stage of independent requests; `result[i]` always belongs
    /// to `requests[i]`. Mixed rings are regrouped internally so each chunk
    /// stays homogeneous.
    pub fn submit_batch(&self, requests: &[Request], keys: &EvalKeys) -> Vec<LweCiphertext> {
        if requests.is_empty() {
            return Vec::new();
        }
        self.stats.batches.fetch_add(1, Ordering::Relaxed);
        self.stats.requests.fetch_add(requests.len() as u64, Ordering::Relaxed);
        for r in requests {
            let counter = match &r.kind {
                RequestKind::Pbs { target: Level::L2, .. } => &self.stats.pbs_l2,
                RequestKind::Pbs { .. } => &self.stats.pbs_l1,
                RequestKind::Keyswitch(_) => &self.stats.keyswitches,
            };
            counter.fetch_add(1, Ordering::Relaxed);
        }

        let mut groups: Vec<((u8, u8), Vec<usize>)> = Vec::new();
        for (i, r) in requests.iter().enumerate() {
            let key = r.group();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, idxs)) => idxs.push(i),
                None => groups.push((key, vec![i])),
            }
        }

        let mut slots: Vec<Option<LweCiphertext>> = vec![None; requests.len()];
        for (_, idxs) in &groups {
            if !self.policy.batching_enabled {
                self.stats.chunks.fetch_add(idxs.len() as u64, Ordering::Relaxed);
                self.stats.largest_chunk.fetch_max(1, Ordering::Relaxed);
                for &i in idxs {
                    slots[i] = Some(requests[i].execute(keys));
                }
                continue;
            }
            let plan = split_plan(idxs.len(), &self.policy);
            self.stats.chunks.fetch_add(plan.len() as u64, Ordering::Relaxed);
            let mut start = 0;
            for size in plan {
                self.stats.largest_chunk.fetch_max(size as u64, Ordering::Relaxed);
                let chunk = &idxs[start..start + size];
                let done: Vec<(usize, LweCiphertext)> = self.pool.install(|| {
                    chunk.par_iter().map(|&i| (i, requests[i].execute(keys))).collect()
                });
                for (i, ct) in done {
                    slots[i] = Some(ct);
                }
                start += size;
            }
        }
        slots.into_iter().map(|s| s.expect("every request executed")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BLOCK_DELTA_LOG;
    use crate::testutil::toy_keys;
    use crate::torus::decode_plain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(min: usize, max: usize) -> BatchPolicy {
        BatchPolicy { min_batch: min, max_batch: max, worker_count: 2, ..BatchPolicy::default() }
    }

    #[test]
    fn split_plan_examples() {
        let p = BatchPolicy::default();
        assert_eq!(split_plan(100, &p), vec![100]);
        assert_eq!(split_plan(640, &p), vec![320, 320]);
        assert_eq!(split_plan(1000, &p), vec![250, 250, 250, 250]);
        let off = BatchPolicy { split_enabled: false, ..BatchPolicy::default() };
        assert_eq!(split_plan(2048, &off), vec![2048]);
        assert!(split_plan(0, &p).is_empty());
    }

    #[test]
    fn split_plan_bounds_and_balance() {
        let p = BatchPolicy::default();
        for total in 1..3000usize {
            let plan = split_plan(total, &p);
            assert_eq!(plan.iter().sum::<usize>(), total);
            let lo = *plan.iter().min().unwrap();
            let hi = *plan.iter().max().unwrap();
            assert!(hi - lo <= 1, "unbalanced at {total}: {plan:?}");
            let feasible = total <= p.max_batch || total >= 2 * p.min_batch;
            if total >= p.min_batch && feasible {
                assert!(lo >= p.min_batch.min(total), "small chunk at {total}: {plan:?}");
                assert!(hi <= p.max_batch, "big chunk at {total}: {plan:?}");
            }
        }
        // Inside the infeasible window the ceiling rule wins.
        assert_eq!(split_plan(350, &p), vec![175, 175]);
    }

    fn enc(v: u64, rng: &mut ChaCha8Rng) -> LweCiphertext {
        toy_keys().bundle.encrypt_lwe(v << BLOCK_DELTA_LOG, Level::L1, rng)
    }

    fn dec(ct: &LweCiphertext) -> u64 {
        decode_plain(toy_keys().bundle.decrypt_lwe(ct), 5) & 0xF
    }

    fn stage(n: usize, rng: &mut ChaCha8Rng) -> Vec<Request> {
        let degree = toy_keys().bundle.params.level1_poly_degree;
        (0..n as u64)
            .map(|i| {
                let f = move |m: u64| ((m + i) & 15) << BLOCK_DELTA_LOG;
                let table = Arc::new(TestPolynomial::single(degree, 4, &f));
                Request::pbs(enc(3, rng), table, Level::L1)
            })
            .collect()
    }

    #[test]
    fn submit_preserves_order_and_counts() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let requests = stage(11, &mut rng);
        let runner = BatchRunner::new(policy(2, 4)).unwrap();
        let out = runner.submit_batch(&requests, keys);
        for (i, ct) in out.iter().enumerate() {
            assert_eq!(dec(ct), (3 + i as u64) & 15, "request {i}");
        }
        let s = runner.stats().snapshot();
        assert_eq!(s.requests, 11);
        assert_eq!(s.pbs_l1, 11);
        assert_eq!(s.batches, 1);
        assert_eq!(s.chunks, 3);
        assert_eq!(s.largest_chunk, 4);
    }

    #[test]
    fn outputs_identical_under_any_policy() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut requests = stage(9, &mut rng);
        for v in 0..3 {
            requests.push(Request::keyswitch(enc(v, &mut rng), KskSel::Cmux));
        }
        let baseline: Vec<LweCiphertext> =
            requests.iter().map(|r| r.execute(keys)).collect();
        let variants = [
            policy(2, 3),
            policy(1, 100),
            BatchPolicy { split_enabled: false, worker_count: 2, ..BatchPolicy::default() },
            BatchPolicy { batching_enabled: false, ..BatchPolicy::default() },
            BatchPolicy { worker_count: 1, ..policy(2, 2) },
        ];
        for p in variants {
            let runner = BatchRunner::new(p.clone()).unwrap();
            assert_eq!(runner.submit_batch(&requests, keys), baseline, "policy {p:?}");
        }
    }

    #[test]
    fn mixed_levels_regroup_without_reordering() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let degree = keys.bundle.params.level1_poly_degree;
        let id = Arc::new(TestPolynomial::single(degree, 4, &|m| m << BLOCK_DELTA_LOG));
        let enc2 = |v: u64, rng: &mut ChaCha8Rng| {
            keys.bundle.encrypt_lwe(v << BLOCK_DELTA_LOG, Level::L2, rng)
        };
        let requests = vec![
            Request::pbs(enc(5, &mut rng), id.clone(), Level::L1),
            Request::keyswitch(enc2(6, &mut rng), KskSel::L2ToL1),
            Request::keyswitch(enc(7, &mut rng), KskSel::Cmux),
            Request::pbs(enc(8, &mut rng), id.clone(), Level::L1),
            Request::keyswitch(enc2(9, &mut rng), KskSel::L2ToL1),
        ];
        let runner = BatchRunner::new(policy(1, 8)).unwrap();
        let out = runner.submit_batch(&requests, keys);
        let levels: Vec<Level> = out.iter().map(|c| c.level).collect();
        assert_eq!(levels, [Level::L1, Level::L1, Level::L0, Level::L1, Level::L1]);
        let got: Vec<u64> = out.iter().map(dec).collect();
        assert_eq!(got, [5, 6, 7, 8, 9]);
        assert_eq!(runner.stats().snapshot().keyswitches, 3);
    }

    #[test]
    fn policy_validation() {
        assert!(BatchRunner::new(BatchPolicy { min_batch: 10, max_batch: 5, ..Default::default() })
            .is_err());
        assert!(BatchRunner::new(BatchPolicy { worker_count: 0, ..Default::default() }).is_err());
    }
}
