//! Block-level execution engines.
//!
//! Fixed-point arithmetic, function evaluation and layers are written once,
//! generically over [`BlockEngine`]. The encrypted engine here executes
//! blocks as level-1 LWE ciphertexts with every bootstrap routed through a
//! batch scheduler; the mirror engine in [`crate::mirror`] runs the same
//! pipelines over plaintext values with analytic noise tracking.
//!
//! A block carries a value in `[0, 16)`: two message bits plus two carry
//! bits at scale `2^59`. Lookups read the full four-bit space.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::batch::{BatchPolicy, BatchRunner, Request, Stats, StatsSnapshot};
use crate::boot::{EvalKeys, TestPolynomial};
use crate::cipher::{Level, LweCiphertext};
use crate::error::Result;
use crate::params::{BLOCK_DELTA_LOG, BLOCK_MAX_VAL};
use crate::wop::{wop_pbs, LookupTable};

/// A four-bit-in, four-bit-out block lookup.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BlockLut {
    pub table: [u64; 16],
}

impl BlockLut {
    pub fn univariate(f: impl Fn(u64) -> u64) -> Self {
        let mut table = [0u64; 16];
        for (m, slot) in table.iter_mut().enumerate() {
            let v = f(m as u64);
            debug_assert!(v <= u64::from(BLOCK_MAX_VAL), "lut output {v} exceeds block capacity");
            *slot = v & u64::from(BLOCK_MAX_VAL);
        }
        Self { table }
    }

    /// Lookup over a packed pair `c = 4a + b` of clean operands.
    pub fn bivariate(f: impl Fn(u64, u64) -> u64) -> Self {
        Self::univariate(|c| f(c >> 2, c & 3))
    }
}

/// Execution surface shared by the encrypted and mirror engines.
///
/// Blocks are immutable values; all methods are pure up to internal
/// metering. `pbs_batch` evaluates one lookup per input block and is the
/// only way upper layers spend bootstraps; `wop_lookup` consumes clean
/// blocks (least significant first, each value below 4) and returns clean
/// blocks of the table's output entries.
pub trait BlockEngine {
    type Block: Clone + Send + Sync;

    fn trivial_block(&self, v: u64) -> Self::Block;
    fn add(&self, a: &Self::Block, b: &Self::Block) -> Self::Block;
    fn add_plain(&self, a: &Self::Block, v: u64) -> Self::Block;
    fn sub_from_plain(&self, v: u64, a: &Self::Block) -> Self::Block;
    fn scalar_mul(&self, a: &Self::Block, k: u64) -> Self::Block;
    fn pbs_batch(&self, inputs: &[(Self::Block, BlockLut)]) -> Vec<Self::Block>;
    fn wop_lookup(&self, blocks: &[Self::Block], table: &LookupTable) -> Result<Vec<Self::Block>>;
}

/// Runs block pipelines on level-1 LWE ciphertexts.
pub struct EncryptedEngine {
    keys: Arc<EvalKeys>,
    runner: BatchRunner,
    luts: Mutex<HashMap<BlockLut, Arc<TestPolynomial>>>,
    refresh: Arc<TestPolynomial>,
}

impl EncryptedEngine {
    pub fn new(keys: Arc<EvalKeys>, policy: BatchPolicy) -> Result<Self> {
        let runner = BatchRunner::new(policy)?;
        let degree = keys.bundle.params.level1_poly_degree;
        // Lookup outputs arrive as raw table words; scaling by four turns a
        // clean value into a padded two-bit phase that one bootstrap maps
        // back onto a fresh block.
        let refresh = Arc::new(TestPolynomial::single(degree, 2, &|m| m << BLOCK_DELTA_LOG));
        Ok(Self { keys, runner, luts: Mutex::new(HashMap::new()), refresh })
    }

    pub fn keys(&self) -> &EvalKeys {
        &self.keys
    }

    pub fn policy(&self) -> &BatchPolicy {
        self.runner.policy()
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.runner.stats().snapshot()
    }

    pub fn raw_stats(&self) -> &Arc<Stats> {
        self.runner.stats()
    }

    fn table(&self, lut: &BlockLut) -> Arc<TestPolynomial> {
        let mut cache = self.luts.lock().expect("lut cache");
        cache
            .entry(*lut)
            .or_insert_with(|| {
                let degree = self.keys.bundle.params.level1_poly_degree;
                let f = |m: u64| lut.table[(m & u64::from(BLOCK_MAX_VAL)) as usize] << BLOCK_DELTA_LOG;
                Arc::new(TestPolynomial::single(degree, 4, &f))
            })
            .clone()
    }
}

impl BlockEngine for EncryptedEngine {
    type Block = LweCiphertext;

    fn trivial_block(&self, v: u64) -> LweCiphertext {
        debug_assert!(v <= u64::from(BLOCK_MAX_VAL));
        let dim = self.keys.bundle.params.level1_lwe_dim;
        LweCiphertext::trivial(v << BLOCK_DELTA_LOG, dim, Level::L1)
    }

    fn add(&self, a: &LweCiphertext, b: &LweCiphertext) -> LweCiphertext {
        let mut out = a.clone();
        out.add_assign(b);
        out
    }

    fn add_plain(&self, a: &LweCiphertext, v: u64) -> LweCiphertext {
        let mut out = a.clone();
        out.add_word(v << BLOCK_DELTA_LOG);
        out
    }

    fn sub_from_plain(&self, v: u64, a: &LweCiphertext) -> LweCiphertext {
        let mut out = self.trivial_block(v);
        out.sub_assign(a);
        out
    }

    fn scalar_mul(&self, a: &LweCiphertext, k: u64) -> LweCiphertext {
        let mut out = a.clone();
        out.scalar_mul(k);
        out
    }

    fn pbs_batch(&self, inputs: &[(LweCiphertext, BlockLut)]) -> Vec<LweCiphertext> {
        let requests: Vec<Request> = inputs
            .iter()
            .map(|(ct, lut)| Request::pbs(ct.clone(), self.table(lut), Level::L1))
            .collect();
        self.runner.submit_batch(&requests, &self.keys)
    }

    fn wop_lookup(
        &self,
        blocks: &[LweCiphertext],
        table: &LookupTable,
    ) -> Result<Vec<LweCiphertext>> {
        let raw = wop_pbs(blocks, table, &self.keys)?;
        let bits = table.input_bits as u64;
        self.runner.stats().record_wop(blocks.len() as u64, bits, 2 * bits);
        let stage: Vec<Request> = raw
            .into_iter()
            .map(|mut ct| {
                ct.scalar_mul(4);
                Request::pbs(ct, self.refresh.clone(), Level::L1)
            })
            .collect();
        Ok(self.runner.submit_batch(&stage, &self.keys))
    }
}
