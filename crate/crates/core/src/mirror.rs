//! Plaintext mirror engine with analytic noise tracking.
//!
//! [`MirrorEngine`] runs the same generic block pipelines as the encrypted
//! engine over bare values: schedules, lookup contents and digit plans are
//! identical by construction, so any output mismatch localizes a bug and
//! the mirror's outputs serve as ground truth for exactness checks.
//!
//! Alongside each value the engine carries a [`NoiseEstimate`], propagated
//! with the standard variance formulas for every primitive a ciphertext on
//! the same path would pass through. Variance only grows under linear ops,
//! key switches and CMuxes, and resets at bootstrap outputs. Every rounding
//! decision (block lookups, bit reads, selector signs, lookup refreshes) is
//! checked against its box margin; decisions whose two-sided failure
//! probability exceeds `2^-32`, and blocks consumed outside their carry
//! budget, raise a [`NoiseFlag`].

use std::fmt;
use std::sync::{Arc, Mutex};

use crate::batch::{Stats, StatsSnapshot};
use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::{blocks_to_raw, encode_raw, raw_to_blocks, FixedPoint, FixedPointFormat};
use crate::params::{
    GadgetParams, KeySpec, ParameterSet, BLOCK_DELTA_LOG, BLOCK_MAX_VAL, CLEAN_MAX_VAL,
};
use crate::wop::LookupTable;

/// Distinct payload values a block word can hold (message, carries and the
/// padding bit).
const PAYLOAD_SPACE: u64 = 1 << (64 - BLOCK_DELTA_LOG);

/// Two-sided z-score whose Gaussian tail is `2^-32`; decisions with less
/// headroom than this are flagged.
pub const Z_FAIL: f64 = 6.34;

/// Primitive classes that produced a value, as a small bit set.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance(u8);

impl Provenance {
    pub const FRESH: Self = Self(1);
    pub const TRIVIAL: Self = Self(1 << 1);
    pub const LINEAR: Self = Self(1 << 2);
    pub const PBS: Self = Self(1 << 3);
    pub const WOP: Self = Self(1 << 4);

    pub const fn with(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub const fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }
}

impl fmt::Debug for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(Provenance, &str); 5] = [
            (Provenance::FRESH, "fresh"),
            (Provenance::TRIVIAL, "trivial"),
            (Provenance::LINEAR, "linear"),
            (Provenance::PBS, "pbs"),
            (Provenance::WOP, "wop"),
        ];
        let mut wrote = false;
        for (bit, name) in NAMES {
            if self.contains(bit) {
                if wrote {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                wrote = true;
            }
        }
        if !wrote {
            f.write_str("none")?;
        }
        Ok(())
    }
}

/// Tracked phase-noise variance, torus-normalized (`q = 1`).
#[derive(Clone, Copy, Debug)]
pub struct NoiseEstimate {
    pub variance: f64,
    pub provenance: Provenance,
}

impl NoiseEstimate {
    pub const ZERO: Self = Self { variance: 0.0, provenance: Provenance::TRIVIAL };

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Mirror block: the value the payload grid would decrypt to plus the noise
/// a ciphertext on the same path would carry.
#[derive(Clone, Debug)]
pub struct MBlock {
    pub value: u64,
    pub noise: NoiseEstimate,
}

/// Fixed-point value over mirror blocks.
pub type MirrorValue = FixedPoint<MBlock>;

/// Headroom of one rounding decision: decision-point noise against the box
/// margin the rounding must stay inside.
#[derive(Clone, Copy, Debug)]
pub struct Decision {
    pub sigma: f64,
    pub margin: f64,
    pub fail_prob: f64,
}

impl Decision {
    pub fn z(&self) -> f64 {
        self.margin / self.sigma
    }

    pub fn flagged(&self) -> bool {
        self.z() < Z_FAIL
    }
}

/// Deviations recorded while mirroring a pipeline.
#[derive(Clone, Debug)]
pub enum NoiseFlag {
    /// A rounding decision whose failure probability exceeds `2^-32`.
    Decision { site: &'static str, decision: Decision },
    /// A block consumed with its value outside the consumer's budget.
    CarryOverflow { site: &'static str, value: u64 },
}

/// Two-sided Gaussian tail `P(|N(0,1)| > z)`.
pub fn gaussian_tail(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z >= 2.5 {
        // Asymptotic upper-tail series; relative error under 1e-2 here and
        // shrinking fast with z.
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        2.0 * phi * (1.0 / z - 1.0 / z.powi(3) + 3.0 / z.powi(5))
    } else {
        // Abramowitz-Stegun 7.1.26 rational fit of erfc.
        let x = z / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.327_591_1 * x);
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        poly * (-x * x).exp()
    }
}

fn digit_energy(base_log: u32) -> f64 {
    let b = (base_log as f64).exp2();
    (b * b + 2.0) / 12.0
}

fn dropped_scale(gadget: GadgetParams) -> f64 {
    (-2.0 * gadget.base_log as f64 * gadget.level_count as f64).exp2()
}

/// Switching `n_in` coefficients through a gadget-decomposed key: one key
/// sample per digit, plus the rounding left below the kept levels against a
/// binary secret of expected density one half.
fn keyswitch_variance(n_in: f64, spec: &KeySpec) -> f64 {
    let g = spec.gadget;
    let key_term = n_in * g.level_count as f64 * digit_energy(g.base_log) * spec.sigma * spec.sigma;
    let round_term = 0.5 * n_in * dropped_scale(g) / 12.0;
    key_term + round_term
}

/// One external product of a rank-one ring accumulator with a gadget row of
/// per-coefficient variance `v_row`.
fn external_product_variance(degree: f64, gadget: GadgetParams, v_row: f64) -> f64 {
    let main = gadget.level_count as f64 * 2.0 * degree * digit_energy(gadget.base_log) * v_row;
    let round = (0.5 * degree + 1.0) * dropped_scale(gadget) / 12.0;
    main + round
}

/// Rounding a mask onto the `2N`-step grid ahead of a blind rotation;
/// `key_weight` is the expected number of set bits in the level-0 key.
fn mod_switch_variance(key_weight: f64, two_n: f64) -> f64 {
    (key_weight + 1.0) / (two_n * two_n * 12.0)
}

/// Variance constants for one parameter set, torus-normalized.
///
/// Estimates stay on the safe side: gadget digits at full energy, binary
/// secrets at density one half, and packed-tree leaf tiers summed without
/// cancellation.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    /// Fresh level-1 encryption.
    pub v_fresh: f64,
    /// Block bootstrap output (blind rotation through the general-purpose key).
    pub v_block_pbs: f64,
    /// Level-1 to level-0 switch on the general-purpose row.
    pub v_ks_gpbs: f64,
    /// Level-1 to level-0 switch on the CMux-grade row.
    pub v_ks_cmux: f64,
    /// Modulus switch into the level-1 ring.
    pub v_ms_l1: f64,
    /// Modulus switch into the level-2 ring.
    pub v_ms_l2: f64,
    /// Level-2 bootstrap output.
    pub v_pbs_l2: f64,
    /// Private functional key switch output, per selector coefficient.
    pub v_pfks: f64,
    /// Per-coefficient variance of a freshly built selector.
    pub v_ggsw: f64,
    /// One full-energy CMux step on a packed accumulator.
    pub v_cmux: f64,
    /// One leaf-tier CMux over block-scale plaintext columns.
    pub v_cmux_leaf: f64,
    log2_n1: usize,
}

impl NoiseModel {
    pub fn new(params: &ParameterSet) -> Self {
        let n0 = params.level0_lwe_dim as f64;
        let n1 = params.level1_lwe_dim as f64;
        let big_n1 = params.level1_poly_degree as f64;
        let n2 = params.level2_lwe_dim as f64;
        let big_n2 = params.level2_poly_degree as f64;
        let weight0 = params.level0_key_weight.map_or(0.5 * n0, |w| w as f64);

        let v_block_pbs = n0
            * external_product_variance(
                big_n1,
                params.bk_gpbs.gadget,
                params.bk_gpbs.sigma * params.bk_gpbs.sigma,
            );
        let v_pbs_l2 = n0
            * external_product_variance(
                big_n2,
                params.bk_l2.gadget,
                params.bk_l2.sigma * params.bk_l2.sigma,
            );
        let v_pfks = keyswitch_variance(n2 + 1.0, &params.pfks);
        let v_ggsw = v_pbs_l2 + v_pfks;
        // Leaf columns hold exact block-scale words, so a pair difference
        // decomposes into a single digit of magnitude at most twice the
        // largest clean-value gap.
        let leaf_digit = 2.0 * f64::from(CLEAN_MAX_VAL);
        let v_cmux_leaf = 2.0 * big_n1 * leaf_digit * leaf_digit * v_ggsw;

        Self {
            v_fresh: params.sigma_l1 * params.sigma_l1,
            v_block_pbs,
            v_ks_gpbs: keyswitch_variance(n1, &params.ksk_gpbs),
            v_ks_cmux: keyswitch_variance(n1, &params.ksk_cmux),
            v_ms_l1: mod_switch_variance(weight0, 2.0 * big_n1),
            v_ms_l2: mod_switch_variance(weight0, 2.0 * big_n2),
            v_pbs_l2,
            v_pfks,
            v_ggsw,
            v_cmux: external_product_variance(big_n1, params.bk_cmux.gadget, v_ggsw),
            v_cmux_leaf,
            log2_n1: params.level1_poly_degree.trailing_zeros() as usize,
        }
    }

    fn decision(&self, variance: f64, margin: f64) -> Decision {
        let sigma = variance.sqrt();
        Decision { sigma, margin, fail_prob: gaussian_tail(margin / sigma) }
    }

    /// Box decision of a four-bit block bootstrap on input variance `v_in`.
    pub fn block_pbs_decision(&self, v_in: f64) -> Decision {
        self.decision(v_in + self.v_ks_gpbs + self.v_ms_l1, 0.015_625)
    }

    /// Box decision of a two-bit read on a value rescaled by four: the bit
    /// peel inside a full-precision lookup and the refresh of its outputs.
    pub fn rescaled_read_decision(&self, v_in: f64) -> Decision {
        self.decision(16.0 * v_in + self.v_ks_gpbs + self.v_ms_l1, 0.062_5)
    }

    /// Sign read turning one extracted bit into a selector at level 2.
    pub fn selector_sign_decision(&self, v_in: f64) -> Decision {
        self.decision(v_in + self.v_ks_cmux + self.v_ms_l2, 0.25)
    }

    /// Sequential CMux chain on one accumulator grows linearly.
    pub fn cmux_chain_variance(&self, len: usize) -> f64 {
        len as f64 * self.v_cmux
    }

    /// Per-output variance of a packed tree lookup over `input_bits`.
    ///
    /// Low bits drive ring rotations, one full CMux each; bits past the
    /// ring size select over a tree of plaintext leaf columns. The leaf
    /// tier is summed outright instead of collapsing to the worst child,
    /// so the estimate keeps its dependence on the tree size and grows
    /// with `2^(input_bits - log2 N)` once the tree appears. Interior
    /// levels add one full CMux each.
    pub fn wop_output_variance(&self, input_bits: usize) -> f64 {
        let low = input_bits.min(self.log2_n1);
        let high = input_bits - low;
        let leaf_cmuxes = if high == 0 { 0.0 } else { ((high - 1).min(62) as f64).exp2() };
        let interior = high.saturating_sub(1) as f64;
        leaf_cmuxes * self.v_cmux_leaf + (interior + low as f64) * self.v_cmux
    }

    /// Refresh decision for lookup outputs of the given input width.
    pub fn wop_refresh_decision(&self, input_bits: usize) -> Decision {
        self.rescaled_read_decision(self.wop_output_variance(input_bits))
    }
}

/// Drop-in plaintext engine: same trait, same schedules, tracked noise.
pub struct MirrorEngine {
    model: NoiseModel,
    stats: Arc<Stats>,
    flags: Mutex<Vec<NoiseFlag>>,
}

impl MirrorEngine {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            model: NoiseModel::new(params),
            stats: Arc::new(Stats::default()),
            flags: Mutex::new(Vec::new()),
        }
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    /// Counter parity with the encrypted engine holds for bootstrap, key
    /// switch and lookup counts; chunk geometry is scheduler-specific.
    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn raw_stats(&self) -> &Arc<Stats> {
        &self.stats
    }

    /// Flags raised so far, oldest first.
    pub fn flags(&self) -> Vec<NoiseFlag> {
        self.flags.lock().expect("flags").clone()
    }

    pub fn take_flags(&self) -> Vec<NoiseFlag> {
        std::mem::take(&mut *self.flags.lock().expect("flags"))
    }

    fn flag(&self, flag: NoiseFlag) {
        self.flags.lock().expect("flags").push(flag);
    }

    /// Mirror of block encryption: fresh noise, worst-case carry metadata.
    pub fn fresh_raw(&self, raw: i128, fmt: FixedPointFormat) -> MirrorValue {
        let vals = raw_to_blocks(raw, &fmt);
        let blocks = vals
            .iter()
            .map(|&v| MBlock {
                value: u64::from(v),
                noise: NoiseEstimate {
                    variance: self.model.v_fresh,
                    provenance: Provenance::FRESH,
                },
            })
            .collect();
        MirrorValue::from_parts(fmt, blocks, vec![CLEAN_MAX_VAL; vals.len()])
    }

    pub fn fresh_value(&self, value: f64, fmt: FixedPointFormat) -> Result<MirrorValue> {
        Ok(self.fresh_raw(encode_raw(value, &fmt)?, fmt))
    }

    /// Mirror of block decryption: the four-bit value each block shows.
    pub fn read_blocks(&self, v: &MirrorValue) -> Vec<u8> {
        v.blocks.iter().map(|b| (b.value & u64::from(BLOCK_MAX_VAL)) as u8).collect()
    }

    pub fn read_raw(&self, v: &MirrorValue) -> i128 {
        let vals = self.read_blocks(v);
        debug_assert!(vals.iter().all(|&x| x <= CLEAN_MAX_VAL), "reading unpropagated blocks");
        blocks_to_raw(&vals, &v.format)
    }

    pub fn read_value(&self, v: &MirrorValue) -> f64 {
        self.read_raw(v) as f64 * (-(v.format.fractional_bits as f64)).exp2()
    }
}

impl BlockEngine for MirrorEngine {
    type Block = MBlock;

    fn trivial_block(&self, v: u64) -> MBlock {
        debug_assert!(v <= u64::from(BLOCK_MAX_VAL));
        MBlock { value: v & (PAYLOAD_SPACE - 1), noise: NoiseEstimate::ZERO }
    }

    fn add(&self, a: &MBlock, b: &MBlock) -> MBlock {
        MBlock {
            value: (a.value + b.value) & (PAYLOAD_SPACE - 1),
            noise: NoiseEstimate {
                variance: a.noise.variance + b.noise.variance,
                provenance: a.noise.provenance.with(b.noise.provenance).with(Provenance::LINEAR),
            },
        }
    }

    fn add_plain(&self, a: &MBlock, v: u64) -> MBlock {
        MBlock {
            value: (a.value + (v & (PAYLOAD_SPACE - 1))) & (PAYLOAD_SPACE - 1),
            noise: NoiseEstimate {
                variance: a.noise.variance,
                provenance: a.noise.provenance.with(Provenance::LINEAR),
            },
        }
    }

    fn sub_from_plain(&self, v: u64, a: &MBlock) -> MBlock {
        MBlock {
            value: ((v & (PAYLOAD_SPACE - 1)) + PAYLOAD_SPACE - a.value) & (PAYLOAD_SPACE - 1),
            noise: NoiseEstimate {
                variance: a.noise.variance,
                provenance: a.noise.provenance.with(Provenance::LINEAR),
            },
        }
    }

    fn scalar_mul(&self, a: &MBlock, k: u64) -> MBlock {
        MBlock {
            value: a.value.wrapping_mul(k) & (PAYLOAD_SPACE - 1),
            noise: NoiseEstimate {
                variance: (k as f64) * (k as f64) * a.noise.variance,
                provenance: a.noise.provenance.with(Provenance::LINEAR),
            },
        }
    }

    fn pbs_batch(&self, inputs: &[(MBlock, BlockLut)]) -> Vec<MBlock> {
        if inputs.is_empty() {
            return Vec::new();
        }
        self.stats.record_stage_direct(inputs.len() as u64);
        inputs
            .iter()
            .map(|(b, lut)| {
                let d = self.model.block_pbs_decision(b.noise.variance);
                if d.flagged() {
                    self.flag(NoiseFlag::Decision { site: "block pbs", decision: d });
                }
                let value = if b.value <= u64::from(BLOCK_MAX_VAL) {
                    lut.table[b.value as usize]
                } else {
                    // Padding bit set: the rotation reads the mirrored box
                    // and the extracted word comes out negated.
                    self.flag(NoiseFlag::CarryOverflow { site: "block pbs", value: b.value });
                    (PAYLOAD_SPACE - lut.table[(b.value - PAYLOAD_SPACE / 2) as usize])
                        & (PAYLOAD_SPACE - 1)
                };
                MBlock {
                    value,
                    noise: NoiseEstimate {
                        variance: self.model.v_block_pbs,
                        provenance: Provenance::PBS,
                    },
                }
            })
            .collect()
    }

    fn wop_lookup(&self, blocks: &[MBlock], table: &LookupTable) -> Result<Vec<MBlock>> {
        let w = table.input_bits;
        let need = w.div_ceil(2);
        if blocks.len() != need {
            return Err(Error::FormatMismatch(format!(
                "{w}-bit lookup needs {need} blocks, got {}",
                blocks.len()
            )));
        }
        let mut index = 0u64;
        for (i, b) in blocks.iter().enumerate() {
            if b.value > u64::from(CLEAN_MAX_VAL) {
                self.flag(NoiseFlag::CarryOverflow { site: "lookup input", value: b.value });
            }
            let d = self.model.rescaled_read_decision(b.noise.variance);
            if d.flagged() {
                self.flag(NoiseFlag::Decision { site: "lookup bit extract", decision: d });
            }
            index |= (b.value & u64::from(CLEAN_MAX_VAL)) << (2 * i);
        }
        index &= (1u64 << w) - 1;
        let sel = self.model.selector_sign_decision(self.model.v_block_pbs);
        if sel.flagged() {
            self.flag(NoiseFlag::Decision { site: "selector sign", decision: sel });
        }
        let refresh = self.model.wop_refresh_decision(w);
        if refresh.flagged() {
            self.flag(NoiseFlag::Decision { site: "lookup refresh", decision: refresh });
        }
        self.stats.record_wop(blocks.len() as u64, w as u64, 2 * w as u64);
        self.stats.record_stage_direct(table.output_entries.len() as u64);
        Ok(table
            .output_entries
            .iter()
            .map(|entry| {
                let word = entry[index as usize];
                // Refresh reads the top two bits of the word rescaled by
                // four; block-valued entries decode exactly.
                let value = ((word >> (BLOCK_DELTA_LOG - 1)).wrapping_add(1) >> 1)
                    & u64::from(CLEAN_MAX_VAL);
                MBlock {
                    value,
                    noise: NoiseEstimate {
                        variance: self.model.v_block_pbs,
                        provenance: Provenance::PBS.with(Provenance::WOP),
                    },
                }
            })
            .collect())
    }
}

/// Runs `f` over a fresh mirror engine for the given parameters.
pub fn mirror_eval<T>(params: &ParameterSet, f: impl FnOnce(&MirrorEngine) -> T) -> T {
    f(&MirrorEngine::new(params))
}

/// Runs `f` over a fresh mirror engine and returns the flags it raised.
pub fn noise_track<T>(
    params: &ParameterSet,
    f: impl FnOnce(&MirrorEngine) -> T,
) -> (T, Vec<NoiseFlag>) {
    let engine = MirrorEngine::new(params);
    let out = f(&engine);
    let flags = engine.take_flags();
    (out, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchPolicy;
    use crate::cipher::Level;
    use crate::engine::EncryptedEngine;
    use crate::fixed::execute_mul;
    use crate::fixed::{cmp_ge, schedule_mul, select, MulHints};
    use crate::testutil::toy_keys_arc;
    use crate::torus::decode_plain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_mirror() -> MirrorEngine {
        MirrorEngine::new(&ParameterSet::toy())
    }

    #[test]
    fn tail_probability_reference_points() {
        let cases = [(1.0, 0.3173), (2.0, 0.0455), (4.0, 6.334e-5), (6.34, 2.32e-10)];
        for (z, want) in cases {
            let got = gaussian_tail(z);
            assert!((got - want).abs() <= 0.05 * want, "tail({z}) = {got:e}, want ~{want:e}");
        }
        assert!((gaussian_tail(Z_FAIL) / 2.0f64.powi(-32) - 1.0).abs() < 0.05);
    }

    #[test]
    fn variance_monotone_under_linear_ops_and_reset_by_pbs() {
        let e = toy_mirror();
        let v0 = e.model().v_fresh;
        let a = MBlock { value: 2, noise: NoiseEstimate { variance: v0, provenance: Provenance::FRESH } };
        let b = e.add(&a, &a);
        assert_eq!(b.noise.variance, 2.0 * v0);
        let c = e.scalar_mul(&b, 3);
        assert_eq!(c.noise.variance, 18.0 * v0);
        let d = e.add_plain(&c, 1);
        assert_eq!(d.noise.variance, c.noise.variance);
        assert!(d.noise.provenance.contains(Provenance::LINEAR));
        let out = &e.pbs_batch(&[(d, BlockLut::univariate(|m| m & 3))])[0];
        assert_eq!(out.noise.variance, e.model().v_block_pbs);
        assert_eq!(out.noise.provenance, Provenance::PBS);
        assert!(e.flags().is_empty());
    }

    #[test]
    fn paper_lookup_width_thresholds() {
        let m = NoiseModel::new(&ParameterSet::paper());
        for w in [4, 8, 16, 20] {
            let d = m.wop_refresh_decision(w);
            assert!(!d.flagged(), "width {w} unexpectedly flagged: z = {}", d.z());
        }
        for w in [25, 30] {
            let d = m.wop_refresh_decision(w);
            assert!(d.flagged(), "width {w} should flag: z = {}", d.z());
        }
        // The four-bit bootstrap sits just under the line even with a full
        // carry load: that is the operating point the parameters target.
        let d = m.block_pbs_decision(15.0 * m.v_block_pbs);
        assert!(!d.flagged());
        assert!(d.z() < 8.0, "unexpected slack: z = {}", d.z());
        // Chains grow linearly; the tree term grows much faster once the
        // width passes the ring size.
        let one = m.cmux_chain_variance(1);
        assert!((m.cmux_chain_variance(64) - 64.0 * one).abs() < 1e-6 * one);
        assert!(m.wop_output_variance(25) > 8.0 * m.wop_output_variance(20));
    }

    #[test]
    fn selector_switch_needs_the_fine_grained_row() {
        let mut p = ParameterSet::paper();
        p.pfks = KeySpec::new(6, 3, 2.0f64.powi(-15));
        let coarse = NoiseModel::new(&p);
        assert!(coarse.wop_refresh_decision(8).flagged());
        let fine = NoiseModel::new(&ParameterSet::paper());
        assert!(!fine.wop_refresh_decision(8).flagged());
    }

    #[test]
    fn fresh_read_roundtrip() {
        let e = toy_mirror();
        let fmt = FixedPointFormat::signed(6, 6);
        for x in [0.0, 1.5, -2.25, 7.984375, -8.0] {
            let v = e.fresh_value(x, fmt).unwrap();
            assert!(v.blocks.iter().all(|b| b.noise.variance == e.model().v_fresh));
            assert_eq!(e.read_value(&v), x);
        }
    }

    #[test]
    fn block_ops_match_encrypted_engine() {
        let keys = toy_keys_arc();
        let enc = EncryptedEngine::new(
            keys.clone(),
            BatchPolicy { worker_count: 2, ..BatchPolicy::default() },
        )
        .unwrap();
        let mir = MirrorEngine::new(&keys.bundle.params);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dec = |ct: &_| decode_plain(keys.bundle.decrypt_lwe(ct), 5) & 0xF;

        let pairs = [(9u64, 5u64), (3, 3), (15, 1)];
        let double = BlockLut::univariate(|m| (2 * m) & 15);
        for (x, y) in pairs {
            let (ea, eb) = (
                keys.bundle.encrypt_lwe(x << BLOCK_DELTA_LOG, Level::L1, &mut rng),
                keys.bundle.encrypt_lwe(y << BLOCK_DELTA_LOG, Level::L1, &mut rng),
            );
            let (ma, mb) = (mir.trivial_block(x), mir.trivial_block(y));
            let e_out = [
                enc.add(&ea, &eb),
                enc.add_plain(&ea, 3),
                enc.sub_from_plain(9, &eb),
                enc.scalar_mul(&eb, 3),
            ];
            let m_out = [
                mir.add(&ma, &mb),
                mir.add_plain(&ma, 3),
                mir.sub_from_plain(9, &mb),
                mir.scalar_mul(&mb, 3),
            ];
            for (ec, mc) in e_out.iter().zip(&m_out) {
                assert_eq!(dec(ec), mc.value & 15);
            }
            // Bootstrap both the in-range sum and an overflowed packing to
            // pin down the padding-bit behavior.
            let e_pbs = enc.pbs_batch(&[
                (e_out[0].clone(), double),
                (enc.scalar_mul(&ea, 2), double),
            ]);
            let m_pbs = mir.pbs_batch(&[
                (m_out[0].clone(), double),
                (mir.scalar_mul(&ma, 2), double),
            ]);
            for (ec, mc) in e_pbs.iter().zip(&m_pbs) {
                assert_eq!(dec(ec), mc.value & 15);
            }
        }
        // 9 * 2 = 18, 15 * 2 = 30 and the sum 15 + 1 = 16 overflow the box.
        let overflows = mir
            .flags()
            .iter()
            .filter(|f| matches!(f, NoiseFlag::CarryOverflow { site: "block pbs", .. }))
            .count();
        assert_eq!(overflows, 3);

        let table = LookupTable::from_fn(6, 6, |x| x * x).unwrap();
        let x = 47u64;
        let e_blocks: Vec<_> = (0..3)
            .map(|i| keys.bundle.encrypt_lwe(((x >> (2 * i)) & 3) << BLOCK_DELTA_LOG, Level::L1, &mut rng))
            .collect();
        let m_blocks: Vec<_> = (0..3).map(|i| mir.trivial_block((x >> (2 * i)) & 3)).collect();
        let e_out = enc.wop_lookup(&e_blocks, &table).unwrap();
        let m_out = mir.wop_lookup(&m_blocks, &table).unwrap();
        for (ec, mc) in e_out.iter().zip(&m_out) {
            assert_eq!(dec(ec), mc.value);
        }
        assert!(mir.wop_lookup(&m_blocks[..2], &table).is_err());

        let es = enc.stats();
        let ms = mir.stats();
        assert_eq!(es.pbs_l1, ms.pbs_l1);
        assert_eq!(es.pbs_l2, ms.pbs_l2);
        assert_eq!(es.keyswitches, ms.keyswitches);
        assert_eq!(es.wop_lookups, ms.wop_lookups);
        assert_eq!(es.requests, ms.requests);
    }

    #[test]
    fn fixed_pipeline_matches_encrypted_engine() {
        let keys = toy_keys_arc();
        let enc = EncryptedEngine::new(
            keys.clone(),
            BatchPolicy { worker_count: 2, ..BatchPolicy::default() },
        )
        .unwrap();
        let mir = MirrorEngine::new(&keys.bundle.params);
        let fmt = FixedPointFormat::unsigned(4, 4);
        let schedule = schedule_mul(
            fmt,
            fmt,
            fmt,
            &MulHints {
                a_bound_raw: Some(52),
                b_bound_raw: Some(40),
                exact_truncation: true,
            },
        )
        .unwrap();

        fn run<E: BlockEngine>(
            e: &E,
            schedule: &crate::fixed::MulSchedule,
            fmt: FixedPointFormat,
        ) -> (FixedPoint<E::Block>, FixedPoint<E::Block>) {
            let a = FixedPoint::from_plain(e, 0b0011_0100, fmt); // 3.25
            let b = FixedPoint::from_plain(e, 0b0010_1000, fmt); // 2.5
            let prod = execute_mul(e, &a, &b, schedule).unwrap();
            let ge = cmp_ge(e, &prod, &a).unwrap();
            let picked = select(e, &ge, &prod, &a).unwrap();
            (prod, picked)
        }

        let (e_prod, e_picked) = run(&enc, &schedule, fmt);
        let (m_prod, m_picked) = run(&mir, &schedule, fmt);
        assert_eq!(e_prod.decrypt_raw(&keys.bundle), mir.read_raw(&m_prod));
        assert_eq!(e_picked.decrypt_raw(&keys.bundle), mir.read_raw(&m_picked));
        assert_eq!(mir.read_raw(&m_prod), 0b1000_0010); // 3.25 * 2.5 = 8.125
        assert_eq!(enc.stats().pbs_l1, mir.stats().pbs_l1);
        assert!(mir.flags().is_empty());
    }
}
