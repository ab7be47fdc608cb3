//! Encrypted exp, GELU, and reciprocal square root.
//!
//! All three share one shape: a wide WoP-PBS lookup supplies the dominant
//! term (plus a packed slope where one is needed), block arithmetic applies
//! a first-order correction for the bits the lookup cannot afford, and
//! selector bootstraps resolve range splits. Tables are built once as
//! [`GeneratedLut`] values so the mirror and the encrypted engine read
//! identical words.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::{
    add, drop_high_blocks, drop_low_blocks, execute_mul_many, mul_by_bit_many, negate,
    propagate_carries_many, refresh_many, schedule_mul, select_many, shift_blocks_left,
    zero_extend, FixedPoint, FixedPointFormat, MulHints, Signedness, FMT_SOFTMAX, FMT_VARIANCE,
};
use crate::mirror::{MirrorEngine, MirrorValue};
use crate::params::{ParameterSet, CLEAN_MAX_VAL, MAX_LOOKUP_BITS};
use crate::wop::LookupTable;

/// Exp arguments are nonnegative (12, 20) values; anything at or above the
/// flush point decodes to zero.
pub const FMT_EXP_ARG: FixedPointFormat = FixedPointFormat::unsigned(12, 20);

/// Absolute error ceiling for the negative-exponential sweep (2^-18).
pub const TARGET_EXP_ABS: f64 = 1.0 / 262144.0;
/// Absolute error ceiling for the GELU sweep (2^-16).
pub const TARGET_GELU_ABS: f64 = 1.0 / 65536.0;
/// Relative error ceiling for the reciprocal square root sweep (2^-14).
pub const TARGET_INV_SQRT_REL: f64 = 1.0 / 16384.0;

const ROUNDING: &str = "round-half-even";
const EXP_SOURCE: &str = "exp-neg";
const GELU_SOURCE: &str = "gelu";
const INV_SQRT_SOURCE: &str = "inv-sqrt";

fn quantize(v: f64, frac_bits: u32) -> u64 {
    debug_assert!(v >= 0.0);
    (v * (frac_bits as f64).exp2()).round_ties_even() as u64
}

fn phi_cdf(t: f64) -> f64 {
    0.5 * (1.0 + libm::erf(t / SQRT_2))
}

fn phi_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// `x * Phi(x)` against the exact Gaussian CDF.
pub fn gelu_reference(x: f64) -> f64 {
    x * phi_cdf(x)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn lut_digest<C: Serialize>(source: &str, cfg: &C) -> u64 {
    let json = serde_json::to_string(cfg).expect("lut config serializes");
    fnv1a(fnv1a(FNV_OFFSET, source.as_bytes()), json.as_bytes())
}

/// Bit split of the exp argument, most significant first: `x0` flushes the
/// result to zero, `x1` drives the lookup, `x2` is corrected linearly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpSplit {
    pub x0_bits: u32,
    pub x1_bits: u32,
    pub x2_bits: u32,
    /// Fraction width of the looked-up value before the final truncation.
    pub y1_frac_bits: u32,
}

impl Default for ExpSplit {
    fn default() -> Self {
        Self { x0_bits: 6, x1_bits: 20, x2_bits: 6, y1_frac_bits: 26 }
    }
}

impl ExpSplit {
    pub fn check(&self) -> Result<()> {
        for w in [self.x0_bits, self.x1_bits, self.x2_bits] {
            if w == 0 || w % 2 != 0 {
                return Err(Error::config(format!("exp split width {w} must be even and nonzero")));
            }
        }
        if self.x0_bits + self.x1_bits + self.x2_bits != FMT_EXP_ARG.total_bits() {
            return Err(Error::config(format!(
                "exp split {}+{}+{} does not cover {} bits",
                self.x0_bits,
                self.x1_bits,
                self.x2_bits,
                FMT_EXP_ARG.total_bits()
            )));
        }
        if self.x1_bits as usize > MAX_LOOKUP_BITS {
            return Err(Error::config(format!("exp lookup width {} too wide", self.x1_bits)));
        }
        if self.x0_bits > 10 {
            return Err(Error::config("flush test folds x0 into a single bootstrap".to_string()));
        }
        if self.x2_bits > FMT_EXP_ARG.fractional_bits {
            return Err(Error::config("linear window wider than the fraction".to_string()));
        }
        if self.y1_frac_bits % 2 != 0
            || self.y1_frac_bits < FMT_EXP_ARG.fractional_bits
            || self.y1_frac_bits > 60
        {
            return Err(Error::config(format!("exp table fraction {} unusable", self.y1_frac_bits)));
        }
        Ok(())
    }

    fn y1_fmt(&self) -> FixedPointFormat {
        FixedPointFormat::unsigned(2, self.y1_frac_bits)
    }
}

/// GELU lookup shape over `t = |x|`: `delta_bits` low bits are corrected
/// with the packed slope, values at or beyond `passthrough` copy the input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeluSplit {
    pub t_int_bits: u32,
    pub t_frac_bits: u32,
    pub delta_bits: u32,
    pub passthrough: u32,
    pub main_fmt: FixedPointFormat,
    pub slope_fmt: FixedPointFormat,
}

impl Default for GeluSplit {
    fn default() -> Self {
        Self {
            t_int_bits: 4,
            t_frac_bits: 16,
            delta_bits: 4,
            passthrough: 16,
            main_fmt: FixedPointFormat::unsigned(10, 22),
            slope_fmt: FixedPointFormat::unsigned(2, 10),
        }
    }
}

impl GeluSplit {
    pub fn check(&self) -> Result<()> {
        for w in [self.t_int_bits, self.t_frac_bits, self.delta_bits] {
            if w % 2 != 0 {
                return Err(Error::config(format!("gelu split width {w} must be even")));
            }
        }
        let t_bits = self.t_int_bits + self.t_frac_bits;
        if self.t_frac_bits == 0 || t_bits as usize > MAX_LOOKUP_BITS {
            return Err(Error::config(format!("gelu lookup width {t_bits} unusable")));
        }
        if !(2..=10).contains(&self.t_int_bits) {
            return Err(Error::config(format!("gelu integer window {} unusable", self.t_int_bits)));
        }
        if self.delta_bits + self.t_frac_bits != FMT_SOFTMAX.fractional_bits {
            return Err(Error::config("gelu split does not cover the fraction".to_string()));
        }
        if self.passthrough != 1 << self.t_int_bits {
            return Err(Error::config(format!(
                "passthrough {} is not 2^{}",
                self.passthrough, self.t_int_bits
            )));
        }
        for f in [&self.main_fmt, &self.slope_fmt] {
            if f.signedness != Signedness::Unsigned {
                return Err(Error::config("gelu table formats are unsigned".to_string()));
            }
            f.check()?;
            if f.fractional_bits % 2 != 0 {
                return Err(Error::config("gelu table fraction must be even".to_string()));
            }
        }
        if self.main_fmt.fractional_bits < FMT_SOFTMAX.fractional_bits {
            return Err(Error::config("gelu main fraction narrower than the input".to_string()));
        }
        if self.main_fmt.integer_bits <= self.t_int_bits {
            return Err(Error::config("gelu main range cannot hold the passthrough".to_string()));
        }
        if self.slope_fmt.integer_bits == 0 {
            return Err(Error::config("gelu slope exceeds one".to_string()));
        }
        if self.main_fmt.total_bits() + self.slope_fmt.total_bits() > 64 {
            return Err(Error::config("gelu table entry exceeds one word".to_string()));
        }
        Ok(())
    }
}

/// One octave band of the reciprocal square root input, `[2^log2_lo,
/// 2^log2_hi)`. The 20-bit lookup window starts at raw bit `t_lsb`;
/// `delta_bits` below it feed the linear correction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvSqrtRegion {
    pub log2_lo: i32,
    pub log2_hi: i32,
    pub t_lsb: u32,
    pub delta_bits: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvSqrtConfig {
    pub regions: [InvSqrtRegion; 4],
    pub t_bits: u32,
    pub f_fmt: FixedPointFormat,
    /// Width of the packed slope entry and its fraction split.
    pub g_bits: u32,
    pub g_frac_bits: u32,
}

impl Default for InvSqrtConfig {
    fn default() -> Self {
        Self {
            regions: [
                InvSqrtRegion { log2_lo: -16, log2_hi: -12, t_lsb: 8, delta_bits: 0 },
                InvSqrtRegion { log2_lo: -12, log2_hi: -6, t_lsb: 14, delta_bits: 2 },
                InvSqrtRegion { log2_lo: -6, log2_hi: 2, t_lsb: 22, delta_bits: 4 },
                InvSqrtRegion { log2_lo: 2, log2_hi: 12, t_lsb: 32, delta_bits: 6 },
            ],
            t_bits: 20,
            f_fmt: FixedPointFormat::unsigned(10, 26),
            g_bits: 20,
            g_frac_bits: 4,
        }
    }
}

impl InvSqrtConfig {
    /// Exponent folding the region's delta unit into the slope entry so
    /// that `G * delta` lands directly in output raw units times
    /// `2^g_frac_bits`.
    fn scale_log(&self, r: &InvSqrtRegion) -> i64 {
        i64::from(r.t_lsb) - i64::from(r.delta_bits)
            - (i64::from(FMT_VARIANCE.fractional_bits) - i64::from(self.f_fmt.fractional_bits))
            + i64::from(self.g_frac_bits)
    }

    pub fn check(&self) -> Result<()> {
        if self.t_bits == 0 || self.t_bits % 2 != 0 || self.t_bits as usize + 2 > MAX_LOOKUP_BITS {
            return Err(Error::config(format!("window width {} unusable", self.t_bits)));
        }
        if self.f_fmt.signedness != Signedness::Unsigned {
            return Err(Error::config("inv-sqrt output format is unsigned".to_string()));
        }
        self.f_fmt.check()?;
        if self.f_fmt.fractional_bits % 2 != 0 {
            return Err(Error::config("inv-sqrt output fraction must be even".to_string()));
        }
        if self.g_bits == 0
            || self.g_bits % 2 != 0
            || self.g_frac_bits % 2 != 0
            || self.g_frac_bits >= self.g_bits
        {
            return Err(Error::config(format!(
                "slope split {}/{} unusable",
                self.g_bits, self.g_frac_bits
            )));
        }
        if self.f_fmt.total_bits() + self.g_bits > 64 {
            return Err(Error::config("inv-sqrt table entry exceeds one word".to_string()));
        }
        let max_delta = self.regions.iter().map(|r| r.delta_bits).max().unwrap();
        if self.g_bits + max_delta - self.g_frac_bits > self.f_fmt.total_bits() {
            return Err(Error::config("correction wider than the output".to_string()));
        }
        let total = FMT_VARIANCE.total_bits() as i32;
        let frac = FMT_VARIANCE.fractional_bits as i32;
        if self.regions[3].log2_hi + frac != total {
            return Err(Error::config("top region must end at the format ceiling".to_string()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.log2_lo >= r.log2_hi {
                return Err(Error::config(format!("region {i} is empty")));
            }
            if i + 1 < self.regions.len() && self.regions[i + 1].log2_lo != r.log2_hi {
                return Err(Error::config(format!("region {i} does not meet its neighbour")));
            }
            let floor = r.log2_lo + frac;
            if floor < 0 || floor % 2 != 0 {
                return Err(Error::config(format!("region {i} floor bit {floor} unusable")));
            }
            if r.t_lsb % 2 != 0 || r.delta_bits % 2 != 0 {
                return Err(Error::config(format!("region {i} window must be block aligned")));
            }
            if r.t_lsb > floor as u32 {
                return Err(Error::config(format!("region {i} window starts above its floor")));
            }
            if r.delta_bits > r.t_lsb.min(8) {
                return Err(Error::config(format!("region {i} correction span too wide")));
            }
            if r.t_lsb + self.t_bits > total as u32 {
                return Err(Error::config(format!("region {i} window passes the top bit")));
            }
            if (r.log2_hi + frac) as u32 > r.t_lsb + self.t_bits {
                return Err(Error::config(format!("region {i} window misses its ceiling")));
            }
            if r.delta_bits > 0 && self.scale_log(r) < 0 {
                return Err(Error::config(format!("region {i} slope scale underflows")));
            }
        }
        for r in 1..self.regions.len() {
            let lo = (self.regions[r].log2_lo + frac) / 2;
            let hi = if r + 1 < self.regions.len() {
                (self.regions[r + 1].log2_lo + frac) / 2
            } else {
                FMT_VARIANCE.block_count() as i32
            };
            if !(1..=5).contains(&(hi - lo)) {
                return Err(Error::config(format!("region {r} selector span unusable")));
            }
        }
        Ok(())
    }
}

/// Shapes for all three nonlinear evaluators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionEvalConfig {
    pub exp: ExpSplit,
    pub gelu: GeluSplit,
    pub inv_sqrt: InvSqrtConfig,
}

impl FunctionEvalConfig {
    pub fn check(&self) -> Result<()> {
        self.exp.check()?;
        self.gelu.check()?;
        self.inv_sqrt.check()
    }
}

/// A lookup table plus the provenance needed to reproduce it bit for bit.
#[derive(Debug)]
pub struct GeneratedLut {
    pub table: LookupTable,
    pub source: &'static str,
    pub domain: String,
    pub rounding: &'static str,
    pub cfg_digest: u64,
}

fn require_source(lut: &GeneratedLut, want: &str) -> Result<()> {
    if lut.source == want {
        Ok(())
    } else {
        Err(Error::config(format!("lookup table built for {}, wanted {}", lut.source, want)))
    }
}

fn require_input<B: Clone + Send + Sync>(
    x: &FixedPoint<B>,
    fmt: FixedPointFormat,
    what: &str,
) -> Result<()> {
    if x.format != fmt {
        return Err(Error::FormatMismatch(format!("{what} expects {fmt:?}, got {:?}", x.format)));
    }
    x.require_clean(what)
}

pub fn build_exp_lut(cfg: &ExpSplit) -> Result<GeneratedLut> {
    cfg.check()?;
    let step = (cfg.x2_bits as f64 - FMT_EXP_ARG.fractional_bits as f64).exp2();
    let frac = cfg.y1_frac_bits;
    let table = LookupTable::from_fn(cfg.x1_bits as usize, cfg.y1_fmt().block_count(), |i| {
        quantize((-(i as f64) * step).exp(), frac)
    })?;
    let hi = ((cfg.x1_bits + cfg.x2_bits) as f64 - FMT_EXP_ARG.fractional_bits as f64).exp2();
    Ok(GeneratedLut {
        table,
        source: EXP_SOURCE,
        domain: format!("x in [0, {hi})"),
        rounding: ROUNDING,
        cfg_digest: lut_digest(EXP_SOURCE, cfg),
    })
}

pub fn build_gelu_lut(cfg: &GeluSplit) -> Result<GeneratedLut> {
    cfg.check()?;
    let t_bits = cfg.t_int_bits + cfg.t_frac_bits;
    let t_step = (-(cfg.t_frac_bits as f64)).exp2();
    let t_max = ((1u64 << t_bits) - 1) as f64 * t_step;
    if quantize(gelu_reference(t_max), cfg.main_fmt.fractional_bits)
        >= 1 << cfg.main_fmt.total_bits()
    {
        return Err(Error::range("gelu main entry overflows its format".to_string()));
    }
    // The slope Phi(t) + t*phi(t) peaks at t = sqrt(2).
    let peak = phi_cdf(SQRT_2) + SQRT_2 * phi_pdf(SQRT_2);
    if quantize(peak, cfg.slope_fmt.fractional_bits) >= 1 << cfg.slope_fmt.total_bits() {
        return Err(Error::range("gelu slope entry overflows its format".to_string()));
    }
    let main_shift = cfg.main_fmt.total_bits();
    let mf = cfg.main_fmt.fractional_bits;
    let sf = cfg.slope_fmt.fractional_bits;
    let out_blocks = ((main_shift + cfg.slope_fmt.total_bits()) / 2) as usize;
    let table = LookupTable::from_fn(t_bits as usize, out_blocks, |i| {
        let t = i as f64 * t_step;
        quantize(gelu_reference(t), mf) | (quantize(phi_cdf(t) + t * phi_pdf(t), sf) << main_shift)
    })?;
    Ok(GeneratedLut {
        table,
        source: GELU_SOURCE,
        domain: format!("|x| in [0, {})", cfg.passthrough),
        rounding: ROUNDING,
        cfg_digest: lut_digest(GELU_SOURCE, cfg),
    })
}

pub fn build_inv_sqrt_lut(cfg: &InvSqrtConfig) -> Result<GeneratedLut> {
    cfg.check()?;
    let f_frac = cfg.f_fmt.fractional_bits;
    let lo0 = cfg.regions[0].log2_lo as f64;
    if quantize((-lo0 / 2.0).exp2(), f_frac) >= 1 << cfg.f_fmt.total_bits() {
        return Err(Error::range("inv-sqrt value entry overflows its format".to_string()));
    }
    for r in &cfg.regions {
        if r.delta_bits == 0 {
            continue;
        }
        let peak = 0.5 * (cfg.scale_log(r) as f64 - 1.5 * r.log2_lo as f64).exp2();
        if quantize(peak, 0) >= 1 << cfg.g_bits {
            return Err(Error::range("inv-sqrt slope entry overflows its width".to_string()));
        }
    }
    let mask = (1u64 << cfg.t_bits) - 1;
    let f_shift = cfg.f_fmt.total_bits();
    let out_blocks = ((f_shift + cfg.g_bits) / 2) as usize;
    let table = LookupTable::from_fn((cfg.t_bits + 2) as usize, out_blocks, |i| {
        let r = &cfg.regions[(i >> cfg.t_bits) as usize];
        let unit = (r.t_lsb as f64 - FMT_VARIANCE.fractional_bits as f64).exp2();
        // Indices below the region floor are unreachable; clamping keeps
        // their entries finite and inside the packing caps.
        let t = ((i & mask) as f64 * unit).max((r.log2_lo as f64).exp2());
        let f_val = 1.0 / t.sqrt();
        let g_raw = if r.delta_bits == 0 {
            0
        } else {
            quantize(0.5 * f_val / t * (cfg.scale_log(r) as f64).exp2(), 0)
        };
        quantize(f_val, f_frac) | (g_raw << f_shift)
    })?;
    Ok(GeneratedLut {
        table,
        source: INV_SQRT_SOURCE,
        domain: format!("x in [2^{}, 2^{})", cfg.regions[0].log2_lo, cfg.regions[3].log2_hi),
        rounding: ROUNDING,
        cfg_digest: lut_digest(INV_SQRT_SOURCE, cfg),
    })
}

pub struct NonlinLuts {
    pub exp: GeneratedLut,
    pub gelu: GeneratedLut,
    pub inv_sqrt: GeneratedLut,
}

pub fn build_luts(cfg: &FunctionEvalConfig) -> Result<NonlinLuts> {
    Ok(NonlinLuts {
        exp: build_exp_lut(&cfg.exp)?,
        gelu: build_gelu_lut(&cfg.gelu)?,
        inv_sqrt: build_inv_sqrt_lut(&cfg.inv_sqrt)?,
    })
}

/// `exp(-x)` for clean [`FMT_EXP_ARG`] inputs. Arguments at or above
/// `2^(x1+x2-20)` flush to an exact zero.
pub fn exp_neg_many<E: BlockEngine>(
    engine: &E,
    cfg: &ExpSplit,
    lut: &GeneratedLut,
    xs: &[FixedPoint<E::Block>],
) -> Result<Vec<FixedPoint<E::Block>>> {
    cfg.check()?;
    require_source(lut, EXP_SOURCE)?;
    for x in xs {
        require_input(x, FMT_EXP_ARG, "exp-neg")?;
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let x2_blocks = (cfg.x2_bits / 2) as usize;
    let top = x2_blocks + (cfg.x1_bits / 2) as usize;
    let width = FMT_EXP_ARG.block_count();
    let y1_fmt = cfg.y1_fmt();
    let x2_fmt = FixedPointFormat::unsigned(0, FMT_EXP_ARG.fractional_bits);
    let hints = MulHints {
        a_bound_raw: Some(1u128 << cfg.y1_frac_bits),
        b_bound_raw: Some((1u128 << cfg.x2_bits) - 1),
        ..MulHints::default()
    };
    let sched = schedule_mul(y1_fmt, x2_fmt, y1_fmt, &hints)?;

    let mut y1s = Vec::with_capacity(xs.len());
    let mut x2s = Vec::with_capacity(xs.len());
    for x in xs {
        let out = engine.wop_lookup(&x.blocks[x2_blocks..top], &lut.table)?;
        let n = out.len();
        y1s.push(FixedPoint::from_parts(y1_fmt, out, vec![CLEAN_MAX_VAL; n]));
        let mut blocks = x.blocks[..x2_blocks].to_vec();
        let mut cs = x.carry_state[..x2_blocks].to_vec();
        while blocks.len() < x2_fmt.block_count() {
            blocks.push(engine.trivial_block(0));
            cs.push(0);
        }
        x2s.push(FixedPoint::from_parts(x2_fmt, blocks, cs));
    }
    let pairs: Vec<_> = y1s.iter().zip(&x2s).collect();
    let corrs = execute_mul_many(engine, &pairs, &sched)?;
    let mut diffs = Vec::with_capacity(xs.len());
    for (y1, corr) in y1s.iter().zip(&corrs) {
        let neg = negate(engine, corr)?;
        diffs.push(add(engine, y1, &neg)?);
    }
    let diffs = propagate_carries_many(engine, diffs)?;

    let zero = BlockLut::univariate(|c| u64::from(c == 0));
    let reqs: Vec<_> = xs
        .iter()
        .map(|x| {
            let mut acc = x.blocks[top].clone();
            for b in &x.blocks[top + 1..width] {
                acc = engine.add(&acc, b);
            }
            (acc, zero)
        })
        .collect();
    let keeps = engine.pbs_batch(&reqs);
    let gate_items: Vec<_> = keeps.iter().zip(&diffs).collect();
    let gated = mul_by_bit_many(engine, &gate_items)?;

    let drop = ((cfg.y1_frac_bits - FMT_EXP_ARG.fractional_bits) / 2) as usize;
    gated
        .iter()
        .map(|g| zero_extend(engine, &drop_low_blocks(g, drop)?, FMT_EXP_ARG))
        .collect()
}

pub fn exp_neg<E: BlockEngine>(
    engine: &E,
    cfg: &ExpSplit,
    lut: &GeneratedLut,
    x: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(exp_neg_many(engine, cfg, lut, std::slice::from_ref(x))?.pop().unwrap())
}

/// GELU over clean [`FMT_SOFTMAX`] inputs above the format minimum; the
/// reflection `gelu(x) = gelu(|x|) - [x < 0] |x|` makes negative outputs
/// raw-exact mirrors of positive ones.
pub fn gelu_many<E: BlockEngine>(
    engine: &E,
    cfg: &GeluSplit,
    lut: &GeneratedLut,
    xs: &[FixedPoint<E::Block>],
) -> Result<Vec<FixedPoint<E::Block>>> {
    cfg.check()?;
    require_source(lut, GELU_SOURCE)?;
    for x in xs {
        require_input(x, FMT_SOFTMAX, "gelu")?;
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let width = FMT_SOFTMAX.block_count();
    let delta_blocks = (cfg.delta_bits / 2) as usize;
    let top = delta_blocks + ((cfg.t_int_bits + cfg.t_frac_bits) / 2) as usize;
    let main_blocks = cfg.main_fmt.block_count();
    let slope_blocks = cfg.slope_fmt.block_count();
    let wide_fmt =
        FixedPointFormat::signed(FMT_SOFTMAX.integer_bits + 2, cfg.main_fmt.fractional_bits);
    let ext_fmt = FixedPointFormat::unsigned(
        wide_fmt.total_bits() - FMT_SOFTMAX.fractional_bits,
        FMT_SOFTMAX.fractional_bits,
    );
    let lift = ((cfg.main_fmt.fractional_bits - FMT_SOFTMAX.fractional_bits) / 2) as usize;

    let sign = BlockLut::univariate(|c| ((c >> 1) & 1) ^ 1);
    let reqs: Vec<_> = xs.iter().map(|x| (x.blocks[width - 1].clone(), sign)).collect();
    let nonnegs = engine.pbs_batch(&reqs);
    let negs = propagate_carries_many(
        engine,
        xs.iter().map(|x| negate(engine, x)).collect::<Result<Vec<_>>>()?,
    )?;
    let sel_items: Vec<_> = nonnegs
        .iter()
        .zip(xs.iter().zip(&negs))
        .map(|(s, (x, n))| (s, x, n))
        .collect();
    // The magnitude feeds scaled bivariate packings downstream, so it gets
    // one refresh to shed the selection noise.
    let abs = refresh_many(engine, select_many(engine, &sel_items)?)?;

    let nz = BlockLut::univariate(|c| u64::from(c != 0));
    let reqs: Vec<_> = abs
        .iter()
        .map(|a| {
            let mut acc = a.blocks[top].clone();
            for b in &a.blocks[top + 1..width] {
                acc = engine.add(&acc, b);
            }
            (acc, nz)
        })
        .collect();
    let bigs = engine.pbs_batch(&reqs);

    let mut mains = Vec::with_capacity(xs.len());
    let mut slopes = Vec::with_capacity(xs.len());
    for a in &abs {
        let mut out = engine.wop_lookup(&a.blocks[delta_blocks..top], &lut.table)?;
        let slope_part = out.split_off(main_blocks);
        mains.push(FixedPoint::from_parts(cfg.main_fmt, out, vec![CLEAN_MAX_VAL; main_blocks]));
        slopes.push(FixedPoint::from_parts(
            cfg.slope_fmt,
            slope_part,
            vec![CLEAN_MAX_VAL; slope_blocks],
        ));
    }

    let smalls = if cfg.delta_bits == 0 {
        mains
    } else {
        let delta_fmt = FixedPointFormat::unsigned(0, FMT_SOFTMAX.fractional_bits);
        let hints = MulHints {
            a_bound_raw: Some((1u128 << cfg.slope_fmt.total_bits()) - 1),
            b_bound_raw: Some((1u128 << cfg.delta_bits) - 1),
            ..MulHints::default()
        };
        let sched = schedule_mul(cfg.slope_fmt, delta_fmt, cfg.main_fmt, &hints)?;
        let deltas: Vec<_> = abs
            .iter()
            .map(|a| {
                let mut blocks = a.blocks[..delta_blocks].to_vec();
                let mut cs = a.carry_state[..delta_blocks].to_vec();
                while blocks.len() < delta_fmt.block_count() {
                    blocks.push(engine.trivial_block(0));
                    cs.push(0);
                }
                FixedPoint::from_parts(delta_fmt, blocks, cs)
            })
            .collect();
        let pairs: Vec<_> = slopes.iter().zip(&deltas).collect();
        let corrs = execute_mul_many(engine, &pairs, &sched)?;
        let sums = mains
            .iter()
            .zip(&corrs)
            .map(|(m, c)| add(engine, m, c))
            .collect::<Result<Vec<_>>>()?;
        propagate_carries_many(engine, sums)?
    };
    let small_wides = smalls
        .iter()
        .map(|s| zero_extend(engine, s, wide_fmt))
        .collect::<Result<Vec<_>>>()?;

    let a_wides = abs
        .iter()
        .map(|a| {
            let u = FixedPoint::from_parts(
                FixedPointFormat::unsigned(FMT_SOFTMAX.integer_bits, FMT_SOFTMAX.fractional_bits),
                a.blocks.clone(),
                a.carry_state.clone(),
            );
            let lifted = shift_blocks_left(engine, &zero_extend(engine, &u, ext_fmt)?, lift);
            Ok(FixedPoint::from_parts(wide_fmt, lifted.blocks, lifted.carry_state))
        })
        .collect::<Result<Vec<_>>>()?;

    let sel_items: Vec<_> = bigs
        .iter()
        .zip(a_wides.iter().zip(&small_wides))
        .map(|(s, (a, b))| (s, a, b))
        .collect();
    let chosen = select_many(engine, &sel_items)?;

    let folds: Vec<_> = nonnegs.iter().map(|s| engine.sub_from_plain(1, s)).collect();
    let gate_items: Vec<_> = folds.iter().zip(&a_wides).collect();
    let masked = mul_by_bit_many(engine, &gate_items)?;

    let outs = propagate_carries_many(
        engine,
        chosen
            .iter()
            .zip(&masked)
            .map(|(c, m)| {
                let neg = negate(engine, m)?;
                add(engine, c, &neg)
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let drop_hi = ((wide_fmt.integer_bits - FMT_SOFTMAX.integer_bits) / 2) as usize;
    outs.iter()
        .map(|o| drop_high_blocks(&drop_low_blocks(o, lift)?, drop_hi))
        .collect()
}

pub fn gelu<E: BlockEngine>(
    engine: &E,
    cfg: &GeluSplit,
    lut: &GeneratedLut,
    x: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(gelu_many(engine, cfg, lut, std::slice::from_ref(x))?.pop().unwrap())
}

/// `1/sqrt(x)` over clean [`FMT_VARIANCE`] inputs inside the configured
/// domain. The region tag rides above the window bits in one combined
/// lookup, so each value costs a single wide lookup regardless of band.
pub fn inv_sqrt_many<E: BlockEngine>(
    engine: &E,
    cfg: &InvSqrtConfig,
    lut: &GeneratedLut,
    xs: &[FixedPoint<E::Block>],
) -> Result<Vec<FixedPoint<E::Block>>> {
    cfg.check()?;
    require_source(lut, INV_SQRT_SOURCE)?;
    for x in xs {
        require_input(x, FMT_VARIANCE, "inv-sqrt")?;
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let width = FMT_VARIANCE.block_count();
    let t_blocks = (cfg.t_bits / 2) as usize;
    let f_blocks = cfg.f_fmt.block_count();
    let g_fmt = FixedPointFormat::unsigned(cfg.g_bits - cfg.g_frac_bits, cfg.g_frac_bits);
    let g_blocks = g_fmt.block_count();
    let digits: Vec<usize> = cfg.regions.iter().map(|r| (r.delta_bits / 2) as usize).collect();
    let max_digits = *digits.iter().max().unwrap();
    let floor_block =
        |r: usize| ((cfg.regions[r].log2_lo + FMT_VARIANCE.fractional_bits as i32) / 2) as usize;
    let win_base = |r: usize| (cfg.regions[r].t_lsb / 2) as usize;

    let nz = BlockLut::univariate(|c| u64::from(c != 0));
    let mut reqs = Vec::new();
    for x in xs {
        for r in 1..4 {
            let lo = floor_block(r);
            let hi = if r < 3 { floor_block(r + 1) } else { width };
            let mut acc = x.blocks[lo].clone();
            for b in &x.blocks[lo + 1..hi] {
                acc = engine.add(&acc, b);
            }
            reqs.push((acc, nz));
        }
    }
    let bits = engine.pbs_batch(&reqs);
    let fold_region = BlockLut::univariate(|c| {
        if c & 4 != 0 {
            3
        } else if c & 2 != 0 {
            2
        } else {
            c & 1
        }
    });
    let reqs: Vec<_> = bits
        .chunks(3)
        .map(|b| {
            let hi = engine.add(&engine.scalar_mul(&b[2], 4), &engine.scalar_mul(&b[1], 2));
            (engine.add(&hi, &b[0]), fold_region)
        })
        .collect();
    let sels = engine.pbs_batch(&reqs);
    let tagged: Vec<_> = sels.iter().map(|s| engine.scalar_mul(s, 4)).collect();
    let masks: Vec<BlockLut> = (0..4u64)
        .map(|r| BlockLut::univariate(move |c| if c >> 2 == r { c & 3 } else { 0 }))
        .collect();

    // Region-selected window: each output block muxes the four candidate
    // source blocks through the tag.
    let mut reqs = Vec::new();
    for (x, tag) in xs.iter().zip(&tagged) {
        for j in 0..t_blocks {
            for (r, m) in masks.iter().enumerate() {
                reqs.push((engine.add(tag, &x.blocks[win_base(r) + j]), *m));
            }
        }
    }
    let mut outs = engine.pbs_batch(&reqs).into_iter();
    let windows: Vec<Vec<E::Block>> = xs
        .iter()
        .map(|_| {
            (0..t_blocks)
                .map(|_| {
                    let a = outs.next().unwrap();
                    let b = outs.next().unwrap();
                    let c = outs.next().unwrap();
                    let d = outs.next().unwrap();
                    engine.add(&engine.add(&a, &b), &engine.add(&c, &d))
                })
                .collect()
        })
        .collect();

    let mut delta_vals: Vec<Vec<E::Block>> = vec![Vec::new(); xs.len()];
    if max_digits > 0 {
        let mut reqs = Vec::new();
        for j in 0..max_digits {
            for (x, tag) in xs.iter().zip(&tagged) {
                for (r, m) in masks.iter().enumerate() {
                    if digits[r] > j {
                        reqs.push((engine.add(tag, &x.blocks[win_base(r) - digits[r] + j]), *m));
                    }
                }
            }
        }
        let mut outs = engine.pbs_batch(&reqs).into_iter();
        for j in 0..max_digits {
            for slot in delta_vals.iter_mut() {
                let mut acc: Option<E::Block> = None;
                for r in 0..4 {
                    if digits[r] > j {
                        let p = outs.next().unwrap();
                        acc = Some(match acc {
                            Some(a) => engine.add(&a, &p),
                            None => p,
                        });
                    }
                }
                slot.push(acc.expect("delta digit"));
            }
        }
    }

    let mut fs = Vec::with_capacity(xs.len());
    let mut gs = Vec::with_capacity(xs.len());
    for (win, sel) in windows.iter().zip(&sels) {
        let mut input = win.clone();
        input.push(sel.clone());
        let mut out = engine.wop_lookup(&input, &lut.table)?;
        let g_part = out.split_off(f_blocks);
        fs.push(FixedPoint::from_parts(cfg.f_fmt, out, vec![CLEAN_MAX_VAL; f_blocks]));
        gs.push(FixedPoint::from_parts(g_fmt, g_part, vec![CLEAN_MAX_VAL; g_blocks]));
    }
    if max_digits == 0 {
        return Ok(fs);
    }

    let d_fmt = FixedPointFormat::unsigned(8, 0);
    let ds: Vec<_> = delta_vals
        .into_iter()
        .map(|mut blocks| {
            let mut cs = vec![CLEAN_MAX_VAL; blocks.len()];
            while blocks.len() < d_fmt.block_count() {
                blocks.push(engine.trivial_block(0));
                cs.push(0);
            }
            FixedPoint::from_parts(d_fmt, blocks, cs)
        })
        .collect();
    let max_delta = cfg.regions.iter().map(|r| r.delta_bits).max().unwrap();
    let corr_fmt =
        FixedPointFormat::unsigned((cfg.g_bits + max_delta - cfg.g_frac_bits + 1) & !1, 0);
    let hints = MulHints {
        a_bound_raw: Some((1u128 << cfg.g_bits) - 1),
        b_bound_raw: Some((1u128 << max_delta) - 1),
        ..MulHints::default()
    };
    let sched = schedule_mul(g_fmt, d_fmt, corr_fmt, &hints)?;
    let pairs: Vec<_> = gs.iter().zip(&ds).collect();
    let corrs = execute_mul_many(engine, &pairs, &sched)?;

    let results = fs
        .iter()
        .zip(&corrs)
        .map(|(f, corr)| {
            // The slope scale folds the region's delta unit in, so the
            // product already counts output raw units.
            let mut blocks = corr.blocks.clone();
            let mut cs = corr.carry_state.clone();
            while blocks.len() < f_blocks {
                blocks.push(engine.trivial_block(0));
                cs.push(0);
            }
            let wide = FixedPoint::from_parts(cfg.f_fmt, blocks, cs);
            let neg = negate(engine, &wide)?;
            add(engine, f, &neg)
        })
        .collect::<Result<Vec<_>>>()?;
    propagate_carries_many(engine, results)
}

pub fn inv_sqrt<E: BlockEngine>(
    engine: &E,
    cfg: &InvSqrtConfig,
    lut: &GeneratedLut,
    x: &FixedPoint<E::Block>,
) -> Result<FixedPoint<E::Block>> {
    Ok(inv_sqrt_many(engine, cfg, lut, std::slice::from_ref(x))?.pop().unwrap())
}

/// Outcome of a dense mirror-grid accuracy sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub function: String,
    pub grid: String,
    pub points: u64,
    pub metric: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub argmax: f64,
    pub target: f64,
    pub noise_flags: u64,
    pub pass: bool,
}

const SWEEP_CHUNK: usize = 2048;

pub fn sweep_exp_neg(
    cfg: &FunctionEvalConfig,
    params: &ParameterSet,
    points: u64,
) -> Result<SweepReport> {
    let lut = build_exp_lut(&cfg.exp)?;
    let mirror = MirrorEngine::new(params);
    let hi =
        ((cfg.exp.x1_bits + cfg.exp.x2_bits) as f64 - FMT_EXP_ARG.fractional_bits as f64).exp2();
    let step = hi / points as f64;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut argmax = 0.0f64;
    let mut k = 0u64;
    while k < points {
        let n = (points - k).min(SWEEP_CHUNK as u64);
        let inputs: Vec<MirrorValue> = (0..n)
            .map(|i| mirror.fresh_value(((k + i) as f64 + 0.5) * step, FMT_EXP_ARG))
            .collect::<Result<_>>()?;
        let outs = exp_neg_many(&mirror, &cfg.exp, &lut, &inputs)?;
        for (inp, out) in inputs.iter().zip(&outs) {
            let x = mirror.read_value(inp);
            let want = (-x).exp();
            let err = (mirror.read_value(out) - want).abs();
            if err > max_abs {
                max_abs = err;
                argmax = x;
            }
            if want > TARGET_EXP_ABS {
                max_rel = max_rel.max(err / want);
            }
        }
        k += n;
    }
    let noise_flags = mirror.take_flags().len() as u64;
    Ok(SweepReport {
        function: EXP_SOURCE.to_string(),
        grid: format!("midpoints over [0, {hi}) x {points}"),
        points,
        metric: "abs".to_string(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        argmax,
        target: TARGET_EXP_ABS,
        noise_flags,
        pass: max_abs <= TARGET_EXP_ABS && noise_flags == 0,
    })
}

pub fn sweep_gelu(
    cfg: &FunctionEvalConfig,
    params: &ParameterSet,
    points: u64,
) -> Result<SweepReport> {
    let lut = build_gelu_lut(&cfg.gelu)?;
    let mirror = MirrorEngine::new(params);
    let half = cfg.gelu.passthrough as f64;
    let tail = 4096u64;
    let lim = 2040.0;
    let mut grid = Vec::with_capacity((points + tail) as usize);
    for k in 0..points {
        grid.push(-half + (k as f64 + 0.5) * 2.0 * half / points as f64);
    }
    for k in 0..tail {
        grid.push(-lim + (k as f64 + 0.5) * 2.0 * lim / tail as f64);
    }
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut argmax = 0.0f64;
    for chunk in grid.chunks(SWEEP_CHUNK) {
        let inputs: Vec<MirrorValue> = chunk
            .iter()
            .map(|&v| mirror.fresh_value(v, FMT_SOFTMAX))
            .collect::<Result<_>>()?;
        let outs = gelu_many(&mirror, &cfg.gelu, &lut, &inputs)?;
        for (inp, out) in inputs.iter().zip(&outs) {
            let x = mirror.read_value(inp);
            let want = gelu_reference(x);
            let err = (mirror.read_value(out) - want).abs();
            if err > max_abs {
                max_abs = err;
                argmax = x;
            }
            if want.abs() > TARGET_GELU_ABS {
                max_rel = max_rel.max(err / want.abs());
            }
        }
    }
    let noise_flags = mirror.take_flags().len() as u64;
    Ok(SweepReport {
        function: GELU_SOURCE.to_string(),
        grid: format!("midpoints over [-{half}, {half}) x {points} plus [-{lim}, {lim}) x {tail}"),
        points: points + tail,
        metric: "abs".to_string(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        argmax,
        target: TARGET_GELU_ABS,
        noise_flags,
        pass: max_abs <= TARGET_GELU_ABS && noise_flags == 0,
    })
}

pub fn sweep_inv_sqrt(
    cfg: &FunctionEvalConfig,
    params: &ParameterSet,
    points: u64,
) -> Result<SweepReport> {
    let lut = build_inv_sqrt_lut(&cfg.inv_sqrt)?;
    let mirror = MirrorEngine::new(params);
    let lo = cfg.inv_sqrt.regions[0].log2_lo as f64;
    let hi = cfg.inv_sqrt.regions[3].log2_hi as f64;
    let step = (hi - lo) / points as f64;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut argmax = 0.0f64;
    let mut k = 0u64;
    while k < points {
        let n = (points - k).min(SWEEP_CHUNK as u64);
        let inputs: Vec<MirrorValue> = (0..n)
            .map(|i| {
                mirror.fresh_value((lo + ((k + i) as f64 + 0.5) * step).exp2(), FMT_VARIANCE)
            })
            .collect::<Result<_>>()?;
        let outs = inv_sqrt_many(&mirror, &cfg.inv_sqrt, &lut, &inputs)?;
        for (inp, out) in inputs.iter().zip(&outs) {
            let x = mirror.read_value(inp);
            let want = 1.0 / x.sqrt();
            let err = (mirror.read_value(out) - want).abs();
            max_abs = max_abs.max(err);
            if err / want > max_rel {
                max_rel = err / want;
                argmax = x;
            }
        }
        k += n;
    }
    let noise_flags = mirror.take_flags().len() as u64;
    Ok(SweepReport {
        function: INV_SQRT_SOURCE.to_string(),
        grid: format!("log2 midpoints over [{lo}, {hi}) x {points}"),
        points,
        metric: "rel".to_string(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        argmax,
        target: TARGET_INV_SQRT_REL,
        noise_flags,
        pass: max_rel <= TARGET_INV_SQRT_REL && noise_flags == 0,
    })
}
