//! Composite encrypted layers: Softmax and LayerNorm.
//!
//! Both are straight-line compositions of the fixed-point operators and
//! the nonlinear evaluators. Softmax subtracts the running maximum so the
//! exponential sees nonnegative arguments and the sum stays at least one;
//! LayerNorm biases values nonnegative for the widening sum, squares
//! magnitudes into a wide accumulator, and folds the per-feature sign back
//! in after the plaintext affine step.

use crate::engine::{BlockEngine, BlockLut};
use crate::error::{Error, Result};
use crate::fixed::{
    add, add_plain, div_bounded, div_const, drop_high_blocks, drop_low_blocks, execute_mul_many,
    execute_reduction, max_tree, negate, plan_reduction, propagate_carries,
    propagate_carries_many, refresh_many, schedule_mul, select_many, sum_many, zero_extend,
    FixedPoint, FixedPointFormat, MulHints, Term, FMT_LAYERNORM, FMT_SOFTMAX, FMT_VARIANCE,
};
use crate::nonlin::{exp_neg_many, inv_sqrt, ExpSplit, GeneratedLut, InvSqrtConfig, FMT_EXP_ARG};

/// Variance regularizer, fixed by the layer contract.
pub const LAYERNORM_EPSILON: f64 = 1.0 / 65536.0;

/// Softmax values lie in [0, 1], so eleven radix-4 digits cover the
/// quotient up to and including an exact one.
const SOFTMAX_Q_DIGITS: usize = 11;

const GUARD_BLOCKS: usize = 4;

/// Per-feature affine weights. Weights are server-side plaintext; only
/// activations stay encrypted.
#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
}

impl LayerNormParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::config(format!(
                "{} gains vs {} offsets",
                gamma.len(),
                beta.len()
            )));
        }
        if gamma.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::config("layer weights must be finite".to_string()));
        }
        Ok(Self { gamma, beta, epsilon: LAYERNORM_EPSILON })
    }

    pub fn uniform(n: usize, gamma: f64, beta: f64) -> Result<Self> {
        Self::new(vec![gamma; n], vec![beta; n])
    }
}

/// Multiplies by a plaintext raw constant at the value's own scale,
/// rounding to nearest; the result stays within one ulp. Same column
/// machinery as constant division, with the constant's radix-4 digits as
/// term weights.
fn mul_plain<E: BlockEngine>(
    engine: &E,
    a: &FixedPoint<E::Block>,
    c_raw: u64,
) -> Result<FixedPoint<E::Block>> {
    a.require_clean("mul_plain")?;
    let fmt = a.format;
    let w = fmt.block_count();
    let shift = (fmt.fractional_bits / 2) as usize;
    let cols = w + GUARD_BLOCKS;
    let mut terms = Vec::new();
    let mut inputs = Vec::new();
    for k in 0..32 {
        let digit = (c_raw >> (2 * k)) & 3;
        if digit == 0 {
            continue;
        }
        for j in 0..w {
            if a.carry_state[j] == 0 || j + k + GUARD_BLOCKS < shift {
                continue;
            }
            let col = j + k + GUARD_BLOCKS - shift;
            if col >= cols {
                continue;
            }
            terms.push(Term { col, bound: a.carry_state[j] * digit as u8 });
            inputs.push(engine.scalar_mul(&a.blocks[j], digit));
        }
    }
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

fn require_layer_input<B: Clone + Send + Sync>(
    x: &FixedPoint<B>,
    fmt: FixedPointFormat,
    what: &str,
) -> Result<()> {
    if x.format != fmt {
        return Err(Error::FormatMismatch(format!("{what} expects {fmt:?}, got {:?}", x.format)));
    }
    x.require_clean(what)
}

/// Softmax over clean [`FMT_SOFTMAX`] inputs. Outputs reuse the input
/// format; each lies within one quotient ulp of `exp(x_i - max) / S`.
pub fn softmax<E: BlockEngine>(
    engine: &E,
    cfg: &ExpSplit,
    exp_lut: &GeneratedLut,
    xs: &[FixedPoint<E::Block>],
) -> Result<Vec<FixedPoint<E::Block>>> {
    if xs.is_empty() {
        return Err(Error::config("softmax over an empty vector".to_string()));
    }
    if xs.len() > 2048 {
        return Err(Error::config("softmax sum format holds at most 2048 terms".to_string()));
    }
    for x in xs {
        require_layer_input(x, FMT_SOFTMAX, "softmax")?;
    }
    let x_max = max_tree(engine, xs.to_vec())?;
    let diffs = xs
        .iter()
        .map(|x| {
            let neg = negate(engine, x)?;
            add(engine, &x_max, &neg)
        })
        .collect::<Result<Vec<_>>>()?;
    let zs: Vec<_> = propagate_carries_many(engine, diffs)?
        .into_iter()
        .map(|z| FixedPoint::from_parts(FMT_EXP_ARG, z.blocks, z.carry_state))
        .collect();
    let es = exp_neg_many(engine, cfg, exp_lut, &zs)?;
    let s = sum_many(engine, &es, FMT_EXP_ARG)?;
    es.iter()
        .map(|e| {
            let y = div_bounded(engine, e, &s, SOFTMAX_Q_DIGITS)?;
            Ok(FixedPoint::from_parts(FMT_SOFTMAX, y.blocks, y.carry_state))
        })
        .collect()
}

/// LayerNorm over clean [`FMT_LAYERNORM`] inputs. The caller keeps the
/// variance below the inverse square root domain ceiling (2^12 - eps) and
/// the affine outputs inside the format; out-of-range values wrap.
pub fn layernorm<E: BlockEngine>(
    engine: &E,
    cfg: &InvSqrtConfig,
    inv_sqrt_lut: &GeneratedLut,
    params: &LayerNormParams,
    xs: &[FixedPoint<E::Block>],
) -> Result<Vec<FixedPoint<E::Block>>> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::config("layernorm needs at least two features".to_string()));
    }
    if n > 4096 {
        return Err(Error::config("variance accumulator holds at most 4096 terms".to_string()));
    }
    if params.gamma.len() != n {
        return Err(Error::config(format!(
            "{} weights for {n} features",
            params.gamma.len()
        )));
    }
    for x in xs {
        require_layer_input(x, FMT_LAYERNORM, "layernorm")?;
    }
    let frac = FMT_LAYERNORM.fractional_bits;
    let ext = (usize::BITS - (n - 1).leading_zeros() + 1) & !1;
    let acc_u = FixedPointFormat::unsigned(FMT_LAYERNORM.integer_bits + ext, frac);
    let acc_s = FixedPointFormat::signed(FMT_LAYERNORM.integer_bits + ext, frac);
    let abs_fmt = FixedPointFormat::unsigned(12, frac);
    let sq_fmt = FixedPointFormat::unsigned(24, 2 * frac);

    // Bias by half the range: order-preserving, and the widening sum and
    // constant division stay unsigned. The wrap must settle at the input
    // width before widening, so the biased values get one propagation.
    let bias = 1i128 << (FMT_LAYERNORM.total_bits() - 1);
    let exts = propagate_carries_many(
        engine,
        xs.iter()
            .map(|x| {
                let b = add_plain(engine, x, bias)?;
                Ok(FixedPoint::from_parts(
                    FixedPointFormat::unsigned(FMT_LAYERNORM.integer_bits, frac),
                    b.blocks,
                    b.carry_state,
                ))
            })
            .collect::<Result<Vec<_>>>()?,
    )?
    .iter()
    .map(|u| zero_extend(engine, u, acc_u))
    .collect::<Result<Vec<_>>>()?;
    let sum = sum_many(engine, &exts, acc_u)?;
    let mu = div_const(engine, &sum, n as u64)?;

    // Biases cancel in x - mu, leaving the centered value in two's
    // complement within the widened format.
    let neg_mu = negate(engine, &mu)?;
    let ds: Vec<_> = propagate_carries_many(
        engine,
        exts.iter().map(|x| add(engine, x, &neg_mu)).collect::<Result<Vec<_>>>()?,
    )?
    .into_iter()
    .map(|d| FixedPoint::from_parts(acc_s, d.blocks, d.carry_state))
    .collect();

    let top = acc_s.block_count() - 1;
    let sign = BlockLut::univariate(|c| ((c >> 1) & 1) ^ 1);
    let reqs: Vec<_> = ds.iter().map(|d| (d.blocks[top].clone(), sign)).collect();
    let nonnegs = engine.pbs_batch(&reqs);
    let neg_ds = propagate_carries_many(
        engine,
        ds.iter().map(|d| negate(engine, d)).collect::<Result<Vec<_>>>()?,
    )?;
    let sel: Vec<_> = nonnegs
        .iter()
        .zip(ds.iter().zip(&neg_ds))
        .map(|(s, (d, nd))| (s, d, nd))
        .collect();
    let drop = (acc_u.block_count() - abs_fmt.block_count()) as usize;
    let abs = refresh_many(
        engine,
        select_many(engine, &sel)?
            .into_iter()
            .map(|a| {
                let u = FixedPoint::from_parts(acc_u, a.blocks, a.carry_state);
                drop_high_blocks(&u, drop)
            })
            .collect::<Result<Vec<_>>>()?,
    )?;

    let abs_bound = (1u128 << abs_fmt.total_bits()) - 1;
    let sq_hints = MulHints {
        a_bound_raw: Some(abs_bound),
        b_bound_raw: Some(abs_bound),
        ..MulHints::default()
    };
    let sq_sched = schedule_mul(abs_fmt, abs_fmt, sq_fmt, &sq_hints)?;
    let sq_pairs: Vec<_> = abs.iter().map(|a| (a, a)).collect();
    let squares = execute_mul_many(engine, &sq_pairs, &sq_sched)?;
    let ssum = sum_many(engine, &squares, sq_fmt)?;
    let var = div_const(engine, &ssum, n as u64)?;
    let narrowed = drop_high_blocks(&var, (sq_fmt.block_count() - FMT_VARIANCE.block_count()) as usize)?;
    let eps_raw = (LAYERNORM_EPSILON * (FMT_VARIANCE.fractional_bits as f64).exp2()) as i128;
    let v = propagate_carries(engine, add_plain(engine, &narrowed, eps_raw)?)?;
    let inv = inv_sqrt(engine, cfg, inv_sqrt_lut, &v)?;

    // Worst case per operand: |d| < 2^12 against the domain-floor maximum
    // of the inverse root.
    let lo0 = cfg.regions[0].log2_lo;
    let inv_shift = (cfg.f_fmt.fractional_bits as i64 - i64::from(lo0) / 2).max(0) as u32;
    let m_int = (12 + (inv_shift.saturating_sub(cfg.f_fmt.fractional_bits)) + 1) & !1;
    let m_wide = FixedPointFormat::unsigned(m_int.max(FMT_LAYERNORM.integer_bits), frac);
    let m_hints = MulHints {
        a_bound_raw: Some(abs_bound),
        b_bound_raw: Some(1u128 << inv_shift),
        ..MulHints::default()
    };
    let m_sched = schedule_mul(abs_fmt, cfg.f_fmt, m_wide, &m_hints)?;
    let m_pairs: Vec<_> = abs.iter().map(|a| (a, &inv)).collect();
    let m_drop = m_wide.block_count() - FMT_LAYERNORM.block_count();
    let ms = execute_mul_many(engine, &m_pairs, &m_sched)?
        .into_iter()
        .map(|m| drop_high_blocks(&m, m_drop))
        .collect::<Result<Vec<_>>>()?;

    let scale = (frac as f64).exp2();
    let ps = ms
        .iter()
        .zip(&params.gamma)
        .map(|(m, g)| {
            let g_raw = (g.abs() * scale).round_ties_even() as u64;
            let p = mul_plain(engine, m, g_raw)?;
            Ok(FixedPoint::from_parts(FMT_LAYERNORM, p.blocks, p.carry_state))
        })
        .collect::<Result<Vec<_>>>()?;
    let neg_ps = propagate_carries_many(
        engine,
        ps.iter().map(|p| negate(engine, p)).collect::<Result<Vec<_>>>()?,
    )?;
    let flips: Vec<_> = nonnegs
        .iter()
        .zip(&params.gamma)
        .map(|(s, g)| if *g < 0.0 { engine.sub_from_plain(1, s) } else { s.clone() })
        .collect();
    let sel: Vec<_> = flips
        .iter()
        .zip(ps.iter().zip(&neg_ps))
        .map(|(s, (p, np))| (s, p, np))
        .collect();
    let chosen = select_many(engine, &sel)?;
    propagate_carries_many(
        engine,
        chosen
            .iter()
            .zip(&params.beta)
            .map(|(c, b)| add_plain(engine, c, (b * scale).round_ties_even() as i128))
            .collect::<Result<Vec<_>>>()?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchPolicy;
    use crate::engine::EncryptedEngine;
    use crate::fixed::FixedPointCiphertext;
    use crate::mirror::{MirrorEngine, MirrorValue};
    use crate::nonlin::{build_exp_lut, build_inv_sqrt_lut, FunctionEvalConfig};
    use crate::params::ParameterSet;
    use crate::testutil::toy_keys_arc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn softmax_reference(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let es: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = es.iter().sum();
        es.iter().map(|e| e / s).collect()
    }

    fn layernorm_reference(xs: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
        let n = xs.len() as f64;
        let mu = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYERNORM_EPSILON).sqrt();
        xs.iter()
            .zip(gamma.iter().zip(beta))
            .map(|(x, (g, b))| (x - mu) * inv * g + b)
            .collect()
    }

    fn fresh_vec(mirror: &MirrorEngine, vals: &[f64], fmt: FixedPointFormat) -> Vec<MirrorValue> {
        vals.iter().map(|&v| mirror.fresh_value(v, fmt).unwrap()).collect()
    }

    #[test]
    fn mirror_softmax_matches_reference() {
        let cfg = FunctionEvalConfig::default();
        let lut = build_exp_lut(&cfg.exp).unwrap();
        let mirror = MirrorEngine::new(&ParameterSet::paper());

        let one = softmax(&mirror, &cfg.exp, &lut, &fresh_vec(&mirror, &[2.5], FMT_SOFTMAX))
            .unwrap();
        assert_eq!(mirror.read_raw(&one[0]), 1 << 20);

        let outs = softmax(
            &mirror,
            &cfg.exp,
            &lut,
            &fresh_vec(&mirror, &[0.325; 4], FMT_SOFTMAX),
        )
        .unwrap();
        let first = mirror.read_raw(&outs[0]);
        for o in &outs {
            assert_eq!(mirror.read_raw(o), first);
            assert!((mirror.read_value(o) - 0.25).abs() <= (-12.0f64).exp2());
        }

        let vals = [1.75, -0.5, 3.0625, 0.0, -2.25, 1.0, 2.5, -1.125];
        let inputs = fresh_vec(&mirror, &vals, FMT_SOFTMAX);
        let outs = softmax(&mirror, &cfg.exp, &lut, &inputs).unwrap();
        let dec: Vec<f64> = inputs.iter().map(|v| mirror.read_value(v)).collect();
        let want = softmax_reference(&dec);
        let mut sum = 0.0;
        for (o, w) in outs.iter().zip(&want) {
            let got = mirror.read_value(o);
            assert!(got >= 0.0);
            assert!((got - w).abs() <= (-12.0f64).exp2(), "got {got}, want {w}");
            sum += got;
        }
        assert!((sum - 1.0).abs() <= 8.0 * (-12.0f64).exp2());

        // Shift invariance: a common offset leaves every z_i untouched.
        let shifted: Vec<f64> = vals.iter().map(|v| v + 7.25).collect();
        let outs2 =
            softmax(&mirror, &cfg.exp, &lut, &fresh_vec(&mirror, &shifted, FMT_SOFTMAX)).unwrap();
        for (a, b) in outs.iter().zip(&outs2) {
            assert_eq!(mirror.read_raw(a), mirror.read_raw(b));
        }
        assert!(mirror.take_flags().is_empty());
    }

    #[test]
    fn mirror_layernorm_matches_reference() {
        let cfg = FunctionEvalConfig::default();
        let lut = build_inv_sqrt_lut(&cfg.inv_sqrt).unwrap();
        let mirror = MirrorEngine::new(&ParameterSet::paper());

        // Constant input: zero variance, every output is beta exactly.
        let params = LayerNormParams::uniform(3, 0.5, 0.8125).unwrap();
        let outs = layernorm(
            &mirror,
            &cfg.inv_sqrt,
            &lut,
            &params,
            &fresh_vec(&mirror, &[1.25; 3], FMT_LAYERNORM),
        )
        .unwrap();
        for o in &outs {
            assert_eq!(mirror.read_raw(o), (0.8125 * (20.0f64).exp2()) as i128);
        }

        let params = LayerNormParams::uniform(2, 1.0, 0.0).unwrap();
        let outs = layernorm(
            &mirror,
            &cfg.inv_sqrt,
            &lut,
            &params,
            &fresh_vec(&mirror, &[-1.0, 1.0], FMT_LAYERNORM),
        )
        .unwrap();
        let want = 1.0 / (1.0 + LAYERNORM_EPSILON).sqrt();
        assert!((mirror.read_value(&outs[0]) + want).abs() <= (-10.0f64).exp2());
        assert!((mirror.read_value(&outs[1]) - want).abs() <= (-10.0f64).exp2());

        let mut rng = ChaCha8Rng::seed_from_u64(40);
        use rand::Rng;
        let n = 16;
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = LayerNormParams::new(gamma.clone(), beta.clone()).unwrap();
        let inputs = fresh_vec(&mirror, &vals, FMT_LAYERNORM);
        let outs = layernorm(&mirror, &cfg.inv_sqrt, &lut, &params, &inputs).unwrap();
        let dec: Vec<f64> = inputs.iter().map(|v| mirror.read_value(v)).collect();
        let want = layernorm_reference(&dec, &gamma, &beta);
        for (o, w) in outs.iter().zip(&want) {
            let got = mirror.read_value(o);
            assert!((got - w).abs() <= (-10.0f64).exp2(), "got {got}, want {w}");
        }

        // Unit gain, zero offset: outputs are centered.
        let params = LayerNormParams::uniform(n, 1.0, 0.0).unwrap();
        let outs = layernorm(&mirror, &cfg.inv_sqrt, &lut, &params, &inputs).unwrap();
        let mean: f64 = outs.iter().map(|o| mirror.read_value(o)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= (-10.0f64).exp2());
        assert!(mirror.take_flags().is_empty());
    }

    #[test]
    fn encrypted_layers_match_mirror() {
        let cfg = FunctionEvalConfig::default();
        let exp_lut = build_exp_lut(&cfg.exp).unwrap();
        let inv_lut = build_inv_sqrt_lut(&cfg.inv_sqrt).unwrap();
        let keys = toy_keys_arc();
        let policy = BatchPolicy { worker_count: 2, ..BatchPolicy::default() };
        let engine = EncryptedEngine::new(keys.clone(), policy).unwrap();
        let mirror = MirrorEngine::new(&ParameterSet::toy());
        let mut rng = ChaCha8Rng::seed_from_u64(17);

        let vals = [0.5, -0.25];
        let enc: Vec<FixedPointCiphertext> = vals
            .iter()
            .map(|&v| FixedPointCiphertext::encrypt(&keys.bundle, v, FMT_SOFTMAX, &mut rng).unwrap())
            .collect();
        let e_out = softmax(&engine, &cfg.exp, &exp_lut, &enc).unwrap();
        let m_out = softmax(&mirror, &cfg.exp, &exp_lut, &fresh_vec(&mirror, &vals, FMT_SOFTMAX))
            .unwrap();
        for (e, m) in e_out.iter().zip(&m_out) {
            assert_eq!(e.decrypt_blocks(&keys.bundle), mirror.read_blocks(m));
        }

        let vals = [-1.0, 1.0];
        let params = LayerNormParams::new(vec![1.25, -0.75], vec![0.5, 0.25]).unwrap();
        let enc: Vec<FixedPointCiphertext> = vals
            .iter()
            .map(|&v| {
                FixedPointCiphertext::encrypt(&keys.bundle, v, FMT_LAYERNORM, &mut rng).unwrap()
            })
            .collect();
        let e_out = layernorm(&engine, &cfg.inv_sqrt, &inv_lut, &params, &enc).unwrap();
        let m_out = layernorm(
            &mirror,
            &cfg.inv_sqrt,
            &inv_lut,
            &params,
            &fresh_vec(&mirror, &vals, FMT_LAYERNORM),
        )
        .unwrap();
        for (e, m) in e_out.iter().zip(&m_out) {
            assert_eq!(e.decrypt_blocks(&keys.bundle), mirror.read_blocks(m));
        }

        let es = engine.stats();
        let ms = mirror.stats();
        assert_eq!(es.pbs_l1, ms.pbs_l1);
        assert_eq!(es.pbs_l2, ms.pbs_l2);
        assert_eq!(es.keyswitches, ms.keyswitches);
        assert_eq!(es.wop_lookups, ms.wop_lookups);
        assert!(mirror.take_flags().is_empty());
    }

    #[test]
    fn layer_input_validation() {
        let cfg = FunctionEvalConfig::default();
        let exp_lut = build_exp_lut(&cfg.exp).unwrap();
        let inv_lut = build_inv_sqrt_lut(&cfg.inv_sqrt).unwrap();
        let mirror = MirrorEngine::new(&ParameterSet::paper());

        assert!(softmax(&mirror, &cfg.exp, &exp_lut, &[]).is_err());
        let wrong = mirror.fresh_value(1.0, FMT_EXP_ARG).unwrap();
        assert!(softmax(&mirror, &cfg.exp, &exp_lut, &[wrong]).is_err());

        let params = LayerNormParams::uniform(2, 1.0, 0.0).unwrap();
        let one = fresh_vec(&mirror, &[1.0], FMT_LAYERNORM);
        assert!(layernorm(&mirror, &cfg.inv_sqrt, &inv_lut, &params, &one).is_err());
        let three = fresh_vec(&mirror, &[1.0, 2.0, 3.0], FMT_LAYERNORM);
        assert!(layernorm(&mirror, &cfg.inv_sqrt, &inv_lut, &params, &three).is_err());
        assert!(LayerNormParams::new(vec![1.0], vec![f64::NAN]).is_err());
        assert!(LayerNormParams::new(vec![1.0, 2.0], vec![0.0]).is_err());
    }
}
