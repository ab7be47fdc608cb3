//! Bootstrapping primitives: external products, CMux, blind rotation,
//! modulus switching, test polynomials, key switching (plain and private
//! functional), and the programmable bootstrap pipelines.
//!
//! The multi-output bootstrap packs up to `nu` lookup tables into one test
//! polynomial: the mod-switched phase is rounded to a multiple of `nu`, so
//! coefficients 0..nu of the rotated accumulator each hold one table's
//! output. That costs a factor `nu` in mod-switch noise and saves a blind
//! rotation per extra table.

use std::sync::Arc;

use crate::cipher::{GgswCiphertext, GlweCiphertext, Level, LweCiphertext};
use crate::fft::{fourier_mul_add, C64, FftConfig, FourierPoly, TwistTable};
use crate::keys::{KeyBundle, KeyswitchKey, PfksKey};
use crate::params::GadgetParams;
use crate::poly::negacyclic_monomial_mul;
use crate::torus::{gadget_decompose_into, TorusWord};

/// One GLWE row of a GGSW in the frequency domain.
pub struct FourierGlweRow {
    pub mask: FourierPoly,
    pub body: FourierPoly,
}

/// GGSW ciphertext with all rows transformed, ready for external products.
pub struct FourierGgsw {
    pub gadget: GadgetParams,
    pub mask_rows: Vec<FourierGlweRow>,
    pub body_rows: Vec<FourierGlweRow>,
}

pub fn fourier_ggsw(g: &GgswCiphertext, table: &TwistTable, cfg: &FftConfig) -> FourierGgsw {
    let conv = |rows: &[GlweCiphertext]| {
        rows.iter()
            .map(|r| FourierGlweRow {
                mask: table.forward_torus(&r.mask, cfg),
                body: table.forward_torus(&r.body, cfg),
            })
            .collect()
    };
    FourierGgsw {
        gadget: g.gadget,
        mask_rows: conv(&g.mask_rows),
        body_rows: conv(&g.body_rows),
    }
}

/// Evaluation-ready key set: the key bundle plus frequency-domain copies of
/// the bootstrapping keys under one FFT configuration.
pub struct EvalKeys {
    pub bundle: Arc<KeyBundle>,
    pub cfg: FftConfig,
    pub table1: TwistTable,
    pub table2: TwistTable,
    pub fbk_cmux: Vec<FourierGgsw>,
    pub fbk_gpbs: Vec<FourierGgsw>,
    pub fbk_l2: Vec<FourierGgsw>,
}

impl EvalKeys {
    pub fn new(bundle: Arc<KeyBundle>, cfg: FftConfig) -> Self {
        let table1 = TwistTable::new(bundle.params.level1_poly_degree);
        let table2 = TwistTable::new(bundle.params.level2_poly_degree);
        let conv = |bk: &crate::keys::BootstrapKey, t: &TwistTable| {
            bk.ggsws.iter().map(|g| fourier_ggsw(g, t, &cfg)).collect()
        };
        let fbk_cmux = conv(&bundle.bk_cmux, &table1);
        let fbk_gpbs = conv(&bundle.bk_gpbs, &table1);
        let fbk_l2 = conv(&bundle.bk_l2, &table2);
        Self { bundle, cfg, table1, table2, fbk_cmux, fbk_gpbs, fbk_l2 }
    }

    pub fn table_for(&self, level: Level) -> &TwistTable {
        match level {
            Level::L1 => &self.table1,
            Level::L2 => &self.table2,
            Level::L0 => panic!("level 0 has no ring"),
        }
    }
}

/// GLWE x GGSW external product. Digit polynomials that are entirely zero
/// skip their transform, which matters for sparse accumulators.
pub fn external_product(
    inp: &GlweCiphertext,
    ggsw: &FourierGgsw,
    table: &TwistTable,
    cfg: &FftConfig,
) -> GlweCiphertext {
    let n = inp.degree();
    let l = ggsw.gadget.level_count;
    let mut facc_mask = vec![C64::default(); n / 2];
    let mut facc_body = vec![C64::default(); n / 2];
    let mut digit_polys = vec![vec![0i64; n]; l];
    let mut digits = vec![0i64; l];
    for (poly, rows) in [(&inp.mask, &ggsw.mask_rows), (&inp.body, &ggsw.body_rows)] {
        for p in &mut digit_polys {
            p.fill(0);
        }
        for (t, &x) in poly.iter().enumerate() {
            if x == 0 {
                continue;
            }
            gadget_decompose_into(x, ggsw.gadget, &mut digits);
            for j in 0..l {
                digit_polys[j][t] = digits[j];
            }
        }
        for (dp, row) in digit_polys.iter().zip(rows) {
            if dp.iter().all(|&d| d == 0) {
                continue;
            }
            let fd = table.forward_i64(dp, cfg);
            fourier_mul_add(&mut facc_mask, &fd, &row.mask, cfg);
            fourier_mul_add(&mut facc_body, &fd, &row.body, cfg);
        }
    }
    GlweCiphertext {
        level: inp.level,
        mask: table.backward_torus(facc_mask, cfg),
        body: table.backward_torus(facc_body, cfg),
    }
}

/// CMux: returns c0 when the GGSW encrypts 0, c1 when it encrypts 1.
pub fn cmux(
    c0: &GlweCiphertext,
    c1: &GlweCiphertext,
    sel: &FourierGgsw,
    table: &TwistTable,
    cfg: &FftConfig,
) -> GlweCiphertext {
    let mut diff = c1.clone();
    diff.sub_assign(c0);
    let mut out = external_product(&diff, sel, table, cfg);
    out.add_assign(c0);
    out
}

/// Mod-switched LWE: rotation indices in [0, 2N), already rounded to
/// multiples of `nu`.
pub struct ModSwitched {
    pub b: usize,
    pub a: Vec<usize>,
}

/// Rounds each coefficient to the 2N/nu grid (ties up) and scales back by
/// nu, so every rotation index is a multiple of nu.
pub fn mod_switch(ct: &LweCiphertext, poly_degree: usize, nu: usize) -> ModSwitched {
    debug_assert!(nu.is_power_of_two());
    let bits = poly_degree.trailing_zeros() + 1;
    let nu_bits = nu.trailing_zeros();
    let shift = 64 - bits + nu_bits;
    let wrap = 2 * poly_degree - 1;
    let round = |x: TorusWord| -> usize {
        let t = ((x >> (shift - 1)).wrapping_add(1) >> 1) as usize;
        (t << nu_bits) & wrap
    };
    ModSwitched { b: round(ct.body), a: ct.mask.iter().map(|&x| round(x)).collect() }
}

/// In-place blind rotation: acc <- X^{-b} * acc, then one CMux per key bit
/// folding in X^{a_i}.
pub fn blind_rotate(
    acc: &mut GlweCiphertext,
    ms: &ModSwitched,
    fbk: &[FourierGgsw],
    table: &TwistTable,
    cfg: &FftConfig,
) {
    debug_assert_eq!(ms.a.len(), fbk.len());
    let n = acc.degree();
    let mut rot = GlweCiphertext::zero(n, acc.level);
    rot.rotate_from(acc, 2 * n - ms.b);
    std::mem::swap(acc, &mut rot);
    for (&a, ggsw) in ms.a.iter().zip(fbk) {
        if a == 0 {
            continue;
        }
        rot.rotate_from(acc, a);
        rot.sub_assign(acc);
        let prod = external_product(&rot, ggsw, table, cfg);
        acc.add_assign(&prod);
    }
}

/// Test polynomial for blind-rotation lookups.
///
/// `input_bits` counts payload bits below one zero padding bit: value box m
/// covers phase [m - 1/2, m + 1/2) * 2^-(input_bits + 1), so an input
/// encrypted as `m << (63 - input_bits)` lands in box m. For `nu = 1`, box m
/// holds f(m) in all its slots and the polynomial is pre-rotated by half a
/// box so centered noise stays inside the box. For packed tables, slot u of
/// each nu-aligned group holds f_u(m); unused slots of a group are zero and
/// never extracted.
pub struct TestPolynomial {
    pub input_bits: u32,
    pub nu: usize,
    pub body: Vec<TorusWord>,
}

impl TestPolynomial {
    pub fn single(degree: usize, input_bits: u32, f: &dyn Fn(u64) -> TorusWord) -> Self {
        Self::many(degree, input_bits, &[f])
    }

    pub fn many(degree: usize, input_bits: u32, fs: &[&dyn Fn(u64) -> TorusWord]) -> Self {
        let boxsz = degree >> input_bits;
        let nu = fs.len().next_power_of_two();
        assert!(boxsz >= 2 * nu, "box too small: degree 2^-{input_bits} vs {} tables", fs.len());
        debug_assert_eq!((boxsz / 2) % nu, 0);
        let mut v = vec![0u64; degree];
        for m in 0..(1u64 << input_bits) {
            let base = m as usize * boxsz;
            for t in (0..boxsz).step_by(nu) {
                for (u, f) in fs.iter().enumerate() {
                    v[base + t + u] = f(m);
                }
            }
        }
        let mut body = vec![0u64; degree];
        negacyclic_monomial_mul(&mut body, &v, 2 * degree - boxsz / 2);
        Self { input_bits, nu, body }
    }

    pub fn to_accumulator(&self, level: Level) -> GlweCiphertext {
        GlweCiphertext::trivial(self.body.clone(), level)
    }

    /// Sign lookup: slot u of every nu-aligned group holds -consts[u], with
    /// no half-box centering. After rotation, coefficient u is -consts[u]
    /// when the phase sits in [0, 1/2) and +consts[u] in [-1/2, 0), so
    /// `extract + add consts[u]` maps a top-bit message to bit * 2*consts[u]
    /// with a quarter-torus noise margin either way.
    pub fn sign_many(degree: usize, consts: &[TorusWord]) -> Self {
        let nu = consts.len().next_power_of_two();
        let mut body = vec![0u64; degree];
        for t in (0..degree).step_by(nu) {
            for (u, &c) in consts.iter().enumerate() {
                body[t + u] = c.wrapping_neg();
            }
        }
        Self { input_bits: 1, nu, body }
    }
}

/// LWE-to-LWE key switch.
pub fn keyswitch(ct: &LweCiphertext, ksk: &KeyswitchKey) -> LweCiphertext {
    debug_assert_eq!(ct.dim(), ksk.in_dim);
    let out_dim = ksk.out_dim;
    let mut out = LweCiphertext::trivial(ct.body, out_dim, ksk.out_level);
    let l = ksk.gadget.level_count;
    let mut digits = vec![0i64; l];
    for (i, &a) in ct.mask.iter().enumerate() {
        if a == 0 {
            continue;
        }
        gadget_decompose_into(a, ksk.gadget, &mut digits);
        for (j, &d) in digits.iter().enumerate() {
            if d == 0 {
                continue;
            }
            let row = ksk.row(i, j);
            mac_sub(&mut out.mask, &mut out.body, row, out_dim, d);
        }
    }
    out
}

/// Private functional key switch of one LWE ciphertext into a GLWE under
/// the output key, applying the key's linear function to the phase.
pub fn private_functional_keyswitch(ct: &LweCiphertext, key: &PfksKey) -> GlweCiphertext {
    debug_assert_eq!(ct.dim(), key.in_dim);
    let n = key.degree;
    let l = key.gadget.level_count;
    let mut out = GlweCiphertext::zero(n, Level::L1);
    let mut digits = vec![0i64; l];
    // Body contributes +f(1)*b via the extra row; mask coefficients
    // contribute -f(s_i)*a_i.
    let mut apply = |i: usize, x: TorusWord, negate: bool| {
        if x == 0 {
            return;
        }
        gadget_decompose_into(x, key.gadget, &mut digits);
        for (j, &d) in digits.iter().enumerate() {
            let d = if negate { -d } else { d };
            if d == 0 {
                continue;
            }
            let (mask_p, body_p) = key.row(i, j);
            poly_mac(&mut out.mask, mask_p, d);
            poly_mac(&mut out.body, body_p, d);
        }
    };
    for (i, &a) in ct.mask.iter().enumerate() {
        apply(i, a, true);
    }
    apply(key.in_dim, ct.body, false);
    out
}

#[inline]
fn poly_mac(acc: &mut [TorusWord], poly: &[TorusWord], d: i64) {
    match d {
        1 => {
            for (a, &p) in acc.iter_mut().zip(poly) {
                *a = a.wrapping_add(p);
            }
        }
        -1 => {
            for (a, &p) in acc.iter_mut().zip(poly) {
                *a = a.wrapping_sub(p);
            }
        }
        _ => {
            let k = d as u64;
            for (a, &p) in acc.iter_mut().zip(poly) {
                *a = a.wrapping_add(k.wrapping_mul(p));
            }
        }
    }
}

#[inline]
fn mac_sub(mask: &mut [TorusWord], body: &mut TorusWord, row: &[TorusWord], out_dim: usize, d: i64) {
    let k = d as u64;
    match d {
        1 => {
            for (m, &r) in mask.iter_mut().zip(row) {
                *m = m.wrapping_sub(r);
            }
            *body = body.wrapping_sub(row[out_dim]);
        }
        -1 => {
            for (m, &r) in mask.iter_mut().zip(row) {
                *m = m.wrapping_add(r);
            }
            *body = body.wrapping_add(row[out_dim]);
        }
        _ => {
            for (m, &r) in mask.iter_mut().zip(row) {
                *m = m.wrapping_sub(k.wrapping_mul(r));
            }
            *body = body.wrapping_sub(k.wrapping_mul(row[out_dim]));
        }
    }
}

/// Standard programmable bootstrap. Input lives at level 1 (a radix block);
/// `target` selects the output ring: level 1 runs the general-purpose key
/// after the matching key switch, level 2 runs the high-precision key fed by
/// the CMux-grade key switch (the circuit-bootstrap front end).
pub fn programmable_bootstrap(
    ct: &LweCiphertext,
    table: &TestPolynomial,
    keys: &EvalKeys,
    target: Level,
) -> LweCiphertext {
    pbs_many_lut(ct, table, keys, target, 1).pop().expect("one output")
}

/// Multi-output bootstrap: one blind rotation, `outputs` extractions.
pub fn pbs_many_lut(
    ct: &LweCiphertext,
    table: &TestPolynomial,
    keys: &EvalKeys,
    target: Level,
    outputs: usize,
) -> Vec<LweCiphertext> {
    debug_assert_eq!(ct.level, Level::L1);
    debug_assert!(outputs <= table.nu);
    let (ksk, fbk) = match target {
        Level::L1 => (&keys.bundle.ksk_gpbs, &keys.fbk_gpbs),
        Level::L2 => (&keys.bundle.ksk_cmux, &keys.fbk_l2),
        Level::L0 => panic!("cannot bootstrap to level 0"),
    };
    let ring = keys.table_for(target);
    let degree = ring.poly_degree();
    debug_assert_eq!(table.body.len(), degree);
    let low = keyswitch(ct, ksk);
    let ms = mod_switch(&low, degree, table.nu);
    let mut acc = table.to_accumulator(target);
    blind_rotate(&mut acc, &ms, fbk, ring, &keys.cfg);
    (0..outputs).map(|u| acc.sample_extract(u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{BLOCK_DELTA_LOG, RADIX_TOTAL_BITS};
    use crate::testutil::toy_keys;
    use crate::torus::{decode_plain, encode_plain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enc_block(keys: &EvalKeys, v: u64, rng: &mut impl Rng) -> LweCiphertext {
        keys.bundle.encrypt_lwe(v << BLOCK_DELTA_LOG, Level::L1, rng)
    }

    fn dec_block(keys: &EvalKeys, ct: &LweCiphertext) -> u64 {
        decode_plain(keys.bundle.decrypt_lwe(ct), RADIX_TOTAL_BITS + 1) & 0xF
    }

    #[test]
    fn test_polynomial_box_boundaries() {
        let degree = 256;
        let bits = 4;
        let boxsz = degree >> bits;
        let f = |m: u64| encode_plain((3 * m) & 0xF, 5);
        let tp = TestPolynomial::single(degree, bits, &f);
        let mut rotated = vec![0u64; degree];
        for m in 0..(1u64 << bits) {
            let center = m as usize * boxsz;
            // Noise up to half a box on either side still lands in the box.
            for delta in [-(boxsz as i64) / 2, 0, boxsz as i64 / 2 - 1] {
                let p = (center as i64 + delta).rem_euclid(2 * degree as i64) as usize;
                negacyclic_monomial_mul(&mut rotated, &tp.body, 2 * degree - p);
                assert_eq!(rotated[0], f(m), "m={m} delta={delta}");
            }
        }
    }

    #[test]
    fn test_polynomial_many_packs_tables() {
        let degree = 256;
        let bits = 4;
        let boxsz = degree >> bits;
        let f0 = |m: u64| encode_plain(m & 0x7, 5);
        let f1 = |m: u64| encode_plain((m + 1) & 0x7, 5);
        let f2 = |m: u64| encode_plain((7 * m) & 0x7, 5);
        let tp = TestPolynomial::many(degree, bits, &[&f0, &f1, &f2]);
        assert_eq!(tp.nu, 4);
        let mut rotated = vec![0u64; degree];
        for m in 0..(1u64 << bits) {
            // Mod switch rounds to multiples of nu, so test those phases.
            let extremes = [0i64, -(boxsz as i64) / 2, boxsz as i64 / 2 - tp.nu as i64];
            for delta in extremes {
                let p = (m as i64 * boxsz as i64 + delta).rem_euclid(2 * degree as i64) as usize;
                negacyclic_monomial_mul(&mut rotated, &tp.body, 2 * degree - p);
                assert_eq!(rotated[0], f0(m), "f0 m={m} delta={delta}");
                assert_eq!(rotated[1], f1(m), "f1 m={m} delta={delta}");
                assert_eq!(rotated[2], f2(m), "f2 m={m} delta={delta}");
            }
        }
    }

    #[test]
    fn mod_switch_rounds_and_aligns() {
        let degree = 256usize;
        let mut ct = LweCiphertext::trivial(0, 2, Level::L0);
        // Exactly representable: index 12 of 512.
        ct.body = 12u64 << (64 - 9);
        ct.mask[0] = (5u64 << (64 - 9)) + (1 << (64 - 10)); // halfway -> rounds up to 6
        ct.mask[1] = u64::MAX; // just below 0 -> rounds to 0 (wrap)
        let ms = mod_switch(&ct, degree, 1);
        assert_eq!(ms.b, 12);
        assert_eq!(ms.a, vec![6, 0]);
        let ms4 = mod_switch(&ct, degree, 4);
        assert_eq!(ms4.b, 12);
        assert_eq!(ms4.a[0], 4); // 5.5/4 = 1.375 rounds to 1, scaled back by 4
    }

    #[test]
    fn external_product_selects_bit() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = keys.bundle.params.level1_poly_degree;
        let msg: Vec<u64> = (0..n).map(|i| encode_plain((i % 8) as u64, 4)).collect();
        let glwe = keys.bundle.encrypt_glwe(&msg, Level::L1, &mut rng);
        for bit in [0u64, 1] {
            let ggsw = keys.bundle.encrypt_ggsw(bit, Level::L1, keys.bundle.params.bk_cmux, &mut rng);
            let fg = fourier_ggsw(&ggsw, &keys.table1, &keys.cfg);
            let prod = external_product(&glwe, &fg, &keys.table1, &keys.cfg);
            let phase = keys.bundle.decrypt_glwe(&prod);
            for (t, p) in phase.iter().enumerate() {
                let want = if bit == 1 { (t % 8) as u64 } else { 0 };
                assert_eq!(decode_plain(*p, 4), want, "bit={bit} t={t}");
            }
        }
    }

    #[test]
    fn cmux_picks_branch() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = keys.bundle.params.level1_poly_degree;
        let m0: Vec<u64> = vec![encode_plain(3, 4); n];
        let m1: Vec<u64> = vec![encode_plain(9, 4); n];
        let c0 = keys.bundle.encrypt_glwe(&m0, Level::L1, &mut rng);
        let c1 = keys.bundle.encrypt_glwe(&m1, Level::L1, &mut rng);
        for bit in [0u64, 1] {
            let ggsw = keys.bundle.encrypt_ggsw(bit, Level::L1, keys.bundle.params.bk_cmux, &mut rng);
            let fg = fourier_ggsw(&ggsw, &keys.table1, &keys.cfg);
            let out = cmux(&c0, &c1, &fg, &keys.table1, &keys.cfg);
            let phase = keys.bundle.decrypt_glwe(&out);
            let want = if bit == 1 { 9 } else { 3 };
            assert_eq!(decode_plain(phase[0], 4), want);
        }
    }

    #[test]
    fn keyswitch_preserves_messages() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for (ksk, level_in) in [
            (&keys.bundle.ksk_gpbs, Level::L1),
            (&keys.bundle.ksk_cmux, Level::L1),
            (&keys.bundle.ksk_l2_l1, Level::L2),
        ] {
            for msg in [0u64, 1, 15, 30] {
                let ct = keys.bundle.encrypt_lwe(encode_plain(msg, 5), level_in, &mut rng);
                let out = keyswitch(&ct, ksk);
                assert_eq!(out.level, ksk.out_level);
                let phase = keys.bundle.decrypt_lwe(&out);
                assert_eq!(decode_plain(phase, 5), msg);
            }
        }
    }

    #[test]
    fn pfks_applies_key_functions() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let scale = 1u64 << 58;
        for mu in [0u64, 1] {
            let ct = keys.bundle.encrypt_lwe(mu * scale, Level::L2, &mut rng);
            // Identity function: body gets mu * scale at X^0.
            let out = private_functional_keyswitch(&ct, &keys.bundle.pfks_body);
            let phase = keys.bundle.decrypt_glwe(&out);
            assert_eq!(decode_plain(phase[0], 6), mu, "body key, coeff 0");
            for t in 1..phase.len() {
                assert_eq!(decode_plain(phase[t], 6), 0, "body key, coeff {t}");
            }
            // Negated-key function: phase should be -mu * scale * S1.
            let out = private_functional_keyswitch(&ct, &keys.bundle.pfks_mask);
            let phase = keys.bundle.decrypt_glwe(&out);
            for (t, p) in phase.iter().enumerate() {
                let sbit = keys.bundle.sk1.bits[t];
                let want = p.wrapping_add(mu * sbit * scale);
                assert_eq!(decode_plain(want, 6), 0, "mask key, coeff {t}");
            }
        }
    }

    #[test]
    fn pbs_evaluates_block_functions() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let degree = keys.bundle.params.level1_poly_degree;
        let msg_lut = TestPolynomial::single(degree, RADIX_TOTAL_BITS, &|m| {
            (m & 0x3) << BLOCK_DELTA_LOG
        });
        let carry_lut =
            TestPolynomial::single(degree, RADIX_TOTAL_BITS, &|m| (m >> 2) << BLOCK_DELTA_LOG);
        for v in 0..16u64 {
            let ct = enc_block(keys, v, &mut rng);
            let m = programmable_bootstrap(&ct, &msg_lut, keys, Level::L1);
            let c = programmable_bootstrap(&ct, &carry_lut, keys, Level::L1);
            assert_eq!(dec_block(keys, &m), v & 0x3, "msg of {v}");
            assert_eq!(dec_block(keys, &c), v >> 2, "carry of {v}");
        }
    }

    #[test]
    fn pbs_many_lut_extracts_all_tables() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let degree = keys.bundle.params.level1_poly_degree;
        let f0 = |m: u64| (m & 0x3) << BLOCK_DELTA_LOG;
        let f1 = |m: u64| (m >> 2) << BLOCK_DELTA_LOG;
        let tp = TestPolynomial::many(degree, RADIX_TOTAL_BITS, &[&f0, &f1]);
        for v in [0u64, 3, 7, 12, 15] {
            let ct = enc_block(keys, v, &mut rng);
            let outs = pbs_many_lut(&ct, &tp, keys, Level::L1, 2);
            assert_eq!(dec_block(keys, &outs[0]), v & 0x3);
            assert_eq!(dec_block(keys, &outs[1]), v >> 2);
        }
    }

    #[test]
    fn sign_lut_to_level2_recovers_bit_at_gadget_scales() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let degree = keys.bundle.params.level2_poly_degree;
        // Three gadget scales of the CMux-grade GGSW, as circuit
        // bootstrapping packs them: c_j = q / (2 * 64^(j+1)).
        let consts: Vec<u64> = (0..3).map(|j| 1u64 << (57 - 6 * j)).collect();
        let tp = TestPolynomial::sign_many(degree, &consts);
        assert_eq!(tp.nu, 4);
        for bit in [0u64, 1] {
            let ct = keys.bundle.encrypt_lwe(bit << 63, Level::L1, &mut rng);
            let outs = pbs_many_lut(&ct, &tp, keys, Level::L2, 3);
            for (j, out) in outs.iter().enumerate() {
                assert_eq!(out.level, Level::L2);
                let phase = keys.bundle.decrypt_lwe(out).wrapping_add(consts[j]);
                let bits = 6 * (j as u32 + 1);
                assert_eq!(decode_plain(phase, bits), bit, "bit={bit} level {j}");
            }
        }
    }

    #[test]
    fn blind_rotate_with_cmux_key() {
        let keys = toy_keys();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let degree = keys.bundle.params.level1_poly_degree;
        let tp = TestPolynomial::single(degree, RADIX_TOTAL_BITS, &|m| {
            ((15 - m) & 0xF) << BLOCK_DELTA_LOG
        });
        for v in [0u64, 5, 15] {
            let ct = enc_block(keys, v, &mut rng);
            let low = keyswitch(&ct, &keys.bundle.ksk_cmux);
            let ms = mod_switch(&low, degree, 1);
            let mut acc = tp.to_accumulator(Level::L1);
            blind_rotate(&mut acc, &ms, &keys.fbk_cmux, &keys.table1, &keys.cfg);
            let out = acc.sample_extract(0);
            assert_eq!(dec_block(keys, &out), 15 - v);
        }
    }
}
