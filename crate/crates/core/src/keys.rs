//! Secret keys, evaluation key material, and key generation.
//!
//! All randomness flows from one seed through independent ChaCha streams,
//! one per key-material section, so generation is reproducible and
//! insensitive to loop restructuring.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::cipher::{GgswCiphertext, GlweCiphertext, Level, LweCiphertext};
use crate::error::{Error, Result};
use crate::params::{GadgetParams, KeySpec, ParameterSet};
use crate::poly::negacyclic_binary_mul;
use crate::torus::{sample_gaussian, sample_gaussian_vec, TorusWord};

/// Binary secret key; `positions` caches the indices of the one bits for
/// rotation-add polynomial products.
pub struct SecretKey {
    pub bits: Vec<u64>,
    pub positions: Vec<usize>,
}

impl SecretKey {
    pub(crate) fn from_bits(bits: Vec<u64>) -> Self {
        let positions = bits.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect();
        Self { bits, positions }
    }

    fn sample<R: Rng>(dim: usize, weight: Option<usize>, rng: &mut R) -> Self {
        let bits = match weight {
            None => (0..dim).map(|_| rng.gen_range(0..2u64)).collect(),
            Some(w) => {
                let mut bits = vec![0u64; dim];
                for i in index_sample(rng, dim, w) {
                    bits[i] = 1;
                }
                bits
            }
        };
        Self::from_bits(bits)
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    /// Inner product with an LWE mask, in the torus.
    fn dot(&self, mask: &[TorusWord]) -> TorusWord {
        debug_assert_eq!(mask.len(), self.bits.len());
        self.positions.iter().fold(0u64, |acc, &i| acc.wrapping_add(mask[i]))
    }
}

/// LWE-to-LWE key switching key: for each input key bit i and gadget level
/// j, an encryption of s_in[i] * g_j under the output key. Rows are stored
/// flat, mask words then body.
pub struct KeyswitchKey {
    pub out_level: Level,
    pub gadget: GadgetParams,
    pub in_dim: usize,
    pub out_dim: usize,
    data: Vec<TorusWord>,
}

impl KeyswitchKey {
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> &[TorusWord] {
        let w = self.out_dim + 1;
        let start = (i * self.gadget.level_count + j) * w;
        &self.data[start..start + w]
    }

    pub(crate) fn words(&self) -> &[TorusWord] {
        &self.data
    }

    pub(crate) fn from_words(
        out_level: Level,
        gadget: GadgetParams,
        in_dim: usize,
        out_dim: usize,
        data: Vec<TorusWord>,
    ) -> Result<Self> {
        if data.len() != in_dim * gadget.level_count * (out_dim + 1) {
            return Err(Error::Decode("keyswitch key length mismatch".into()));
        }
        Ok(Self { out_level, gadget, in_dim, out_dim, data })
    }
}

/// Bootstrapping key: one GGSW per input key bit, over the output ring.
pub struct BootstrapKey {
    pub out_level: Level,
    pub gadget: GadgetParams,
    pub ggsws: Vec<GgswCiphertext>,
}

/// Private functional keyswitch key realizing one linear function f:
/// for i < in_dim, GLWE encryptions of f(s_in[i]) * g_j; the extra i =
/// in_dim row holds f(1) * g_j for the body term. Rows are stored flat as
/// (mask poly, body poly) pairs.
pub struct PfksKey {
    pub gadget: GadgetParams,
    pub in_dim: usize,
    pub degree: usize,
    data: Vec<TorusWord>,
}

impl PfksKey {
    #[inline]
    pub fn row(&self, i: usize, j: usize) -> (&[TorusWord], &[TorusWord]) {
        let w = 2 * self.degree;
        let start = (i * self.gadget.level_count + j) * w;
        let row = &self.data[start..start + w];
        row.split_at(self.degree)
    }

    pub(crate) fn words(&self) -> &[TorusWord] {
        &self.data
    }

    pub(crate) fn from_words(
        gadget: GadgetParams,
        in_dim: usize,
        degree: usize,
        data: Vec<TorusWord>,
    ) -> Result<Self> {
        if data.len() != (in_dim + 1) * gadget.level_count * 2 * degree {
            return Err(Error::Decode("functional keyswitch key length mismatch".into()));
        }
        Ok(Self { gadget, in_dim, degree, data })
    }
}

/// Everything key generation produces for one parameter set.
pub struct KeyBundle {
    pub params: ParameterSet,
    pub sk0: SecretKey,
    pub sk1: SecretKey,
    pub sk2: SecretKey,
    pub bk_cmux: BootstrapKey,
    pub bk_gpbs: BootstrapKey,
    pub bk_l2: BootstrapKey,
    pub ksk_cmux: KeyswitchKey,
    pub ksk_gpbs: KeyswitchKey,
    pub ksk_l2_l1: KeyswitchKey,
    pub pfks_mask: PfksKey,
    pub pfks_body: PfksKey,
}

/// Deterministic stream factory over one master seed.
struct KeyRng {
    seed: <ChaCha12Rng as SeedableRng>::Seed,
}

impl KeyRng {
    fn new(seed: u64) -> Self {
        let mut boot = ChaCha12Rng::seed_from_u64(seed);
        let mut s = [0u8; 32];
        boot.fill(&mut s);
        Self { seed: s }
    }

    fn stream(&self, id: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_stream(id);
        rng
    }
}

/// Generates the full key bundle for `params` from `seed`.
pub fn keygen(params: &ParameterSet, seed: u64) -> Result<KeyBundle> {
    params.check()?;
    let streams = KeyRng::new(seed);

    let mut rng = streams.stream(0);
    let sk0 = SecretKey::sample(params.level0_lwe_dim, params.level0_key_weight, &mut rng);
    let sk1 = SecretKey::sample(params.level1_poly_degree, None, &mut rng);
    let sk2 = SecretKey::sample(params.level2_poly_degree, None, &mut rng);

    let bk_cmux = gen_bootstrap_key(
        &sk0,
        &sk1,
        params.level1_poly_degree,
        Level::L1,
        params.bk_cmux,
        &mut streams.stream(1),
    );
    let bk_gpbs = gen_bootstrap_key(
        &sk0,
        &sk1,
        params.level1_poly_degree,
        Level::L1,
        params.bk_gpbs,
        &mut streams.stream(2),
    );
    let bk_l2 = gen_bootstrap_key(
        &sk0,
        &sk2,
        params.level2_poly_degree,
        Level::L2,
        params.bk_l2,
        &mut streams.stream(3),
    );

    let ksk_cmux = gen_keyswitch_key(&sk1, &sk0, Level::L0, params.ksk_cmux, &mut streams.stream(4));
    let ksk_gpbs = gen_keyswitch_key(&sk1, &sk0, Level::L0, params.ksk_gpbs, &mut streams.stream(5));
    let ksk_l2_l1 =
        gen_keyswitch_key(&sk2, &sk1, Level::L1, params.ksk_l2_l1, &mut streams.stream(6));

    let pfks_mask = gen_pfks_key(&sk2, &sk1, params.pfks, PfksFunction::NegKey, &mut streams.stream(7));
    let pfks_body = gen_pfks_key(&sk2, &sk1, params.pfks, PfksFunction::Identity, &mut streams.stream(8));

    Ok(KeyBundle {
        params: params.clone(),
        sk0,
        sk1,
        sk2,
        bk_cmux,
        bk_gpbs,
        bk_l2,
        ksk_cmux,
        ksk_gpbs,
        ksk_l2_l1,
        pfks_mask,
        pfks_body,
    })
}

/// GLWE encryption of zero under `sk`, written directly into fresh buffers.
fn glwe_zero<R: Rng>(
    sk: &SecretKey,
    degree: usize,
    level: Level,
    sigma: f64,
    rng: &mut R,
) -> GlweCiphertext {
    let mask: Vec<TorusWord> = (0..degree).map(|_| rng.gen()).collect();
    let mut body = negacyclic_binary_mul(&mask, &sk.positions);
    let noise = sample_gaussian_vec(sigma, degree, rng);
    for (b, e) in body.iter_mut().zip(noise) {
        *b = b.wrapping_add(e);
    }
    GlweCiphertext { level, mask, body }
}

/// GGSW encryption of a bit under the given GLWE key.
fn encrypt_ggsw_bit<R: Rng>(
    bit: u64,
    sk: &SecretKey,
    degree: usize,
    level: Level,
    spec: KeySpec,
    rng: &mut R,
) -> GgswCiphertext {
    debug_assert!(bit <= 1);
    let l = spec.gadget.level_count;
    let mut mask_rows = Vec::with_capacity(l);
    let mut body_rows = Vec::with_capacity(l);
    for j in 0..l {
        let g = 1u64 << spec.gadget.level_scale_log(j);
        let mut mr = glwe_zero(sk, degree, level, spec.sigma, rng);
        mr.mask[0] = mr.mask[0].wrapping_add(bit.wrapping_mul(g));
        mask_rows.push(mr);
        let mut br = glwe_zero(sk, degree, level, spec.sigma, rng);
        br.body[0] = br.body[0].wrapping_add(bit.wrapping_mul(g));
        body_rows.push(br);
    }
    GgswCiphertext { gadget: spec.gadget, mask_rows, body_rows }
}

fn gen_bootstrap_key<R: Rng>(
    sk_in: &SecretKey,
    sk_out: &SecretKey,
    degree: usize,
    out_level: Level,
    spec: KeySpec,
    rng: &mut R,
) -> BootstrapKey {
    let ggsws = sk_in
        .bits
        .iter()
        .map(|&bit| encrypt_ggsw_bit(bit, sk_out, degree, out_level, spec, rng))
        .collect();
    BootstrapKey { out_level, gadget: spec.gadget, ggsws }
}

fn gen_keyswitch_key<R: Rng>(
    sk_in: &SecretKey,
    sk_out: &SecretKey,
    out_level: Level,
    spec: KeySpec,
    rng: &mut R,
) -> KeyswitchKey {
    let in_dim = sk_in.dim();
    let out_dim = sk_out.dim();
    let l = spec.gadget.level_count;
    let mut data = Vec::with_capacity(in_dim * l * (out_dim + 1));
    for &bit in &sk_in.bits {
        for j in 0..l {
            let g = 1u64 << spec.gadget.level_scale_log(j);
            let mask: Vec<TorusWord> = (0..out_dim).map(|_| rng.gen()).collect();
            let body = sk_out
                .dot(&mask)
                .wrapping_add(sample_gaussian(spec.sigma, rng))
                .wrapping_add(bit.wrapping_mul(g));
            data.extend_from_slice(&mask);
            data.push(body);
        }
    }
    KeyswitchKey { out_level, gadget: spec.gadget, in_dim, out_dim, data }
}

enum PfksFunction {
    /// f(x) = -S_out * x (produces GGSW mask rows).
    NegKey,
    /// f(x) = x (produces GGSW body rows).
    Identity,
}

fn gen_pfks_key<R: Rng>(
    sk_in: &SecretKey,
    sk_out: &SecretKey,
    spec: KeySpec,
    f: PfksFunction,
    rng: &mut R,
) -> PfksKey {
    let in_dim = sk_in.dim();
    let degree = sk_out.dim();
    let l = spec.gadget.level_count;
    let mut data = Vec::with_capacity((in_dim + 1) * l * 2 * degree);
    for i in 0..=in_dim {
        let coeff = if i < in_dim { sk_in.bits[i] } else { 1 };
        for j in 0..l {
            let g = 1u64 << spec.gadget.level_scale_log(j);
            let mut row = glwe_zero(sk_out, degree, Level::L1, spec.sigma, rng);
            if coeff == 1 {
                match f {
                    PfksFunction::NegKey => {
                        for &p in &sk_out.positions {
                            row.body[p] = row.body[p].wrapping_sub(g);
                        }
                    }
                    PfksFunction::Identity => {
                        row.body[0] = row.body[0].wrapping_add(g);
                    }
                }
            }
            data.extend_from_slice(&row.mask);
            data.extend_from_slice(&row.body);
        }
    }
    PfksKey { gadget: spec.gadget, in_dim, degree, data }
}

impl KeyBundle {
    pub fn secret_key(&self, level: Level) -> &SecretKey {
        match level {
            Level::L0 => &self.sk0,
            Level::L1 => &self.sk1,
            Level::L2 => &self.sk2,
        }
    }

    /// Encrypts a torus word at the level's fresh noise.
    pub fn encrypt_lwe<R: Rng>(&self, word: TorusWord, level: Level, rng: &mut R) -> LweCiphertext {
        self.encrypt_lwe_sigma(word, level, level.fresh_sigma(&self.params), rng)
    }

    pub fn encrypt_lwe_sigma<R: Rng>(
        &self,
        word: TorusWord,
        level: Level,
        sigma: f64,
        rng: &mut R,
    ) -> LweCiphertext {
        let sk = self.secret_key(level);
        let mask: Vec<TorusWord> = (0..sk.dim()).map(|_| rng.gen()).collect();
        let body = sk.dot(&mask).wrapping_add(sample_gaussian(sigma, rng)).wrapping_add(word);
        LweCiphertext { level, mask, body }
    }

    /// Returns the phase (message plus noise) of an LWE ciphertext.
    pub fn decrypt_lwe(&self, ct: &LweCiphertext) -> TorusWord {
        let sk = self.secret_key(ct.level);
        ct.body.wrapping_sub(sk.dot(&ct.mask))
    }

    pub fn encrypt_glwe<R: Rng>(
        &self,
        message: &[TorusWord],
        level: Level,
        rng: &mut R,
    ) -> GlweCiphertext {
        let sk = self.secret_key(level);
        let mut ct = glwe_zero(sk, message.len(), level, level.fresh_sigma(&self.params), rng);
        for (b, m) in ct.body.iter_mut().zip(message) {
            *b = b.wrapping_add(*m);
        }
        ct
    }

    /// Returns the phase polynomial of a GLWE ciphertext.
    pub fn decrypt_glwe(&self, ct: &GlweCiphertext) -> Vec<TorusWord> {
        let sk = self.secret_key(ct.level);
        let mut acc = negacyclic_binary_mul(&ct.mask, &sk.positions);
        for (a, b) in acc.iter_mut().zip(&ct.body) {
            *a = b.wrapping_sub(*a);
        }
        acc
    }

    /// Encrypts a GGSW bit with the given key spec (test instrumentation).
    pub fn encrypt_ggsw<R: Rng>(
        &self,
        bit: u64,
        level: Level,
        spec: KeySpec,
        rng: &mut R,
    ) -> GgswCiphertext {
        let sk = self.secret_key(level);
        encrypt_ggsw_bit(bit, sk, sk.dim(), level, spec, rng)
    }
}
