//! TGR1 binary serialization and JSON preset files.
//!
//! A TGR1 file is: the magic bytes `TGR1`, a 32-bit format version, a 32-bit
//! level tag, a four-word dimension header, then the payload as
//! little-endian 64-bit words. The first header word is the object kind
//! (key bundle or ciphertext vector); the rest describe the dominant
//! dimensions so a reader can size buffers before touching the payload.
//!
//! Key bundles embed their full parameter set (as a length-prefixed JSON
//! blob, so field evolution stays readable), and the reader cross-checks
//! every section's declared shape against the parameters before accepting
//! it. Parameter presets themselves live in plain JSON files mirroring
//! `ParameterSet`.

use std::env;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cipher::{GgswCiphertext, GlweCiphertext, Level, LweCiphertext};
use crate::error::{Error, Result};
use crate::fixed::{FixedPoint, FixedPointCiphertext, FixedPointFormat, Signedness};
use crate::keys::{BootstrapKey, KeyBundle, KeyswitchKey, PfksKey, SecretKey};
use crate::params::{GadgetParams, KeySpec, ParameterSet, BLOCK_MAX_VAL};
use crate::torus::TorusWord;

pub const TGR1_MAGIC: [u8; 4] = *b"TGR1";
pub const TGR1_VERSION: u32 = 1;

/// Directory for cached keys and other run artifacts.
pub const TIGER_HOME_ENV: &str = "TIGER_HOME";

const OBJ_KEY_BUNDLE: u64 = 1;
const OBJ_CIPHERTEXTS: u64 = 2;

/// Caps applied to lengths read from ciphertext files, which carry their own
/// dimensions rather than deriving them from a parameter set.
const MAX_CT_COUNT: u64 = 1 << 20;
const MAX_CT_BLOCKS: u64 = 64;
const MAX_LWE_DIM: u64 = 1 << 22;

pub fn tiger_home() -> PathBuf {
    env::var_os(TIGER_HOME_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".tiger"))
}

/// Canonical cache location of a key bundle generated from a named preset.
pub fn default_bundle_path(preset_name: &str, seed: u64) -> PathBuf {
    tiger_home().join("keys").join(format!("{preset_name}-{seed:016x}.tgr1"))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    fs::write(path, out)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_params_json(path: &Path, params: &ParameterSet) -> Result<()> {
    save_json(path, params)
}

pub fn load_params_json(path: &Path) -> Result<ParameterSet> {
    let params: ParameterSet = load_json(path)?;
    params.check()?;
    Ok(params)
}

/// Resolves `paper`, `toy`, or a path to a preset JSON file.
pub fn resolve_preset(spec: &str) -> Result<ParameterSet> {
    match spec {
        "paper" | "toy" => ParameterSet::by_name(spec),
        other => load_params_json(Path::new(other)),
    }
}

/// Byte count of one serialized section, for size reporting.
#[derive(Clone, Debug)]
pub struct SectionSize {
    pub name: &'static str,
    pub bytes: u64,
}

struct WordWriter<W: Write> {
    inner: W,
    words: u64,
}

impl<W: Write> WordWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, words: 0 }
    }

    fn word(&mut self, w: u64) -> Result<()> {
        self.inner.write_all(&w.to_le_bytes())?;
        self.words += 1;
        Ok(())
    }

    fn words(&mut self, ws: &[TorusWord]) -> Result<()> {
        for &w in ws {
            self.inner.write_all(&w.to_le_bytes())?;
        }
        self.words += ws.len() as u64;
        Ok(())
    }

    /// Length-prefixed byte blob, zero-padded to a word boundary.
    fn blob(&mut self, bytes: &[u8]) -> Result<()> {
        self.word(bytes.len() as u64)?;
        for chunk in bytes.chunks(8) {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            self.inner.write_all(&w)?;
            self.words += 1;
        }
        Ok(())
    }
}

struct WordReader<R: Read> {
    inner: R,
}

impl<R: Read> WordReader<R> {
    fn new(inner: R) -> Self {
        Self { inner }
    }

    fn word(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    /// Reads a length field that must equal `expected`.
    fn expect_len(&mut self, expected: usize, what: &str) -> Result<()> {
        let got = self.word()?;
        if got != expected as u64 {
            return Err(Error::Decode(format!("{what}: length {got}, expected {expected}")));
        }
        Ok(())
    }

    fn words(&mut self, n: usize) -> Result<Vec<TorusWord>> {
        let mut out = vec![0u64; n];
        let mut buf = [0u8; 8];
        for slot in out.iter_mut() {
            self.inner.read_exact(&mut buf)?;
            *slot = u64::from_le_bytes(buf);
        }
        Ok(out)
    }

    fn blob(&mut self, max_bytes: u64, what: &str) -> Result<Vec<u8>> {
        let len = self.word()?;
        if len > max_bytes {
            return Err(Error::Decode(format!("{what}: blob of {len} bytes exceeds {max_bytes}")));
        }
        let padded = (len as usize).div_ceil(8);
        let words = self.words(padded)?;
        let mut bytes = Vec::with_capacity(padded * 8);
        for w in words {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        bytes.truncate(len as usize);
        Ok(bytes)
    }
}

fn level_tag(level: Level) -> u64 {
    match level {
        Level::L0 => 0,
        Level::L1 => 1,
        Level::L2 => 2,
    }
}

fn tag_level(tag: u64) -> Result<Level> {
    match tag {
        0 => Ok(Level::L0),
        1 => Ok(Level::L1),
        2 => Ok(Level::L2),
        other => Err(Error::Decode(format!("unknown level tag {other}"))),
    }
}

fn write_header<W: Write>(w: &mut W, level: Level, dims: [u64; 4]) -> Result<()> {
    w.write_all(&TGR1_MAGIC)?;
    w.write_all(&TGR1_VERSION.to_le_bytes())?;
    w.write_all(&(level_tag(level) as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: Read>(r: &mut R, expect_obj: u64) -> Result<(Level, [u64; 4])> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != TGR1_MAGIC {
        return Err(Error::Decode("bad magic, not a TGR1 file".into()));
    }
    let mut four = [0u8; 4];
    r.read_exact(&mut four)?;
    let version = u32::from_le_bytes(four);
    if version != TGR1_VERSION {
        return Err(Error::Decode(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut four)?;
    let level = tag_level(u64::from(u32::from_le_bytes(four)))?;
    let mut dims = [0u64; 4];
    let mut eight = [0u8; 8];
    for d in dims.iter_mut() {
        r.read_exact(&mut eight)?;
        *d = u64::from_le_bytes(eight);
    }
    if dims[0] != expect_obj {
        return Err(Error::Decode(format!(
            "object kind {} does not match the requested reader",
            dims[0]
        )));
    }
    Ok((level, dims))
}

fn write_secret_key<W: Write>(w: &mut WordWriter<W>, sk: &SecretKey) -> Result<()> {
    w.word(sk.bits.len() as u64)?;
    let mut packed = vec![0u64; sk.bits.len().div_ceil(64)];
    for (i, &b) in sk.bits.iter().enumerate() {
        packed[i / 64] |= (b & 1) << (i % 64);
    }
    w.words(&packed)
}

fn read_secret_key<R: Read>(r: &mut WordReader<R>, expect_dim: usize) -> Result<SecretKey> {
    r.expect_len(expect_dim, "secret key dimension")?;
    let packed = r.words(expect_dim.div_ceil(64))?;
    let bits = (0..expect_dim).map(|i| (packed[i / 64] >> (i % 64)) & 1).collect();
    Ok(SecretKey::from_bits(bits))
}

fn write_gadget<W: Write>(w: &mut WordWriter<W>, g: &GadgetParams) -> Result<()> {
    w.word(u64::from(g.base_log))?;
    w.word(g.level_count as u64)
}

fn read_gadget<R: Read>(r: &mut WordReader<R>, expect: GadgetParams) -> Result<GadgetParams> {
    let base_log = r.word()?;
    let level_count = r.word()?;
    if base_log != u64::from(expect.base_log) || level_count != expect.level_count as u64 {
        return Err(Error::Decode(format!(
            "gadget ({base_log}, {level_count}) does not match the parameter set \
             ({}, {})",
            expect.base_log, expect.level_count
        )));
    }
    Ok(expect)
}

fn write_glwe<W: Write>(w: &mut WordWriter<W>, ct: &GlweCiphertext) -> Result<()> {
    w.words(&ct.mask)?;
    w.words(&ct.body)
}

fn read_glwe<R: Read>(r: &mut WordReader<R>, degree: usize, level: Level) -> Result<GlweCiphertext> {
    let mask = r.words(degree)?;
    let body = r.words(degree)?;
    Ok(GlweCiphertext { level, mask, body })
}

fn write_bootstrap_key<W: Write>(w: &mut WordWriter<W>, bk: &BootstrapKey) -> Result<()> {
    w.word(level_tag(bk.out_level))?;
    write_gadget(w, &bk.gadget)?;
    w.word(bk.ggsws.len() as u64)?;
    for ggsw in &bk.ggsws {
        write_gadget(w, &ggsw.gadget)?;
        w.word(ggsw.mask_rows.len() as u64)?;
        w.word(ggsw.body_rows.len() as u64)?;
        for row in ggsw.mask_rows.iter().chain(&ggsw.body_rows) {
            write_glwe(w, row)?;
        }
    }
    Ok(())
}

fn read_bootstrap_key<R: Read>(
    r: &mut WordReader<R>,
    spec: KeySpec,
    in_dim: usize,
    degree: usize,
    out_level: Level,
) -> Result<BootstrapKey> {
    let tag = r.word()?;
    if tag_level(tag)? != out_level {
        return Err(Error::Decode(format!("bootstrap key level tag {tag} unexpected")));
    }
    let gadget = read_gadget(r, spec.gadget)?;
    r.expect_len(in_dim, "bootstrap key GGSW count")?;
    let rows = gadget.level_count;
    let mut ggsws = Vec::with_capacity(in_dim);
    for _ in 0..in_dim {
        let g = read_gadget(r, gadget)?;
        r.expect_len(rows, "GGSW mask row count")?;
        r.expect_len(rows, "GGSW body row count")?;
        let mask_rows =
            (0..rows).map(|_| read_glwe(r, degree, out_level)).collect::<Result<Vec<_>>>()?;
        let body_rows =
            (0..rows).map(|_| read_glwe(r, degree, out_level)).collect::<Result<Vec<_>>>()?;
        ggsws.push(GgswCiphertext { gadget: g, mask_rows, body_rows });
    }
    Ok(BootstrapKey { out_level, gadget, ggsws })
}

fn write_keyswitch_key<W: Write>(w: &mut WordWriter<W>, ksk: &KeyswitchKey) -> Result<()> {
    w.word(level_tag(ksk.out_level))?;
    write_gadget(w, &ksk.gadget)?;
    w.word(ksk.in_dim as u64)?;
    w.word(ksk.out_dim as u64)?;
    w.words(ksk.words())
}

fn read_keyswitch_key<R: Read>(
    r: &mut WordReader<R>,
    spec: KeySpec,
    in_dim: usize,
    out_dim: usize,
    out_level: Level,
) -> Result<KeyswitchKey> {
    let tag = r.word()?;
    if tag_level(tag)? != out_level {
        return Err(Error::Decode(format!("keyswitch key level tag {tag} unexpected")));
    }
    let gadget = read_gadget(r, spec.gadget)?;
    r.expect_len(in_dim, "keyswitch input dimension")?;
    r.expect_len(out_dim, "keyswitch output dimension")?;
    let data = r.words(in_dim * gadget.level_count * (out_dim + 1))?;
    KeyswitchKey::from_words(out_level, gadget, in_dim, out_dim, data)
}

fn write_pfks_key<W: Write>(w: &mut WordWriter<W>, key: &PfksKey) -> Result<()> {
    write_gadget(w, &key.gadget)?;
    w.word(key.in_dim as u64)?;
    w.word(key.degree as u64)?;
    w.words(key.words())
}

fn read_pfks_key<R: Read>(
    r: &mut WordReader<R>,
    spec: KeySpec,
    in_dim: usize,
    degree: usize,
) -> Result<PfksKey> {
    let gadget = read_gadget(r, spec.gadget)?;
    r.expect_len(in_dim, "functional keyswitch input dimension")?;
    r.expect_len(degree, "functional keyswitch degree")?;
    let data = r.words((in_dim + 1) * gadget.level_count * 2 * degree)?;
    PfksKey::from_words(gadget, in_dim, degree, data)
}

/// Writes a key bundle and returns the per-section byte counts.
pub fn write_key_bundle<W: Write>(out: W, bundle: &KeyBundle) -> Result<Vec<SectionSize>> {
    let p = &bundle.params;
    let mut buf = BufWriter::new(out);
    write_header(
        &mut buf,
        Level::L2,
        [
            OBJ_KEY_BUNDLE,
            p.level0_lwe_dim as u64,
            p.level1_poly_degree as u64,
            p.level2_poly_degree as u64,
        ],
    )?;
    let mut w = WordWriter::new(buf);
    let mut sizes = vec![SectionSize { name: "header", bytes: 4 + 4 + 4 + 32 }];
    let mut mark = 0u64;
    let mut section = |w: &WordWriter<BufWriter<W>>, sizes: &mut Vec<SectionSize>, name| {
        sizes.push(SectionSize { name, bytes: (w.words - mark) * 8 });
        mark = w.words;
    };

    w.blob(&serde_json::to_vec(p)?)?;
    section(&w, &mut sizes, "params");
    write_secret_key(&mut w, &bundle.sk0)?;
    section(&w, &mut sizes, "sk0");
    write_secret_key(&mut w, &bundle.sk1)?;
    section(&w, &mut sizes, "sk1");
    write_secret_key(&mut w, &bundle.sk2)?;
    section(&w, &mut sizes, "sk2");
    write_bootstrap_key(&mut w, &bundle.bk_cmux)?;
    section(&w, &mut sizes, "bk_cmux");
    write_bootstrap_key(&mut w, &bundle.bk_gpbs)?;
    section(&w, &mut sizes, "bk_gpbs");
    write_bootstrap_key(&mut w, &bundle.bk_l2)?;
    section(&w, &mut sizes, "bk_l2");
    write_keyswitch_key(&mut w, &bundle.ksk_cmux)?;
    section(&w, &mut sizes, "ksk_cmux");
    write_keyswitch_key(&mut w, &bundle.ksk_gpbs)?;
    section(&w, &mut sizes, "ksk_gpbs");
    write_keyswitch_key(&mut w, &bundle.ksk_l2_l1)?;
    section(&w, &mut sizes, "ksk_l2_l1");
    write_pfks_key(&mut w, &bundle.pfks_mask)?;
    section(&w, &mut sizes, "pfks_mask");
    write_pfks_key(&mut w, &bundle.pfks_body)?;
    section(&w, &mut sizes, "pfks_body");

    w.inner.flush()?;
    Ok(sizes)
}

pub fn read_key_bundle<R: Read>(input: R) -> Result<KeyBundle> {
    let mut buf = BufReader::new(input);
    let (level, dims) = read_header(&mut buf, OBJ_KEY_BUNDLE)?;
    if level != Level::L2 {
        return Err(Error::Decode("key bundle header must be tagged L2".into()));
    }
    let mut r = WordReader::new(buf);

    let params_bytes = r.blob(1 << 20, "parameter block")?;
    let params: ParameterSet = serde_json::from_slice(&params_bytes)?;
    params.check()?;
    let n0 = params.level0_lwe_dim;
    let n1 = params.level1_poly_degree;
    let n2 = params.level2_poly_degree;
    if dims[1] != n0 as u64 || dims[2] != n1 as u64 || dims[3] != n2 as u64 {
        return Err(Error::Decode("dimension header disagrees with the parameter block".into()));
    }

    let sk0 = read_secret_key(&mut r, n0)?;
    let sk1 = read_secret_key(&mut r, n1)?;
    let sk2 = read_secret_key(&mut r, n2)?;
    let bk_cmux = read_bootstrap_key(&mut r, params.bk_cmux, n0, n1, Level::L1)?;
    let bk_gpbs = read_bootstrap_key(&mut r, params.bk_gpbs, n0, n1, Level::L1)?;
    let bk_l2 = read_bootstrap_key(&mut r, params.bk_l2, n0, n2, Level::L2)?;
    let ksk_cmux = read_keyswitch_key(&mut r, params.ksk_cmux, n1, n0, Level::L0)?;
    let ksk_gpbs = read_keyswitch_key(&mut r, params.ksk_gpbs, n1, n0, Level::L0)?;
    let ksk_l2_l1 = read_keyswitch_key(&mut r, params.ksk_l2_l1, n2, n1, Level::L1)?;
    let pfks_mask = read_pfks_key(&mut r, params.pfks, n2, n1)?;
    let pfks_body = read_pfks_key(&mut r, params.pfks, n2, n1)?;

    Ok(KeyBundle {
        params,
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

pub fn save_key_bundle(path: &Path, bundle: &KeyBundle) -> Result<Vec<SectionSize>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_key_bundle(File::create(path)?, bundle)
}

pub fn load_key_bundle(path: &Path) -> Result<KeyBundle> {
    read_key_bundle(File::open(path)?)
}

fn signedness_tag(s: Signedness) -> u64 {
    match s {
        Signedness::Unsigned => 0,
        Signedness::TwosComplement => 1,
    }
}

/// Writes a vector of radix ciphertexts. All blocks live at level 1.
pub fn write_ciphertexts<W: Write>(out: W, cts: &[FixedPointCiphertext]) -> Result<()> {
    let dim =
        cts.iter().flat_map(|ct| ct.blocks.first()).next().map_or(0, |b| b.mask.len() as u64);
    for ct in cts {
        for b in &ct.blocks {
            if b.level != Level::L1 || b.mask.len() as u64 != dim {
                return Err(Error::config("ciphertext blocks must share the level-1 dimension"));
            }
        }
    }
    let mut buf = BufWriter::new(out);
    write_header(&mut buf, Level::L1, [OBJ_CIPHERTEXTS, cts.len() as u64, dim, 0])?;
    let mut w = WordWriter::new(buf);
    for ct in cts {
        w.word(u64::from(ct.format.integer_bits))?;
        w.word(u64::from(ct.format.fractional_bits))?;
        w.word(signedness_tag(ct.format.signedness))?;
        w.word(ct.blocks.len() as u64)?;
        for (block, &carry) in ct.blocks.iter().zip(&ct.carry_state) {
            w.word(u64::from(carry))?;
            w.words(&block.mask)?;
            w.word(block.body)?;
        }
    }
    w.inner.flush()?;
    Ok(())
}

pub fn read_ciphertexts<R: Read>(input: R) -> Result<Vec<FixedPointCiphertext>> {
    let mut buf = BufReader::new(input);
    let (level, dims) = read_header(&mut buf, OBJ_CIPHERTEXTS)?;
    if level != Level::L1 {
        return Err(Error::Decode("ciphertext vectors are level-1 objects".into()));
    }
    let [_, count, dim, _] = dims;
    if count > MAX_CT_COUNT || dim > MAX_LWE_DIM {
        return Err(Error::Decode(format!("implausible ciphertext header ({count}, {dim})")));
    }
    let mut r = WordReader::new(buf);
    let mut cts = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let integer_bits = r.word()?;
        let fractional_bits = r.word()?;
        let signedness = match r.word()? {
            0 => Signedness::Unsigned,
            1 => Signedness::TwosComplement,
            other => return Err(Error::Decode(format!("unknown signedness tag {other}"))),
        };
        if integer_bits > 120 || fractional_bits > 120 {
            return Err(Error::Decode("implausible fixed-point format".into()));
        }
        let format =
            FixedPointFormat::new(integer_bits as u32, fractional_bits as u32, signedness);
        format.check().map_err(|e| Error::Decode(e.to_string()))?;
        let block_count = r.word()?;
        if block_count > MAX_CT_BLOCKS || block_count as usize != format.block_count() {
            return Err(Error::Decode(format!(
                "block count {block_count} does not match the format"
            )));
        }
        let mut blocks = Vec::with_capacity(block_count as usize);
        let mut carry_state = Vec::with_capacity(block_count as usize);
        for _ in 0..block_count {
            let carry = r.word()?;
            if carry > u64::from(BLOCK_MAX_VAL) {
                return Err(Error::Decode(format!("carry bound {carry} out of range")));
            }
            carry_state.push(carry as u8);
            let mask = r.words(dim as usize)?;
            let body = r.word()?;
            blocks.push(LweCiphertext { level: Level::L1, mask, body });
        }
        cts.push(FixedPoint::from_parts(format, blocks, carry_state));
    }
    Ok(cts)
}

pub fn save_ciphertexts(path: &Path, cts: &[FixedPointCiphertext]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_ciphertexts(File::create(path)?, cts)
}

pub fn load_ciphertexts(path: &Path) -> Result<Vec<FixedPointCiphertext>> {
    read_ciphertexts(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fixed::FMT_SOFTMAX;
    use crate::keys::keygen;

    #[test]
    fn key_bundle_roundtrip_preserves_decryption() {
        let params = ParameterSet::toy();
        let bundle = keygen(&params, 99).unwrap();

        let mut file = Vec::new();
        let sizes = write_key_bundle(&mut file, &bundle).unwrap();
        assert_eq!(sizes.iter().map(|s| s.bytes).sum::<u64>(), file.len() as u64);
        assert!(sizes.iter().any(|s| s.name == "bk_gpbs" && s.bytes > 1 << 20));

        let back = read_key_bundle(&file[..]).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.sk0.bits, bundle.sk0.bits);
        assert_eq!(back.sk0.positions, bundle.sk0.positions);
        assert_eq!(back.sk2.bits, bundle.sk2.bits);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ct = FixedPointCiphertext::encrypt(&bundle, -3.375, FMT_SOFTMAX, &mut rng).unwrap();
        assert_eq!(ct.decrypt(&back), -3.375);
        let ct2 = FixedPointCiphertext::encrypt(&back, 1.5, FMT_SOFTMAX, &mut rng).unwrap();
        assert_eq!(ct2.decrypt(&bundle), 1.5);
    }

    #[test]
    fn bundle_bytes_are_deterministic() {
        let params = ParameterSet::toy();
        let mut a = Vec::new();
        write_key_bundle(&mut a, &keygen(&params, 7).unwrap()).unwrap();
        let mut b = Vec::new();
        write_key_bundle(&mut b, &keygen(&params, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        write_key_bundle(&mut c, &keygen(&params, 8).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ciphertext_roundtrip_is_exact() {
        let params = ParameterSet::toy();
        let bundle = keygen(&params, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cts: Vec<_> = [0.0, -1.25, 2047.0 + 0.5f64.powi(20)]
            .iter()
            .map(|&v| FixedPointCiphertext::encrypt(&bundle, v, FMT_SOFTMAX, &mut rng).unwrap())
            .collect();

        let mut file = Vec::new();
        write_ciphertexts(&mut file, &cts).unwrap();
        let back = read_ciphertexts(&file[..]).unwrap();
        assert_eq!(back.len(), cts.len());
        for (a, b) in cts.iter().zip(&back) {
            assert_eq!(a.format, b.format);
            assert_eq!(a.carry_state, b.carry_state);
            for (x, y) in a.blocks.iter().zip(&b.blocks) {
                assert_eq!(x, y);
            }
        }
        assert!(read_ciphertexts(&Vec::new()[..]).is_err());

        let empty: Vec<FixedPointCiphertext> = Vec::new();
        let mut file = Vec::new();
        write_ciphertexts(&mut file, &empty).unwrap();
        assert!(read_ciphertexts(&file[..]).unwrap().is_empty());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let params = ParameterSet::toy();
        let bundle = keygen(&params, 1).unwrap();
        let mut file = Vec::new();
        write_key_bundle(&mut file, &bundle).unwrap();

        let mut bad_magic = file.clone();
        bad_magic[0] = b'X';
        assert!(read_key_bundle(&bad_magic[..]).is_err());

        let mut bad_version = file.clone();
        bad_version[4] = 0xFF;
        assert!(read_key_bundle(&bad_version[..]).is_err());

        let truncated = &file[..file.len() - 9];
        assert!(read_key_bundle(truncated).is_err());

        // Flip a declared dimension inside the first keyswitch section; the
        // reader must notice the disagreement with the parameter block.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ct = FixedPointCiphertext::encrypt(&bundle, 1.0, FMT_SOFTMAX, &mut rng).unwrap();
        let mut ct_file = Vec::new();
        write_ciphertexts(&mut ct_file, &[ct]).unwrap();
        assert!(read_key_bundle(&ct_file[..]).is_err(), "object kinds must not cross");
        assert!(read_ciphertexts(&file[..]).is_err(), "object kinds must not cross");
    }

    #[test]
    fn preset_files_roundtrip() {
        let dir = std::env::temp_dir().join(format!("tgr1-io-{}", std::process::id()));
        let path = dir.join("preset.json");
        let params = ParameterSet::paper();
        save_params_json(&path, &params).unwrap();
        assert_eq!(load_params_json(&path).unwrap(), params);
        assert_eq!(resolve_preset(path.to_str().unwrap()).unwrap(), params);
        assert_eq!(resolve_preset("toy").unwrap(), ParameterSet::toy());
        assert!(resolve_preset("nonsense").is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
