//! Parameter sets for the three-level key hierarchy.
//!
//! Level 0 is the small LWE domain used as blind-rotation input, level 1 the
//! polynomial domain where radix blocks live (degree N1), level 2 the
//! high-precision polynomial domain (degree N2) used by circuit
//! bootstrapping. The ciphertext modulus is fixed at q = 2^64 everywhere;
//! noise standard deviations are fractions of the torus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bits of message carried by one radix block.
pub const RADIX_MESSAGE_BITS: u32 = 2;
/// Carry headroom bits reserved above the message bits.
pub const RADIX_CARRY_BITS: u32 = 2;
/// Message + carry bits (the PBS input space, excluding the padding bit).
pub const RADIX_TOTAL_BITS: u32 = RADIX_MESSAGE_BITS + RADIX_CARRY_BITS;
/// Scale of a radix block: value v is encoded as v * 2^BLOCK_DELTA_LOG.
pub const BLOCK_DELTA_LOG: u32 = 63 - RADIX_TOTAL_BITS;
/// Largest plaintext a block may hold before the padding bit is corrupted.
pub const BLOCK_MAX_VAL: u8 = (1 << RADIX_TOTAL_BITS) - 1;
/// Value of a clean (carry-free) block never exceeds this.
pub const CLEAN_MAX_VAL: u8 = (1 << RADIX_MESSAGE_BITS) - 1;

/// Hard ceiling on WoP-PBS lookup input precision.
pub const MAX_LOOKUP_BITS: usize = 24;

/// Signed gadget decomposition parameters for one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetParams {
    /// log2 of the decomposition base.
    pub base_log: u32,
    /// Number of decomposition levels kept (most significant first).
    pub level_count: usize,
}

impl GadgetParams {
    pub const fn new(base_log: u32, level_count: usize) -> Self {
        Self { base_log, level_count }
    }

    /// Total bits covered by the kept levels.
    pub fn covered_bits(&self) -> u32 {
        self.base_log * self.level_count as u32
    }

    /// Scale factor of level `j` (0-based from the most significant digit):
    /// q / B^(j+1) as a power of two.
    pub fn level_scale_log(&self, j: usize) -> u32 {
        64 - self.base_log * (j as u32 + 1)
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.base_log == 0 || self.level_count == 0 {
            return Err(Error::config(format!("{what}: zero gadget parameter")));
        }
        if self.covered_bits() > 64 {
            return Err(Error::config(format!(
                "{what}: base_log {} x level_count {} exceeds 64 bits",
                self.base_log, self.level_count
            )));
        }
        Ok(())
    }
}

/// Gadget parameters plus the encryption noise of one key of the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeySpec {
    pub gadget: GadgetParams,
    /// Standard deviation as a fraction of the torus.
    pub sigma: f64,
}

impl KeySpec {
    pub const fn new(base_log: u32, level_count: usize, sigma: f64) -> Self {
        Self { gadget: GadgetParams::new(base_log, level_count), sigma }
    }
}

/// Complete parameter set for the three-level hierarchy.
///
/// The per-key entries follow the key-parameter table layout: three
/// bootstrapping keys (CMux-grade, general-purpose, level-2), the two
/// L1->L0 key-switching keys, the L2->L1 key-switching key, and the private
/// functional key-switching keys used by circuit bootstrapping (which share
/// the L2->L1 row since they realize the only L2->L1 transition in the
/// pipeline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub name: String,

    /// Level-0 LWE dimension (blind rotation input).
    pub level0_lwe_dim: usize,
    /// Level-1 LWE dimension (= k1 * N1 for sample-extracted ciphertexts).
    pub level1_lwe_dim: usize,
    /// Level-1 polynomial degree.
    pub level1_poly_degree: usize,
    /// Level-2 LWE dimension (= k2 * N2).
    pub level2_lwe_dim: usize,
    /// Level-2 polynomial degree.
    pub level2_poly_degree: usize,
    /// GLWE dimension (mask polynomial count) at levels 1 and 2.
    pub glwe_dim: usize,

    /// Fresh-encryption noise per level.
    pub sigma_l0: f64,
    pub sigma_l1: f64,
    pub sigma_l2: f64,

    /// If set, the level-0 secret key is sampled with exactly this Hamming
    /// weight instead of uniformly. Only the insecure toy preset uses it, to
    /// keep the mod-switch error of the tiny ring comfortably inside the
    /// radix decision window.
    pub level0_key_weight: Option<usize>,

    /// CMux-grade bootstrapping key (L0 -> L1); also the gadget used by
    /// circuit-bootstrapping output GGSWs and every vertical-packing CMux.
    pub bk_cmux: KeySpec,
    /// General-purpose bootstrapping key (L0 -> L1) behind the standard PBS.
    pub bk_gpbs: KeySpec,
    /// Level-2 bootstrapping key (L0 -> L2) behind circuit bootstrapping.
    pub bk_l2: KeySpec,
    /// L1 -> L0 key switch feeding the CMux-grade path (circuit bootstrap).
    pub ksk_cmux: KeySpec,
    /// L1 -> L0 key switch feeding the standard PBS.
    pub ksk_gpbs: KeySpec,
    /// Plain L2 -> L1 key switch.
    pub ksk_l2_l1: KeySpec,
    /// Private functional key switch L2 -> L1 (circuit bootstrapping).
    pub pfks: KeySpec,
}

impl ParameterSet {
    /// Full-size parameters from the published key tables.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            level0_lwe_dim: 500,
            level1_lwe_dim: 1024,
            level1_poly_degree: 1024,
            level2_lwe_dim: 2048,
            level2_poly_degree: 2048,
            glwe_dim: 1,
            sigma_l0: 2.0f64.powi(-15),
            sigma_l1: 7.18e-9,
            sigma_l2: 2.0f64.powi(-45),
            level0_key_weight: None,
            bk_cmux: KeySpec::new(6, 3, 2.0f64.powi(-15)),
            bk_gpbs: KeySpec::new(4, 6, 7.18e-9),
            bk_l2: KeySpec::new(9, 6, 2.0f64.powi(-45)),
            ksk_cmux: KeySpec::new(2, 7, 2.0f64.powi(-15)),
            ksk_gpbs: KeySpec::new(1, 14, 1e-5),
            ksk_l2_l1: KeySpec::new(2, 16, 2.0f64.powi(-31)),
            pfks: KeySpec::new(2, 16, 2.0f64.powi(-31)),
        }
    }

    /// Insecure shrunk parameters for fast exhaustive tests.
    ///
    /// Dimensions shrink to 64/256/512; every noise drops to 2^-50 so that
    /// correctness margins are dominated by the structural mod-switch
    /// rounding of the small rings. Gadget shapes are kept identical to the
    /// full-size set (they already satisfy base_log * level_count <= 64), so
    /// the toy run exercises the same decomposition code paths.
    pub fn toy() -> Self {
        let sigma = 2.0f64.powi(-50);
        Self {
            name: "toy".into(),
            level0_lwe_dim: 64,
            level1_lwe_dim: 256,
            level1_poly_degree: 256,
            level2_lwe_dim: 512,
            level2_poly_degree: 512,
            glwe_dim: 1,
            sigma_l0: sigma,
            sigma_l1: sigma,
            sigma_l2: sigma,
            level0_key_weight: Some(16),
            bk_cmux: KeySpec::new(6, 3, sigma),
            bk_gpbs: KeySpec::new(4, 6, sigma),
            bk_l2: KeySpec::new(9, 6, sigma),
            ksk_cmux: KeySpec::new(2, 7, sigma),
            ksk_gpbs: KeySpec::new(1, 14, sigma),
            ksk_l2_l1: KeySpec::new(2, 16, sigma),
            pfks: KeySpec::new(2, 16, sigma),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::config(format!("unknown preset '{other}'"))),
        }
    }

    /// Validates the internal consistency invariants.
    pub fn check(&self) -> Result<()> {
        if !self.level1_poly_degree.is_power_of_two() || !self.level2_poly_degree.is_power_of_two()
        {
            return Err(Error::config("polynomial degrees must be powers of two"));
        }
        if self.glwe_dim != 1 {
            return Err(Error::config("only GLWE dimension 1 is supported"));
        }
        if self.level1_lwe_dim != self.glwe_dim * self.level1_poly_degree
            || self.level2_lwe_dim != self.glwe_dim * self.level2_poly_degree
        {
            return Err(Error::config(
                "polynomial-level LWE dimensions must equal k * N (sample extraction)",
            ));
        }
        if self.level0_lwe_dim == 0 {
            return Err(Error::config("level-0 dimension must be positive"));
        }
        if let Some(w) = self.level0_key_weight {
            if w > self.level0_lwe_dim {
                return Err(Error::config("level-0 key weight exceeds dimension"));
            }
        }
        for (spec, what) in [
            (&self.bk_cmux, "bk_cmux"),
            (&self.bk_gpbs, "bk_gpbs"),
            (&self.bk_l2, "bk_l2"),
            (&self.ksk_cmux, "ksk_cmux"),
            (&self.ksk_gpbs, "ksk_gpbs"),
            (&self.ksk_l2_l1, "ksk_l2_l1"),
            (&self.pfks, "pfks"),
        ] {
            spec.gadget.check(what)?;
            if !(spec.sigma > 0.0 && spec.sigma < 1.0) {
                return Err(Error::config(format!("{what}: sigma must lie in (0, 1)")));
            }
        }
        for sigma in [self.sigma_l0, self.sigma_l1, self.sigma_l2] {
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(Error::config("fresh sigma must lie in (0, 1)"));
            }
        }
        // The radix block space (message + carry + padding) must fit the
        // level-1 test polynomial.
        if (1usize << (RADIX_TOTAL_BITS + 1)) > 2 * self.level1_poly_degree {
            return Err(Error::config("level-1 degree too small for the radix block space"));
        }
        Ok(())
    }

    /// Bits of the blind-rotation index at degree `n` (log2 of 2N).
    pub fn rotation_index_bits(poly_degree: usize) -> u32 {
        poly_degree.trailing_zeros() + 1
    }

    /// Number of low bits a vertical-packing lookup resolves inside one
    /// polynomial at level 1.
    pub fn vp_low_bits(&self) -> usize {
        self.level1_poly_degree.trailing_zeros() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_pass_their_own_invariants() {
        ParameterSet::paper().check().unwrap();
        ParameterSet::toy().check().unwrap();
    }

    #[test]
    fn paper_dimensions_match_published_tables() {
        let p = ParameterSet::paper();
        assert_eq!(p.level0_lwe_dim, 500);
        assert_eq!(p.level1_poly_degree, 1024);
        assert_eq!(p.level2_poly_degree, 2048);
        assert_eq!(p.bk_cmux.gadget, GadgetParams::new(6, 3));
        assert_eq!(p.bk_gpbs.gadget, GadgetParams::new(4, 6));
        assert_eq!(p.bk_l2.gadget, GadgetParams::new(9, 6));
        assert_eq!(p.ksk_cmux.gadget, GadgetParams::new(2, 7));
        assert_eq!(p.ksk_gpbs.gadget, GadgetParams::new(1, 14));
        assert_eq!(p.ksk_l2_l1.gadget, GadgetParams::new(2, 16));
    }

    #[test]
    fn bad_gadget_rejected() {
        let mut p = ParameterSet::paper();
        p.bk_l2 = KeySpec::new(13, 6, 1e-9);
        assert!(p.check().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let p = ParameterSet::paper();
        let s = serde_json::to_string(&p).unwrap();
        let back: ParameterSet = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
