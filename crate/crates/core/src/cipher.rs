//! LWE, GLWE and GGSW ciphertext containers.
//!
//! GLWE dimension is fixed at k = 1 (one mask polynomial); the parameter
//! validator enforces it. Levels tag which secret key a ciphertext lives
//! under: L0 is the short LWE key, L1/L2 are the polynomial keys (their LWE
//! form is the flattened coefficient vector, which is what sample
//! extraction produces).

use serde::{Deserialize, Serialize};

use crate::params::{GadgetParams, ParameterSet};
use crate::poly::{negacyclic_monomial_mul, poly_add_assign, poly_negate, poly_sub_assign};
use crate::torus::TorusWord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L0,
    L1,
    L2,
}

impl Level {
    pub fn lwe_dim(self, params: &ParameterSet) -> usize {
        match self {
            Level::L0 => params.level0_lwe_dim,
            Level::L1 => params.level1_lwe_dim,
            Level::L2 => params.level2_lwe_dim,
        }
    }

    /// Polynomial degree of the GLWE ring at this level; L0 has none.
    pub fn poly_degree(self, params: &ParameterSet) -> usize {
        match self {
            Level::L0 => panic!("level 0 has no polynomial ring"),
            Level::L1 => params.level1_poly_degree,
            Level::L2 => params.level2_poly_degree,
        }
    }

    pub fn fresh_sigma(self, params: &ParameterSet) -> f64 {
        match self {
            Level::L0 => params.sigma_l0,
            Level::L1 => params.sigma_l1,
            Level::L2 => params.sigma_l2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::L0 => "L0",
            Level::L1 => "L1",
            Level::L2 => "L2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LweCiphertext {
    pub level: Level,
    pub mask: Vec<TorusWord>,
    pub body: TorusWord,
}

impl LweCiphertext {
    /// Noiseless embedding of a torus word.
    pub fn trivial(word: TorusWord, dim: usize, level: Level) -> Self {
        Self { level, mask: vec![0; dim], body: word }
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn add_assign(&mut self, rhs: &LweCiphertext) {
        debug_assert_eq!(self.level, rhs.level);
        poly_add_assign(&mut self.mask, &rhs.mask);
        self.body = self.body.wrapping_add(rhs.body);
    }

    pub fn sub_assign(&mut self, rhs: &LweCiphertext) {
        debug_assert_eq!(self.level, rhs.level);
        poly_sub_assign(&mut self.mask, &rhs.mask);
        self.body = self.body.wrapping_sub(rhs.body);
    }

    pub fn negate(&mut self) {
        poly_negate(&mut self.mask);
        self.body = self.body.wrapping_neg();
    }

    /// Adds a plaintext torus word (body only).
    pub fn add_word(&mut self, word: TorusWord) {
        self.body = self.body.wrapping_add(word);
    }

    /// Multiplies by a small plaintext integer.
    pub fn scalar_mul(&mut self, k: u64) {
        for m in &mut self.mask {
            *m = m.wrapping_mul(k);
        }
        self.body = self.body.wrapping_mul(k);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlweCiphertext {
    pub level: Level,
    pub mask: Vec<TorusWord>,
    pub body: Vec<TorusWord>,
}

impl GlweCiphertext {
    pub fn zero(degree: usize, level: Level) -> Self {
        Self { level, mask: vec![0; degree], body: vec![0; degree] }
    }

    /// Noiseless embedding of a plaintext polynomial.
    pub fn trivial(body: Vec<TorusWord>, level: Level) -> Self {
        Self { level, mask: vec![0; body.len()], body }
    }

    pub fn degree(&self) -> usize {
        self.body.len()
    }

    pub fn add_assign(&mut self, rhs: &GlweCiphertext) {
        debug_assert_eq!(self.level, rhs.level);
        poly_add_assign(&mut self.mask, &rhs.mask);
        poly_add_assign(&mut self.body, &rhs.body);
    }

    pub fn sub_assign(&mut self, rhs: &GlweCiphertext) {
        debug_assert_eq!(self.level, rhs.level);
        poly_sub_assign(&mut self.mask, &rhs.mask);
        poly_sub_assign(&mut self.body, &rhs.body);
    }

    /// self = rhs * X^e.
    pub fn rotate_from(&mut self, rhs: &GlweCiphertext, e: usize) {
        debug_assert_eq!(self.level, rhs.level);
        negacyclic_monomial_mul(&mut self.mask, &rhs.mask, e);
        negacyclic_monomial_mul(&mut self.body, &rhs.body, e);
    }

    /// Extracts coefficient `j` of the underlying plaintext polynomial as an
    /// LWE ciphertext under the flattened key.
    pub fn sample_extract(&self, j: usize) -> LweCiphertext {
        let n = self.degree();
        debug_assert!(j < n);
        let mut mask = vec![0u64; n];
        for t in 0..=j {
            mask[t] = self.mask[j - t];
        }
        for t in j + 1..n {
            mask[t] = self.mask[n + j - t].wrapping_neg();
        }
        LweCiphertext { level: self.level, mask, body: self.body[j] }
    }
}

/// GGSW ciphertext: for each gadget level j, one GLWE row targeting the mask
/// slot (phase -m * g_j * S) and one targeting the body slot (phase m * g_j).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GgswCiphertext {
    pub gadget: GadgetParams,
    pub mask_rows: Vec<GlweCiphertext>,
    pub body_rows: Vec<GlweCiphertext>,
}

impl GgswCiphertext {
    pub fn level(&self) -> Level {
        self.body_rows[0].level
    }

    pub fn degree(&self) -> usize {
        self.body_rows[0].degree()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lwe_linear_ops() {
        let mut a = LweCiphertext::trivial(100, 4, Level::L0);
        a.mask = vec![1, 2, 3, u64::MAX];
        let mut b = a.clone();
        b.scalar_mul(3);
        assert_eq!(b.mask, vec![3, 6, 9, u64::MAX.wrapping_mul(3)]);
        assert_eq!(b.body, 300);
        b.sub_assign(&a);
        b.sub_assign(&a);
        b.sub_assign(&a);
        assert_eq!(b.mask, vec![0; 4]);
        assert_eq!(b.body, 0);
        a.negate();
        a.add_word(200);
        assert_eq!(a.body, 100);
    }

    #[test]
    fn sample_extract_trivial_polynomial() {
        let body: Vec<u64> = (0..8).map(|i| (i as u64) << 60).collect();
        let g = GlweCiphertext::trivial(body, Level::L1);
        for j in 0..8 {
            let lwe = g.sample_extract(j);
            assert_eq!(lwe.body, (j as u64) << 60);
            assert!(lwe.mask.iter().all(|&m| m == 0));
        }
    }
}
