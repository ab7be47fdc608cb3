//! Negacyclic polynomial arithmetic in Z_{2^64}[X] / (X^N + 1).
//!
//! Everything here is exact wrapping arithmetic; the floating-point
//! transform lives in [`crate::fft`]. Polynomials are coefficient slices,
//! lowest degree first.

use crate::torus::TorusWord;

#[inline]
pub fn poly_add_assign(out: &mut [TorusWord], rhs: &[TorusWord]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, r) in out.iter_mut().zip(rhs) {
        *o = o.wrapping_add(*r);
    }
}

#[inline]
pub fn poly_sub_assign(out: &mut [TorusWord], rhs: &[TorusWord]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, r) in out.iter_mut().zip(rhs) {
        *o = o.wrapping_sub(*r);
    }
}

#[inline]
pub fn poly_negate(out: &mut [TorusWord]) {
    for o in out.iter_mut() {
        *o = o.wrapping_neg();
    }
}

/// dst = src * X^e in the negacyclic ring, with e taken mod 2N
/// (X^N == -1, so exponents live in a cycle of length 2N).
pub fn negacyclic_monomial_mul(dst: &mut [TorusWord], src: &[TorusWord], e: usize) {
    let n = src.len();
    debug_assert_eq!(dst.len(), n);
    let e = e & (2 * n - 1);
    let (rot, negate_all) = if e < n { (e, false) } else { (e - n, true) };
    for t in 0..rot {
        dst[t] = src[n - rot + t].wrapping_neg();
    }
    for t in rot..n {
        dst[t] = src[t - rot];
    }
    if negate_all {
        poly_negate(dst);
    }
}

/// out += src * X^r for r in [0, N). The two wrap halves are contiguous
/// loops, which is what makes binary-key products cheap.
pub fn negacyclic_rotate_add(out: &mut [TorusWord], src: &[TorusWord], r: usize) {
    let n = src.len();
    debug_assert_eq!(out.len(), n);
    debug_assert!(r < n);
    let (lo, hi) = out.split_at_mut(r);
    let wrap = &src[n - r..];
    for (o, s) in lo.iter_mut().zip(wrap) {
        *o = o.wrapping_sub(*s);
    }
    for (o, s) in hi.iter_mut().zip(src) {
        *o = o.wrapping_add(*s);
    }
}

/// Exact product with a binary polynomial given by the positions of its set
/// coefficients. Used by key generation, where transform round-off would
/// pollute the key noise.
pub fn negacyclic_binary_mul(src: &[TorusWord], one_positions: &[usize]) -> Vec<TorusWord> {
    let mut out = vec![0u64; src.len()];
    for &r in one_positions {
        negacyclic_rotate_add(&mut out, src, r);
    }
    out
}

/// Schoolbook negacyclic product in Z_{2^64}. Quadratic; test oracle and
/// small-degree fallback only.
pub fn negacyclic_mul_schoolbook(a: &[TorusWord], b: &[TorusWord]) -> Vec<TorusWord> {
    let n = a.len();
    assert_eq!(b.len(), n);
    let mut out = vec![0u64; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let p = ai.wrapping_mul(bj);
            let k = i + j;
            if k < n {
                out[k] = out[k].wrapping_add(p);
            } else {
                out[k - n] = out[k - n].wrapping_sub(p);
            }
        }
    }
    out
}

/// Schoolbook negacyclic product over the integers, exact in i128. Oracle
/// for the transform's exact-rounding regime.
pub fn negacyclic_mul_schoolbook_i128(a: &[i64], b: &[i64]) -> Vec<i128> {
    let n = a.len();
    assert_eq!(b.len(), n);
    let mut out = vec![0i128; n];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let p = ai as i128 * bj as i128;
            let k = i + j;
            if k < n {
                out[k] += p;
            } else {
                out[k - n] -= p;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(n: usize, rng: &mut impl Rng) -> Vec<u64> {
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn monomial_mul_matches_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let a = random_poly(n, &mut rng);
        for e in 0..2 * n {
            let mut mono = vec![0u64; n];
            let (idx, sign) = if e < n { (e, 1i64) } else { (e - n, -1i64) };
            mono[idx] = sign as u64;
            let expected = negacyclic_mul_schoolbook(&a, &mono);
            let mut got = vec![0u64; n];
            negacyclic_monomial_mul(&mut got, &a, e);
            assert_eq!(got, expected, "exponent {e}");
        }
    }

    #[test]
    fn monomial_full_cycle_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 32;
        let a = random_poly(n, &mut rng);
        let mut cur = a.clone();
        let mut next = vec![0u64; n];
        for _ in 0..2 * n {
            negacyclic_monomial_mul(&mut next, &cur, 1);
            std::mem::swap(&mut cur, &mut next);
        }
        assert_eq!(cur, a);
    }

    #[test]
    fn binary_mul_matches_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let a = random_poly(n, &mut rng);
        let positions: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let mut s = vec![0u64; n];
        for &p in &positions {
            s[p] = 1;
        }
        assert_eq!(negacyclic_binary_mul(&a, &positions), negacyclic_mul_schoolbook(&a, &s));
    }

    #[test]
    fn schoolbook_negacyclic_wraparound_sign() {
        // (X^(N-1))^2 = X^(2N-2) = -X^(N-2)
        let n = 8;
        let mut a = vec![0u64; n];
        a[n - 1] = 1;
        let out = negacyclic_mul_schoolbook(&a, &a);
        let mut expected = vec![0u64; n];
        expected[n - 2] = 1u64.wrapping_neg();
        assert_eq!(out, expected);
    }
}
