//! Torus arithmetic on 64-bit words.
//!
//! A `TorusWord` holds a real torus element x in [0, 1) as round(x * 2^64);
//! all arithmetic is wrapping, so the group structure is exact. Plaintexts
//! occupy the top bits, noise grows from the bottom.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::params::GadgetParams;

pub type TorusWord = u64;

/// Places a `bits`-wide message in the top bits of a torus word.
#[inline]
pub fn encode_plain(value: u64, bits: u32) -> TorusWord {
    debug_assert!(bits > 0 && bits < 64);
    debug_assert!(value < (1u64 << bits));
    value << (64 - bits)
}

/// Rounds a torus word to the nearest multiple of 2^-bits, returning the
/// multiple index mod 2^bits. Ties round up.
#[inline]
pub fn decode_plain(word: TorusWord, bits: u32) -> u64 {
    debug_assert!(bits > 0 && bits < 64);
    (word.wrapping_shr(64 - bits - 1).wrapping_add(1) >> 1) & ((1u64 << bits) - 1)
}

/// Signed distance from `word` to the nearest multiple of 2^-bits, in units
/// of 2^-64. Measures how much noise a decoded word carried.
#[inline]
pub fn decode_error(word: TorusWord, bits: u32) -> i64 {
    let nearest = decode_plain(word, bits) << (64 - bits);
    word.wrapping_sub(nearest) as i64
}

/// Draws a rounded Gaussian torus sample with standard deviation
/// `sigma` (a fraction of the torus).
pub fn sample_gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> TorusWord {
    if sigma <= 0.0 {
        return 0;
    }
    let scaled = Normal::new(0.0, sigma * 2.0f64.powi(64)).expect("valid sigma");
    let x = scaled.sample(rng);
    // Fresh noise never comes near i64::MAX for any supported sigma, so the
    // cast saturation path is unreachable in practice.
    (x.round() as i64) as u64
}

pub fn sample_gaussian_vec<R: Rng + ?Sized>(sigma: f64, len: usize, rng: &mut R) -> Vec<TorusWord> {
    if sigma <= 0.0 {
        return vec![0; len];
    }
    let scaled = Normal::new(0.0, sigma * 2.0f64.powi(64)).expect("valid sigma");
    (0..len).map(|_| (scaled.sample(rng).round() as i64) as u64).collect()
}

/// Signed gadget decomposition of a torus word.
///
/// Returns `level_count` digits, most significant first: digit `j` sits at
/// scale q / B^(j+1) and lies in [-B/2, B/2]. The word is first rounded to
/// the nearest multiple of 2^(64 - base_log * level_count) (ties up), so
///
///   sum_j digits[j] * 2^(64 - base_log*(j+1))  ==  round(x)   (mod 2^64)
///
/// and the rounding error is at most half of the dropped scale.
pub fn gadget_decompose(x: TorusWord, params: GadgetParams) -> Vec<i64> {
    let mut out = vec![0i64; params.level_count];
    gadget_decompose_into(x, params, &mut out);
    out
}

/// No-allocation variant of [`gadget_decompose`]; `out` must hold exactly
/// `level_count` digits.
#[inline]
pub fn gadget_decompose_into(x: TorusWord, params: GadgetParams, out: &mut [i64]) {
    let b = params.base_log;
    let l = params.level_count;
    debug_assert_eq!(out.len(), l);
    let covered = b * l as u32;
    let mut state = if covered == 64 {
        x
    } else {
        let shift = 64 - covered;
        x.wrapping_add(1u64 << (shift - 1)) >> shift
    };
    let base = 1u64 << b;
    let half = base >> 1;
    // Digits come out least significant first; carries from balancing a
    // digit into the negative range feed the next one up. A carry out of
    // the top digit is a multiple of q and drops.
    for j in (0..l).rev() {
        let r = state & (base - 1);
        state >>= b;
        if r >= half {
            out[j] = r as i64 - base as i64;
            state = state.wrapping_add(1);
        } else {
            out[j] = r as i64;
        }
    }
}

/// Recomposes gadget digits back into a torus word (test helper; exact
/// inverse of the rounding-free part of the decomposition).
pub fn gadget_recompose(digits: &[i64], params: GadgetParams) -> TorusWord {
    let mut acc = 0u64;
    for (j, &d) in digits.iter().enumerate() {
        let scale = params.level_scale_log(j);
        acc = acc.wrapping_add((d as u64).wrapping_shl(scale));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::GadgetParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_decode_roundtrip() {
        for bits in [1, 2, 4, 5, 12, 32] {
            for value in 0..(1u64 << bits.min(8)) {
                assert_eq!(decode_plain(encode_plain(value, bits), bits), value);
            }
        }
    }

    #[test]
    fn decode_survives_noise_below_half_step() {
        let bits = 5;
        let word = encode_plain(13, bits);
        let just_under = (1u64 << (64 - bits - 1)) - 1;
        assert_eq!(decode_plain(word.wrapping_add(just_under), bits), 13);
        assert_eq!(decode_plain(word.wrapping_sub(just_under), bits), 13);
        assert_eq!(decode_plain(word.wrapping_add(just_under + 2), bits), 14);
    }

    #[test]
    fn decode_wraps_modulo_message_space() {
        let bits = 4;
        // A word just below 1.0 rounds to 16 == 0 mod 2^4.
        let word = u64::MAX - 5;
        assert_eq!(decode_plain(word, bits), 0);
        assert_eq!(decode_error(word, bits), -6);
    }

    #[test]
    fn gadget_digits_are_balanced_and_recompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for params in [
            GadgetParams::new(6, 3),
            GadgetParams::new(4, 6),
            GadgetParams::new(9, 6),
            GadgetParams::new(2, 7),
            GadgetParams::new(1, 14),
            GadgetParams::new(2, 16),
        ] {
            let half = 1i64 << (params.base_log - 1);
            let shift = 64 - params.covered_bits();
            for _ in 0..2000 {
                let x: u64 = rng.gen();
                let digits = gadget_decompose(x, params);
                for &d in &digits {
                    assert!(-half <= d && d <= half, "digit {d} out of range for {params:?}");
                }
                let back = gadget_recompose(&digits, params);
                let err = x.wrapping_sub(back) as i64;
                let bound = 1i64 << (shift - 1);
                assert!(
                    err.unsigned_abs() <= bound as u64,
                    "recomposition error {err} exceeds {bound} for {params:?}"
                );
            }
        }
    }

    #[test]
    fn gadget_exact_on_representable_values() {
        let params = GadgetParams::new(4, 6);
        for v in [0u64, 1, 7, 0xFF_FFFF, (1 << 24) - 1] {
            let x = v << 40;
            assert_eq!(gadget_recompose(&gadget_decompose(x, params), params), x);
        }
    }

    #[test]
    fn gaussian_sample_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 2.0f64.powi(-15);
        let n = 20_000usize;
        let mut sum_sq = 0.0f64;
        for _ in 0..n {
            let s = sample_gaussian(sigma, &mut rng) as i64 as f64;
            sum_sq += s * s;
        }
        let measured = (sum_sq / n as f64).sqrt() / 2.0f64.powi(64);
        assert!((measured / sigma - 1.0).abs() < 0.05, "sigma off: {measured:e}");
    }
}
