//! Negacyclic convolution through a half-size complex FFT.
//!
//! A real polynomial P in Z[X]/(X^N + 1) folds into the complex polynomial
//! F_j = P_j + i*P_{j+N/2} in C[X]/(X^{N/2} - i), because X^{N/2} acts like
//! the imaginary unit on the folded pair. Substituting X -> t*Y with
//! t = e^{i*pi/N} turns that quotient into a plain cyclic one, so one
//! M = N/2 point FFT per operand does the job: twist, transform, multiply
//! pointwise, transform back, untwist.
//!
//! The transform is a Stockham autosort FFT (no bit reversal, ping-pong
//! buffers) in decimation-in-frequency form, selectable between radix-2
//! and radix-4 passes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::torus::TorusWord;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct C64 {
    pub re: f64,
    pub im: f64,
}

impl C64 {
    #[inline(always)]
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    #[inline(always)]
    pub fn conj(self) -> Self {
        Self { re: self.re, im: -self.im }
    }

    #[inline(always)]
    pub fn scale(self, k: f64) -> Self {
        Self { re: self.re * k, im: self.im * k }
    }
}

impl std::ops::Add for C64 {
    type Output = C64;
    #[inline(always)]
    fn add(self, o: C64) -> C64 {
        C64::new(self.re + o.re, self.im + o.im)
    }
}

impl std::ops::Sub for C64 {
    type Output = C64;
    #[inline(always)]
    fn sub(self, o: C64) -> C64 {
        C64::new(self.re - o.re, self.im - o.im)
    }
}

impl std::ops::Mul for C64 {
    type Output = C64;
    #[inline(always)]
    fn mul(self, o: C64) -> C64 {
        C64::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl std::ops::AddAssign for C64 {
    #[inline(always)]
    fn add_assign(&mut self, o: C64) {
        self.re += o.re;
        self.im += o.im;
    }
}

/// Complex product with three real multiplications instead of four.
#[inline(always)]
pub fn complex_mul_karatsuba(x: C64, y: C64) -> C64 {
    let k1 = y.re * (x.re + x.im);
    let k2 = x.re * (y.im - y.re);
    let k3 = x.im * (y.re + y.im);
    C64::new(k1 - k3, k1 + k2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FftRadix {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "4")]
    Four,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FftConfig {
    pub radix: FftRadix,
    /// Use the 3-multiplication complex product in the pointwise stage.
    pub use_karatsuba: bool,
    /// Specialize the passes whose twiddle factors are all exactly 1. In
    /// this decimation-in-frequency arrangement those are the tail passes
    /// (length-2 for radix-2 plans, length-4 for radix-4 plans); the name
    /// follows the shared config schema.
    pub skip_trivial_first_passes: bool,
}

impl Default for FftConfig {
    fn default() -> Self {
        Self { radix: FftRadix::Four, use_karatsuba: true, skip_trivial_first_passes: true }
    }
}

impl FftConfig {
    /// All eight flag combinations, for equivalence tests and benches.
    pub fn all() -> Vec<FftConfig> {
        let mut v = Vec::new();
        for radix in [FftRadix::Two, FftRadix::Four] {
            for use_karatsuba in [false, true] {
                for skip in [false, true] {
                    v.push(FftConfig { radix, use_karatsuba, skip_trivial_first_passes: skip });
                }
            }
        }
        v
    }
}

/// Frequency-domain image of one negacyclic polynomial (N/2 points).
pub type FourierPoly = Vec<C64>;

/// Precomputed twist and twiddle factors for one polynomial degree.
pub struct TwistTable {
    n: usize,
    /// t_j = e^{i pi j / N}, j in 0..N/2.
    twist: Vec<C64>,
    /// w_k = e^{-2 pi i k / M}, k in 0..M (full circle, for radix-4 w^{3p}).
    twiddle: Vec<C64>,
}

impl TwistTable {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 8, "unsupported polynomial degree {n}");
        let m = n / 2;
        let twist = (0..m)
            .map(|j| {
                let (s, c) = (PI * j as f64 / n as f64).sin_cos();
                C64::new(c, s)
            })
            .collect();
        let twiddle = (0..m)
            .map(|k| {
                let (s, c) = (2.0 * PI * k as f64 / m as f64).sin_cos();
                C64::new(c, -s)
            })
            .collect();
        Self { n, twist, twiddle }
    }

    pub fn poly_degree(&self) -> usize {
        self.n
    }

    fn points(&self) -> usize {
        self.n / 2
    }

    #[inline(always)]
    fn tw(&self, idx: usize, inverse: bool) -> C64 {
        let w = self.twiddle[idx];
        if inverse {
            w.conj()
        } else {
            w
        }
    }

    /// In-place M-point DFT, natural order in and out. No 1/M scaling.
    fn dft(&self, data: &mut Vec<C64>, inverse: bool, cfg: &FftConfig) {
        let m = self.points();
        debug_assert_eq!(data.len(), m);
        let mut x = std::mem::take(data);
        let mut y = vec![C64::default(); m];

        let mut n = m;
        let mut s = 1usize;
        let radix4 = cfg.radix == FftRadix::Four;
        // A radix-4 plan over an odd power of two needs one radix-2 pass;
        // doing it first keeps every later pass radix-4.
        if radix4 && m.trailing_zeros() % 2 == 1 {
            self.pass_r2(&x, &mut y, n, s, inverse, cfg);
            std::mem::swap(&mut x, &mut y);
            n /= 2;
            s *= 2;
        }
        while n > 1 {
            if radix4 {
                self.pass_r4(&x, &mut y, n, s, inverse, cfg);
                n /= 4;
                s *= 4;
            } else {
                self.pass_r2(&x, &mut y, n, s, inverse, cfg);
                n /= 2;
                s *= 2;
            }
            std::mem::swap(&mut x, &mut y);
        }
        *data = x;
    }

    fn pass_r2(&self, x: &[C64], y: &mut [C64], n: usize, s: usize, inverse: bool, cfg: &FftConfig) {
        let h = n / 2;
        if n == 2 && cfg.skip_trivial_first_passes {
            for q in 0..s {
                let a = x[q];
                let b = x[q + s];
                y[q] = a + b;
                y[q + s] = a - b;
            }
            return;
        }
        let step = self.points() / n;
        for p in 0..h {
            let w = self.tw(p * step, inverse);
            for q in 0..s {
                let a = x[q + s * p];
                let b = x[q + s * (p + h)];
                y[q + s * 2 * p] = a + b;
                y[q + s * (2 * p + 1)] = (a - b) * w;
            }
        }
    }

    fn pass_r4(&self, x: &[C64], y: &mut [C64], n: usize, s: usize, inverse: bool, cfg: &FftConfig) {
        debug_assert!(n >= 4);
        let m4 = n / 4;
        if n == 4 && cfg.skip_trivial_first_passes {
            for q in 0..s {
                let (v0, v1, v2, v3) =
                    bf4(x[q], x[q + s], x[q + 2 * s], x[q + 3 * s], inverse);
                y[q] = v0;
                y[q + s] = v1;
                y[q + 2 * s] = v2;
                y[q + 3 * s] = v3;
            }
            return;
        }
        let step = self.points() / n;
        for p in 0..m4 {
            let w1 = self.tw(p * step, inverse);
            let w2 = self.tw(2 * p * step, inverse);
            let w3 = self.tw(3 * p * step, inverse);
            for q in 0..s {
                let (v0, v1, v2, v3) = bf4(
                    x[q + s * p],
                    x[q + s * (p + m4)],
                    x[q + s * (p + 2 * m4)],
                    x[q + s * (p + 3 * m4)],
                    inverse,
                );
                y[q + s * 4 * p] = v0;
                y[q + s * (4 * p + 1)] = v1 * w1;
                y[q + s * (4 * p + 2)] = v2 * w2;
                y[q + s * (4 * p + 3)] = v3 * w3;
            }
        }
    }

    /// Forward M-point complex DFT (kernel e^{-2 pi i / M}), natural order.
    pub fn forward_fft(&self, input: &[C64], cfg: &FftConfig) -> Vec<C64> {
        let mut data = input.to_vec();
        self.dft(&mut data, false, cfg);
        data
    }

    /// Inverse M-point DFT including the 1/M normalization.
    pub fn inverse_fft(&self, input: &[C64], cfg: &FftConfig) -> Vec<C64> {
        let mut data = input.to_vec();
        self.dft(&mut data, true, cfg);
        let k = 1.0 / self.points() as f64;
        for v in &mut data {
            *v = v.scale(k);
        }
        data
    }

    #[inline]
    fn fold_twist(&self, lo: impl Fn(usize) -> f64, hi: impl Fn(usize) -> f64) -> Vec<C64> {
        let m = self.points();
        (0..m).map(|j| C64::new(lo(j), hi(j)) * self.twist[j]).collect()
    }

    /// Folds, twists and transforms a torus polynomial (coefficients taken
    /// centered, i.e. reinterpreted as signed).
    pub fn forward_torus(&self, poly: &[TorusWord], cfg: &FftConfig) -> FourierPoly {
        debug_assert_eq!(poly.len(), self.n);
        let m = self.points();
        let mut data =
            self.fold_twist(|j| poly[j] as i64 as f64, |j| poly[j + m] as i64 as f64);
        self.dft(&mut data, false, cfg);
        data
    }

    pub fn forward_i64(&self, poly: &[i64], cfg: &FftConfig) -> FourierPoly {
        debug_assert_eq!(poly.len(), self.n);
        let m = self.points();
        let mut data = self.fold_twist(|j| poly[j] as f64, |j| poly[j + m] as f64);
        self.dft(&mut data, false, cfg);
        data
    }

    /// Inverse transform, untwist, and round each coefficient to the nearest
    /// residue mod 2^64. Rounding error feeds the noise budget; it is far
    /// below every key noise in the supported parameter sets.
    pub fn backward_torus_into(&self, mut four: FourierPoly, cfg: &FftConfig, out: &mut [TorusWord]) {
        debug_assert_eq!(out.len(), self.n);
        let m = self.points();
        self.dft(&mut four, true, cfg);
        let k = 1.0 / m as f64;
        for j in 0..m {
            let f = four[j] * self.twist[j].conj().scale(k);
            out[j] = f64_to_torus(f.re);
            out[j + m] = f64_to_torus(f.im);
        }
    }

    pub fn backward_torus(&self, four: FourierPoly, cfg: &FftConfig) -> Vec<TorusWord> {
        let mut out = vec![0u64; self.n];
        self.backward_torus_into(four, cfg, &mut out);
        out
    }

    /// Inverse transform and round to exact integers. Valid only in the
    /// exact-rounding regime (products whose true coefficients stay well
    /// inside the f64 mantissa).
    pub fn backward_i64(&self, mut four: FourierPoly, cfg: &FftConfig) -> Vec<i64> {
        let m = self.points();
        self.dft(&mut four, true, cfg);
        let k = 1.0 / m as f64;
        let mut out = vec![0i64; self.n];
        for j in 0..m {
            let f = four[j] * self.twist[j].conj().scale(k);
            out[j] = f.re.round() as i64;
            out[j + m] = f.im.round() as i64;
        }
        out
    }
}

#[inline(always)]
fn bf4(x0: C64, x1: C64, x2: C64, x3: C64, inverse: bool) -> (C64, C64, C64, C64) {
    let t0 = x0 + x2;
    let t1 = x0 - x2;
    let t2 = x1 + x3;
    let d = x1 - x3;
    // Forward kernel needs -i*(x1 - x3), inverse needs +i*(x1 - x3).
    let t3 = if inverse { C64::new(-d.im, d.re) } else { C64::new(d.im, -d.re) };
    (t0 + t2, t1 + t3, t0 - t2, t1 - t3)
}

#[inline]
fn f64_to_torus(x: f64) -> TorusWord {
    const TWO64: f64 = 18446744073709551616.0;
    // Reduce to a centered representative before the saturating cast; the
    // one representable edge case (exactly 2^63) lands one torus ulp off,
    // which is irrelevant at noise scale.
    let r = x - TWO64 * (x * (1.0 / TWO64)).round();
    r.round() as i64 as u64
}

/// acc[j] += a[j] * b[j], with the multiplication flavor picked by config.
pub fn fourier_mul_add(acc: &mut [C64], a: &[C64], b: &[C64], cfg: &FftConfig) {
    debug_assert_eq!(acc.len(), a.len());
    debug_assert_eq!(acc.len(), b.len());
    if cfg.use_karatsuba {
        for ((acc, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *acc += complex_mul_karatsuba(x, y);
        }
    } else {
        for ((acc, &x), &y) in acc.iter_mut().zip(a).zip(b) {
            *acc += x * y;
        }
    }
}

/// Exact negacyclic product of two integer polynomials, via the transform.
/// Caller guarantees the true product coefficients fit the exact-rounding
/// regime (|sum| comfortably below 2^53).
pub fn negacyclic_mul(a: &[i64], b: &[i64], table: &TwistTable, cfg: &FftConfig) -> Vec<i64> {
    let fa = table.forward_i64(a, cfg);
    let fb = table.forward_i64(b, cfg);
    let mut prod = vec![C64::default(); fa.len()];
    fourier_mul_add(&mut prod, &fa, &fb, cfg);
    table.backward_i64(prod, cfg)
}

/// Negacyclic product of a small integer polynomial with a torus polynomial,
/// rounded mod 2^64. This is the noise-regime path used by external products.
pub fn negacyclic_mul_torus(
    digits: &[i64],
    poly: &[TorusWord],
    table: &TwistTable,
    cfg: &FftConfig,
) -> Vec<TorusWord> {
    let fa = table.forward_i64(digits, cfg);
    let fb = table.forward_torus(poly, cfg);
    let mut prod = vec![C64::default(); fa.len()];
    fourier_mul_add(&mut prod, &fa, &fb, cfg);
    table.backward_torus(prod, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{negacyclic_monomial_mul, negacyclic_mul_schoolbook, negacyclic_mul_schoolbook_i128};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[C64], inverse: bool) -> Vec<C64> {
        let m = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..m)
            .map(|k| {
                let mut acc = C64::default();
                for (t, &v) in x.iter().enumerate() {
                    let ang = sign * 2.0 * PI * (t * k % m) as f64 / m as f64;
                    let (s, c) = ang.sin_cos();
                    acc += v * C64::new(c, s);
                }
                if inverse {
                    acc.scale(1.0 / m as f64)
                } else {
                    acc
                }
            })
            .collect()
    }

    fn random_complex(m: usize, rng: &mut impl Rng) -> Vec<C64> {
        (0..m).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
    }

    #[test]
    fn dft_matches_naive_for_all_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [8usize, 16, 64, 256] {
            let table = TwistTable::new(n);
            let x = random_complex(n / 2, &mut rng);
            let want = naive_dft(&x, false);
            let want_inv = naive_dft(&x, true);
            for cfg in FftConfig::all() {
                let got = table.forward_fft(&x, &cfg);
                let got_inv = table.inverse_fft(&x, &cfg);
                for (g, w) in got.iter().zip(&want).chain(got_inv.iter().zip(&want_inv)) {
                    assert!(
                        (g.re - w.re).abs() < 1e-9 && (g.im - w.im).abs() < 1e-9,
                        "cfg {cfg:?} n {n}: {g:?} vs {w:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let table = TwistTable::new(64);
        let x = random_complex(32, &mut rng);
        for cfg in FftConfig::all() {
            let back = table.inverse_fft(&table.forward_fft(&x, &cfg), &cfg);
            for (b, o) in back.iter().zip(&x) {
                assert!((b.re - o.re).abs() < 1e-12 && (b.im - o.im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn karatsuba_matches_plain_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let x = C64::new(rng.gen::<f64>() * 100.0 - 50.0, rng.gen::<f64>() * 100.0 - 50.0);
            let y = C64::new(rng.gen::<f64>() * 100.0 - 50.0, rng.gen::<f64>() * 100.0 - 50.0);
            let k = complex_mul_karatsuba(x, y);
            let p = x * y;
            assert!((k.re - p.re).abs() <= 1e-11 * p.re.abs().max(1.0));
            assert!((k.im - p.im).abs() <= 1e-11 * p.im.abs().max(1.0));
        }
        // Integer-valued inputs small enough for exact arithmetic agree bitwise.
        let x = C64::new(12345.0, -678.0);
        let y = C64::new(-42.0, 4096.0);
        assert_eq!(complex_mul_karatsuba(x, y), x * y);
    }

    #[test]
    fn exact_product_matches_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for n in [8usize, 256] {
            let table = TwistTable::new(n);
            let a: Vec<i64> = (0..n).map(|_| rng.gen_range(-(1 << 19)..(1 << 19))).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.gen_range(-(1 << 19)..(1 << 19))).collect();
            let want: Vec<i64> =
                negacyclic_mul_schoolbook_i128(&a, &b).iter().map(|&v| v as i64).collect();
            let mut results = Vec::new();
            for cfg in FftConfig::all() {
                let got = negacyclic_mul(&a, &b, &table, &cfg);
                assert_eq!(got, want, "cfg {cfg:?} n {n}");
                results.push(got);
            }
            // All configurations land on identical integers.
            assert!(results.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn twist_direction_turns_products_into_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 32;
        let table = TwistTable::new(n);
        let cfg = FftConfig::default();
        let a: Vec<i64> = (0..n).map(|_| rng.gen_range(-1000..1000)).collect();
        for e in [1usize, 5, n - 1, n + 3] {
            let mut mono = vec![0i64; n];
            if e < n {
                mono[e] = 1;
            } else {
                mono[e - n] = -1;
            }
            let got = negacyclic_mul(&a, &mono, &table, &cfg);
            let a_torus: Vec<u64> = a.iter().map(|&v| v as u64).collect();
            let mut want = vec![0u64; n];
            negacyclic_monomial_mul(&mut want, &a_torus, e);
            let want: Vec<i64> = want.iter().map(|&v| v as i64).collect();
            assert_eq!(got, want, "exponent {e}");
        }
    }

    #[test]
    fn torus_product_tracks_wrapping_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 256;
        let table = TwistTable::new(n);
        let digits: Vec<i64> = (0..n).map(|_| rng.gen_range(-256..=256)).collect();
        let poly: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        let digits_u: Vec<u64> = digits.iter().map(|&d| d as u64).collect();
        let want = negacyclic_mul_schoolbook(&digits_u, &poly);
        for cfg in FftConfig::all() {
            let got = negacyclic_mul_torus(&digits, &poly, &table, &cfg);
            for (g, w) in got.iter().zip(&want) {
                let err = g.wrapping_sub(*w) as i64;
                assert!(
                    err.unsigned_abs() < 1 << 28,
                    "transform error {err} too large under {cfg:?}"
                );
            }
        }
    }
}
