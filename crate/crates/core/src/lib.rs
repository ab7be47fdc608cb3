//! Torus FHE stack for high-precision encrypted nonlinear evaluation:
//! negacyclic polynomial arithmetic and FFT, the three-level bootstrapping
//! hierarchy (standard, multi-output and circuit bootstrapping), lookup
//! evaluation without padding via vertical packing, radix-4 fixed-point
//! arithmetic on encrypted blocks, and the nonlinear layers built on top
//! (exp, GELU, inverse square root, softmax, layer normalization), plus a
//! plaintext mirror engine with an analytic noise tracker.

pub mod batch;
pub mod boot;
pub mod cipher;
pub mod engine;
pub mod error;
pub mod fft;
pub mod fixed;
pub mod io;
pub mod keys;
pub mod layers;
pub mod mirror;
pub mod nonlin;
pub mod params;
pub mod poly;
pub mod torus;
pub mod wop;

#[cfg(test)]
pub(crate) mod testutil;

pub use batch::{split_plan, BatchPolicy, BatchRunner, KskSel, Request, Stats, StatsSnapshot};
pub use boot::{EvalKeys, TestPolynomial};
pub use cipher::{GgswCiphertext, GlweCiphertext, Level, LweCiphertext};
pub use engine::{BlockEngine, BlockLut, EncryptedEngine};
pub use error::{Error, Result};
pub use fft::{C64, FftConfig, FftRadix, FourierPoly, TwistTable};
pub use fixed::{FixedPoint, FixedPointCiphertext, FixedPointFormat, Signedness};
pub use keys::{keygen, KeyBundle};
pub use mirror::{mirror_eval, noise_track, MirrorEngine, MirrorValue, NoiseFlag, NoiseModel};
pub use params::{GadgetParams, KeySpec, ParameterSet};
pub use torus::TorusWord;
pub use wop::{extract_bits, wop_pbs, ExtractedBits, LookupTable};
