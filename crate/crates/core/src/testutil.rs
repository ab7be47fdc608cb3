//! Shared fixtures for unit tests: one toy key bundle per process.

use std::sync::{Arc, OnceLock};

use crate::boot::EvalKeys;
use crate::fft::FftConfig;
use crate::keys::keygen;
use crate::params::ParameterSet;

pub const TOY_TEST_SEED: u64 = 7;

pub fn toy_keys_arc() -> Arc<EvalKeys> {
    static KEYS: OnceLock<Arc<EvalKeys>> = OnceLock::new();
    KEYS.get_or_init(|| {
        let bundle = keygen(&ParameterSet::toy(), TOY_TEST_SEED).expect("toy params are valid");
        Arc::new(EvalKeys::new(Arc::new(bundle), FftConfig::default()))
    })
    .clone()
}

pub fn toy_keys() -> &'static EvalKeys {
    static KEYS: OnceLock<Arc<EvalKeys>> = OnceLock::new();
    KEYS.get_or_init(toy_keys_arc)
}
