//! Shared fixtures for the benchmarks.

use covbal_core::synth::{generate, Design};
use covbal_core::Dataset;

/// Confounded synthetic design of size `n` with a fixed seed.
pub fn fixture(n: usize) -> Dataset {
    generate(&Design::confounded(n, 2.0, 2024)).expect("synthetic design")
}
