//! Shared fixtures for the criterion benchmarks in `benches/`.

use netmis_core::{simulate, SimConfig, SimDataset};

/// Baseline design dataset with `n` units.
pub fn fixture(n: usize, seed: u64) -> SimDataset {
    simulate(&SimConfig { n, seed, ..SimConfig::default() }).expect("baseline design simulates")
}
