//! Shared fixtures for the pipeline benchmarks.

use fairscore_core::{Scenario, SyntheticWorld};

/// A mid-sized skewed world, regenerated deterministically per run.
pub fn benchmark_world(contributors: u64) -> SyntheticWorld {
    Scenario::default_biased()
        .with_contributors(contributors)
        .generate()
        .expect("builtin scenario generates")
}
