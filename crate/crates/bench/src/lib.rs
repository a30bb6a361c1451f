//! Shared fixtures for the benchmarks.

use manipaug::scenarios::default_bounds;
use manipaug::scenarios::planar::{generate_planar_dataset, planar_environment, PlanarGenConfig};
use manipaug::{AugmentConfig, EnvironmentSpec, Example, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Planar desk environment and `n` generated examples.
pub fn planar_fixture(n: usize) -> (Vec<Example>, EnvironmentSpec) {
    let cfg = PlanarGenConfig {
        examples: n,
        ..Default::default()
    };
    let env = planar_environment(&cfg);
    let data = generate_planar_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).expect("fixture generation");
    (data, env)
}

pub fn planar_config(k: usize) -> AugmentConfig {
    AugmentConfig {
        k,
        ..AugmentConfig::new(Scenario::Planar, default_bounds(Scenario::Planar))
    }
}
