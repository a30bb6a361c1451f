use manipaug::augmenter::{augment_batch, augment_dataset, PreparedExample};
use manipaug::datamodel::{load_dataset, save_dataset};
use manipaug::report::{check_output, evaluate_batches, flatten_batches, RIGIDITY_TOLERANCE};
use manipaug::scenarios::default_bounds;
use manipaug::scenarios::planar::{generate_planar_dataset, planar_environment, PlanarGenConfig};
use manipaug::{AugmentConfig, EnvironmentSpec, Example, Scenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(n: usize, seed: u64) -> (Vec<Example>, EnvironmentSpec) {
    let cfg = PlanarGenConfig {
        examples: n,
        ..Default::default()
    };
    let env = planar_environment(&cfg);
    let data = generate_planar_dataset(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (data, env)
}

fn config(k: usize) -> AugmentConfig {
    AugmentConfig {
        k,
        ..AugmentConfig::new(Scenario::Planar, default_bounds(Scenario::Planar))
    }
}

#[test]
fn dataset_files_round_trip() {
    let (data, env) = fixture(3, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
    let env_path = dir.path().join("env.json");
    env.save(&env_path).unwrap();
    assert_eq!(EnvironmentSpec::load(&env_path).unwrap(), env);
}

#[test]
fn parallel_matches_serial() {
    let (data, env) = fixture(4, 3);
    let cfg = config(4);
    let serial = augment_dataset(&data, &env, &cfg, None, 11, 1).unwrap();
    let parallel = augment_dataset(&data, &env, &cfg, None, 11, 3).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn report_counts_match_batches() {
    let (data, env) = fixture(3, 4);
    let cfg = config(5);
    let batches = augment_dataset(&data, &env, &cfg, None, 1, 1).unwrap();
    let report = evaluate_batches(&data, &batches, &env, &cfg, 1).unwrap();
    let accepted: usize = batches.iter().map(|b| b.accepted()).sum();
    assert_eq!(report.augmentations, 15);
    assert_eq!(report.accepted, accepted);
    assert_eq!(report.rejections.values().sum::<usize>(), 15 - accepted);
    assert_eq!(report.fallback_mismatches, 0);
    let (outputs, records) = flatten_batches(&batches);
    assert_eq!(outputs.len(), records.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn accepted_outputs_keep_invariants(gen_seed in 0u64..1000, seed in any::<u64>()) {
        let (data, env) = fixture(1, gen_seed);
        let cfg = config(6);
        let batch = augment_batch(&data[0], 0, &env, &cfg, None, seed).unwrap();
        let prep = PreparedExample::new(&data[0], &env, &cfg).unwrap();
        for a in &batch.augmented {
            if a.accepted {
                let c = check_output(&data[0], &a.example, prep.moved(), prep.field()).unwrap();
                prop_assert!(c.occupancy);
                prop_assert!(c.bbox);
                prop_assert!(c.rigidity_error <= RIGIDITY_TOLERANCE);
                prop_assert_eq!(&a.example.label, &data[0].label);
                prop_assert!(cfg.objective.bounds.contains(&a.transform));
            } else {
                prop_assert_eq!(&a.example, &data[0]);
            }
        }
    }
}
