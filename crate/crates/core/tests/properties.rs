mod common;

use common::random_spec;
use dynorm::zoo::{count_params, Network};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn count_params_matches_instantiated_elements(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let report = count_params(&spec).unwrap();
        let net = Network::new(&spec, seed).unwrap();
        prop_assert_eq!(report.params, net.trainable_elements());
        prop_assert_eq!(report.per_layer.iter().map(|l| l.params).sum::<usize>(), report.params);
    }

    #[test]
    fn spec_json_round_trips(seed in any::<u64>()) {
        let spec = random_spec(seed);
        let text = serde_json::to_string(&spec).unwrap();
        let back: dynorm::zoo::ModelSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, spec);
    }
}
