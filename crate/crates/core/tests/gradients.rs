mod common;

use common::{check_all_layers, check_full_model, REL_TOL};

#[test]
fn every_layer_passes_finite_differences() {
    for seed in 0..5 {
        for (name, err, n) in check_all_layers(seed) {
            assert!(n > 0, "{name}: no coordinate compared");
            assert!(err < REL_TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn full_model_passes_finite_differences() {
    for seed in 0..2 {
        let (err, n) = check_full_model(100 + seed, 4);
        assert!(n > 50, "only {n} coordinates compared");
        assert!(err < REL_TOL, "seed {seed}: relative error {err:e}");
    }
}
